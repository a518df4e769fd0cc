"""
Post-hoc функции уверенности для OOD-детекции.

Ориентация единая для всех функций: больший скор => более ID-подобный вход.
- maha:   -min_k (z - mu_k)^T Sigma^-1 (z - mu_k), общая Sigma
- msp:    max_y softmax(logits)_y
- energy: logsumexp(logits)
- cosine: max_i cos(z, z_i^val)

Дистанционные скоры считаются по латенту z (или h_CLS^{L-1} для
дискриминативной модели), логитные по логитам классификатора.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp, softmax

from app.core.config import SCORE_FUNCTIONS
from app.core.errors import FitError, ScoreError

logger = logging.getLogger(__name__)

SHRINKAGE_SCALE = 1e-6
SHRINKAGE_CAP = 1e-2


# ============================================================================
# Банки
# ============================================================================

@dataclass
class GaussianBank:
    """
    Классовые средние и общая ковариация для Mahalanobis.

    Attributes:
        means: K x d.
        covariance: d x d, уже с добавленным shrinkage * I.
        precision: Обратная к covariance.
        shrinkage: Использованный eps.
    """

    means: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    shrinkage: float

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class ValidationBank:
    """Нормированные по L2 латенты валидационной выборки (V x d)."""

    latents: np.ndarray

    def __len__(self) -> int:
        return self.latents.shape[0]


def fit_gaussian_bank(latents: np.ndarray, labels: np.ndarray,
                      n_classes: Optional[int] = None) -> GaussianBank:
    """
    Оценить классовые средние и общую (pooled) ковариацию.

    Sigma = 1/N sum_k sum_{i in k} (z_i - mu_k)(z_i - mu_k)^T + eps * I,
    eps начинается с 1e-6 * trace(Sigma) / d и умножается на 10, пока
    разложение Холецкого не пройдёт (но не выше 1e-2).

    Raises:
        FitError: в классе меньше 2 примеров или Sigma вырождена.
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if latents.ndim != 2 or labels.shape != (latents.shape[0],):
        raise FitError(f"Ожидались латенты N x d и N меток, получено {latents.shape}, {labels.shape}")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 1:
        raise FitError("Нет классов для оценки")

    n, d = latents.shape
    means = np.zeros((n_classes, d))
    scatter = np.zeros((d, d))
    for k in range(n_classes):
        members = latents[labels == k]
        if members.shape[0] < 2:
            raise FitError(f"В классе {k} {members.shape[0]} примеров, нужно минимум 2")
        means[k] = members.mean(axis=0)
        centered = members - means[k]
        scatter += centered.T @ centered
    pooled = scatter / n
    pooled = 0.5 * (pooled + pooled.T)

    trace = float(np.trace(pooled))
    eps = SHRINKAGE_SCALE * trace / d if trace > 0 else SHRINKAGE_SCALE
    while True:
        covariance = pooled + eps * np.eye(d)
        try:
            factor = cho_factor(covariance, lower=True)
            break
        except LinAlgError:
            if eps >= SHRINKAGE_CAP:
                raise FitError(f"Ковариация вырождена даже при shrinkage={eps:g}") from None
            eps = min(eps * 10.0, SHRINKAGE_CAP)
            logger.warning(f"Холецкий не прошёл, увеличиваю shrinkage до {eps:g}")

    precision = cho_solve(factor, np.eye(d))
    precision = 0.5 * (precision + precision.T)
    logger.debug(f"GaussianBank: K={n_classes}, d={d}, shrinkage={eps:g}")
    return GaussianBank(means=means, covariance=covariance, precision=precision, shrinkage=eps)


def build_validation_bank(latents: np.ndarray, cap: int = 5000,
                          seed: int = 0) -> ValidationBank:
    """
    Сохранить нормированные валидационные латенты.

    Нулевые строки отбрасываются; при V > cap берётся подвыборка по seed.

    Raises:
        FitError: не осталось ни одной строки.
    """
    latents = np.asarray(latents, dtype=np.float64)
    norms = np.linalg.norm(latents, axis=1)
    keep = norms > 0
    if not keep.all():
        logger.warning(f"ValidationBank: отброшено {int((~keep).sum())} нулевых латентов")
    latents, norms = latents[keep], norms[keep]
    if latents.shape[0] == 0:
        raise FitError("ValidationBank пуст")
    if latents.shape[0] > cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(latents.shape[0], size=cap, replace=False))
        latents, norms = latents[idx], norms[idx]
    return ValidationBank(latents=latents / norms[:, None])


# ============================================================================
# Функции уверенности
# ============================================================================

def mahalanobis_distances(z: np.ndarray, bank: GaussianBank) -> np.ndarray:
    """Квадратичные формы MD_k(z) для всех классов: M x K."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    diff = z[:, None, :] - bank.means[None, :, :]
    return np.einsum("mkd,de,mke->mk", diff, bank.precision, diff)


def maha_score(z: np.ndarray, bank: GaussianBank) -> np.ndarray:
    """-min_k MD_k(z). Для одного вектора возвращает скаляр."""
    scores = -mahalanobis_distances(z, bank).min(axis=1)
    return scores[0] if np.ndim(z) == 1 else scores


def msp_score(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    return softmax(logits, axis=-1).max(axis=-1)


def energy_score(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    return logsumexp(logits, axis=-1)


def cosine_similarities(z: np.ndarray, bank: ValidationBank) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise ScoreError("cosine: латент с нулевой нормой")
    return (z / norms[:, None]) @ bank.latents.T


def cosine_score(z: np.ndarray, bank: ValidationBank) -> np.ndarray:
    """
    max_i cos(z, z_i^val).

    Ориентация +max (больше => ID); в DEBUG логируется и -max для сверки.
    """
    if len(bank) == 0:
        raise ScoreError("cosine: пустой ValidationBank")
    scores = cosine_similarities(z, bank).max(axis=1)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            f"cosine: +max mean={scores.mean():.6f}, -max mean={-scores.mean():.6f}"
        )
    return scores[0] if np.ndim(z) == 1 else scores


@dataclass
class ScoreRecord:
    """Скоры набора примеров по включённым функциям (больше => ID)."""

    scores: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.scores[name]

    @property
    def functions(self) -> list:
        return list(self.scores)


def compute_scores(latents: np.ndarray, logits: np.ndarray,
                   gaussian_bank: Optional[GaussianBank],
                   validation_bank: Optional[ValidationBank],
                   functions: Iterable[str] = SCORE_FUNCTIONS) -> ScoreRecord:
    """
    Посчитать все включённые функции для набора.

    Raises:
        ScoreError: неизвестная функция, нет нужного банка или нечисловой скор.
    """
    record = ScoreRecord()
    for name in functions:
        if name == "msp":
            values = msp_score(logits)
        elif name == "energy":
            values = energy_score(logits)
        elif name == "maha":
            if gaussian_bank is None:
                raise ScoreError("maha: GaussianBank не построен")
            values = maha_score(np.atleast_2d(latents), gaussian_bank)
        elif name == "cosine":
            if validation_bank is None:
                raise ScoreError("cosine: ValidationBank не построен")
            values = cosine_score(np.atleast_2d(latents), validation_bank)
        else:
            raise ScoreError(f"Неизвестная функция скоринга: {name}")
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if not np.all(np.isfinite(values)):
            raise ScoreError(f"{name}: нечисловые скоры")
        record.scores[name] = values
    return record
