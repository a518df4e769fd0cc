"""
Вариационная голова: q(z|x), p(z), декодер p(x_target|z), классификатор p(y|z),
вектор комбинации слоёв s и отрицательный ELBO с линейным отжигом.

Цель обучения для объектива joint:
    total = CE(classify(z), y) + beta(step) * (SSE(decode(z), x_target) + KL(q(z|x) || N(0, I)))
где x_target = sum_l softmax(s)_l * h_CLS^l, а z есть один сэмпл репараметризации.
SSE суммируется по d_model и усредняется по батчу, так же как KL по d_z.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.autodiff import (
    Linear,
    Module,
    Parameter,
    Tensor,
    add,
    cross_entropy,
    exp,
    gelu,
    matmul,
    mse,
    mul,
    reshape,
    scale,
    select,
    softmax,
    sub,
    tmean,
    tsum,
)
from app.core.config import VIHeadConfig
from app.core.errors import ContractError, NumericError, ShapeError

logger = logging.getLogger(__name__)


# ============================================================================
# Типы
# ============================================================================

@dataclass
class VariationalPosterior:
    """Диагональная гауссиана q(z|x) и сэмпл z = mu + sigma * eps."""

    mu: Tensor
    logvar: Tensor
    z: Tensor

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.logvar.data)


@dataclass
class LossBreakdown:
    """
    Компоненты функции потерь одного шага.

    total = ce + beta * (recon + kl) ровно так, как вычислено на ленте.
    """

    total: float
    ce: float
    recon: float
    kl: float
    beta: float

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "ce": self.ce,
            "recon": self.recon,
            "kl": self.kl,
            "beta": self.beta,
        }


def annealing_beta(step: int, total_steps: int, anneal_fraction: float) -> float:
    """Линейный отжиг: min(1, step / (anneal_fraction * total_steps)), в [0, 1]."""
    horizon = anneal_fraction * total_steps
    if horizon <= 0:
        return 1.0
    return float(min(1.0, max(0.0, step / horizon)))


# ============================================================================
# Компоненты
# ============================================================================

class CombinationVector(Module):
    """Обучаемые логиты s длины L; веса = softmax(логиты)."""

    def __init__(self, n_layers: int):
        self.logits = Parameter(np.zeros(n_layers))

    def __len__(self) -> int:
        return self.logits.shape[0]

    def weights(self) -> Tensor:
        return softmax(self.logits, axis=-1)

    def weights_numpy(self) -> np.ndarray:
        w = np.exp(self.logits.data - self.logits.data.max())
        return w / w.sum()


def build_target(stack: Tensor, s: CombinationVector) -> Tensor:
    """
    x_target = sum_l h_CLS^l * s_l.

    Args:
        stack: HiddenStack B x L x d (или L x d для одного примера).
        s: Вектор комбинации длины L.

    Returns:
        Tensor B x d (или 1 x d).
    """
    if stack.ndim == 2:
        stack = reshape(stack, (1,) + stack.shape)
    if stack.ndim != 3 or stack.shape[1] != len(s):
        raise ShapeError(f"HiddenStack {stack.shape} не согласован с длиной s={len(s)}")
    weights = reshape(s.weights(), (1, 1, len(s)))
    combined = matmul(weights, stack)
    return reshape(combined, (stack.shape[0], stack.shape[2]))


def reconstruction_error(pred: Tensor, target: Tensor) -> Tensor:
    """
    -log p(x_target|z) с точностью до константы: сумма квадратов ошибки по признакам,
    среднее по батчу.
    """
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"reconstruction: {pred.shape} против {target.shape}")
    return scale(mse(pred, target), float(pred.shape[1]))


def kl_to_standard_normal(post: VariationalPosterior) -> Tensor:
    """
    KL(q(z|x) || N(0, I)) = 1/2 sum_i (mu_i^2 + sigma_i^2 - 1 - log sigma_i^2).

    Для батча возвращает среднее по примерам.
    """
    mu, logvar = post.mu, post.logvar
    per_dim = sub(add(mul(mu, mu), exp(logvar)), add(logvar, 1.0))
    per_example = tsum(per_dim, axis=-1)
    return scale(tmean(per_example), 0.5)


class GaussianPosterior(Module):
    """Две отдельные однослойные аффинные карты: h -> mu и h -> log sigma^2."""

    def __init__(self, d_model: int, d_z: int, rng: np.random.Generator):
        self.mu_map = Linear(d_model, d_z, rng)
        self.logvar_map = Linear(d_model, d_z, rng)

    def __call__(self, last_hidden: Tensor, noise: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None) -> VariationalPosterior:
        """
        Args:
            last_hidden: B x d_model.
            noise: Явный eps формы B x d_z (нули дают z = mu).
            rng: Генератор для eps, если noise не задан. Ровно один сэмпл на вход.
        """
        if not np.all(np.isfinite(last_hidden.data)):
            raise NumericError("posterior: вход содержит NaN/Inf")
        mu = self.mu_map(last_hidden)
        logvar = self.logvar_map(last_hidden)
        if noise is None:
            if rng is None:
                raise ContractError("posterior: нужен либо noise, либо rng")
            noise = rng.standard_normal(mu.shape)
        noise = np.asarray(noise, dtype=mu.dtype)
        if noise.shape != mu.shape:
            raise ShapeError(f"posterior: eps {noise.shape}, ожидалось {mu.shape}")
        sigma = exp(scale(logvar, 0.5))
        z = add(mu, mul(sigma, Tensor(noise, dtype=mu.dtype)))
        return VariationalPosterior(mu=mu, logvar=logvar, z=z)


class Decoder(Module):
    """Один feed-forward блок: d_z -> hidden -> GELU -> d_model."""

    def __init__(self, d_z: int, hidden: int, d_model: int, rng: np.random.Generator):
        self.fc_in = Linear(d_z, hidden, rng)
        self.fc_out = Linear(hidden, d_model, rng)

    def __call__(self, z: Tensor) -> Tensor:
        return self.fc_out(gelu(self.fc_in(z)))


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"Метки должны быть целыми, получено {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"Метка вне диапазона [0, {n_classes})")
    return labels


# ============================================================================
# Головы
# ============================================================================

class VIHead(Module):
    """
    Голова объектива joint.

    Attributes:
        combination: s, длина L.
        posterior: q(z|x) по h_CLS^{L-1}.
        decoder: p(x_target|z).
        classifier: p(y|z), однослойный.
    """

    def __init__(self, config: VIHeadConfig, n_layers: int, d_model: int,
                 rng: np.random.Generator):
        self.config = config
        self.combination = CombinationVector(n_layers)
        self.posterior = GaussianPosterior(d_model, config.d_z, rng)
        self.decoder = Decoder(config.d_z, config.decoder_hidden, d_model, rng)
        self.classifier = Linear(config.d_z, config.n_classes, rng)

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def classify(self, z: Tensor) -> Tensor:
        return self.classifier(z)

    def infer(self, stack: Tensor, noise: np.ndarray) -> VariationalPosterior:
        last_hidden = select(stack, stack.shape[1] - 1, axis=1)
        return self.posterior(last_hidden, noise=noise)

    def loss(self, stack: Tensor, labels: np.ndarray, step: int, total_steps: int,
             noise: Optional[np.ndarray] = None,
             rng: Optional[np.random.Generator] = None) -> tuple:
        """
        Отрицательный ELBO (vi_loss).

        Один сэмпл z используется и декодером, и классификатором.

        Returns:
            (total Tensor, LossBreakdown).

        Raises:
            ContractError: метка вне [0, K).
        """
        labels = _check_labels(labels, self.n_classes)
        if stack.shape[0] != labels.shape[0]:
            raise ShapeError(f"Батч {stack.shape[0]} не равен числу меток {labels.shape[0]}")
        beta = annealing_beta(step, total_steps, self.config.anneal_fraction)

        last_hidden = select(stack, stack.shape[1] - 1, axis=1)
        post = self.posterior(last_hidden, noise=noise, rng=rng)
        ce = cross_entropy(self.classify(post.z), labels)
        target = build_target(stack, self.combination)
        recon = reconstruction_error(self.decode(post.z), target)
        kl = kl_to_standard_normal(post)
        total = add(ce, scale(add(recon, kl), beta))

        breakdown = LossBreakdown(
            total=total.item(),
            ce=ce.item(),
            recon=recon.item(),
            kl=kl.item(),
            beta=beta,
        )
        return total, breakdown


class DiscriminativeHead(Module):
    """Голова объектива discriminative: линейный классификатор по h_CLS^{L-1}."""

    def __init__(self, n_classes: int, d_model: int, rng: np.random.Generator):
        self.n_classes = n_classes
        self.classifier = Linear(d_model, n_classes, rng)

    def classify(self, hidden: Tensor) -> Tensor:
        return self.classifier(hidden)

    def loss(self, stack: Tensor, labels: np.ndarray, step: int = 0, total_steps: int = 1,
             noise: Optional[np.ndarray] = None,
             rng: Optional[np.random.Generator] = None) -> tuple:
        """baseline_loss: кросс-энтропия без латента и декодера; recon = kl = 0."""
        labels = _check_labels(labels, self.n_classes)
        last_hidden = select(stack, stack.shape[1] - 1, axis=1)
        ce = cross_entropy(self.classify(last_hidden), labels)
        value = ce.item()
        return ce, LossBreakdown(total=value, ce=value, recon=0.0, kl=0.0, beta=0.0)


def vi_loss(head: VIHead, stack: Tensor, label, step: int, total_steps: int,
            noise: Optional[np.ndarray] = None,
            rng: Optional[np.random.Generator] = None) -> LossBreakdown:
    """Функциональная форма VIHead.loss, возвращает только разложение."""
    return head.loss(stack, label, step, total_steps, noise=noise, rng=rng)[1]


def baseline_loss(head: DiscriminativeHead, stack: Tensor, label) -> Tensor:
    """Функциональная форма кросс-энтропии дискриминативной головы."""
    return head.loss(stack, label)[0]
