"""
Метрики OOD-детекции: AUROC, FAR@95, AUPR (ID положительный класс,
OOD отрицательный) и точность ID-классификатора.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from app.core.errors import MetricError

logger = logging.getLogger(__name__)

TPR_TARGET_PERCENT = 95


@dataclass
class ScoredSet:
    """Пара массивов скоров: id_scores (позитивы) и ood_scores (негативы)."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64).ravel()
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if self.id_scores.size == 0 or self.ood_scores.size == 0:
            raise MetricError(
                f"Пустая сторона: ID={self.id_scores.size}, OOD={self.ood_scores.size}"
            )
        if not (np.all(np.isfinite(self.id_scores)) and np.all(np.isfinite(self.ood_scores))):
            raise MetricError("Скоры содержат NaN/Inf")


def auroc(scored: ScoredSet) -> float:
    """
    Ранговый AUROC (статистика Манна-Уитни), ничьи дают 1/2.

    Совпадает с долей пар (ID, OOD), где ID > OOD, плюс половина ничьих.
    """
    n_pos, n_neg = scored.id_scores.size, scored.ood_scores.size
    ranks = rankdata(np.concatenate([scored.id_scores, scored.ood_scores]), method="average")
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def far_at_95(scored: ScoredSet) -> float:
    """
    FPR при пороге с TPR >= 95%.

    Порог равен наибольшему tau с долей ID-скоров >= tau не менее 0.95, т.е.
    ceil(0.95 * n)-й по величине ID-скор; возвращается доля OOD >= tau.
    """
    n_pos = scored.id_scores.size
    needed = (TPR_TARGET_PERCENT * n_pos + 99) // 100
    threshold = np.sort(scored.id_scores)[::-1][needed - 1]
    return float(np.mean(scored.ood_scores >= threshold))


def aupr(scored: ScoredSet) -> float:
    """
    AUPR в форме average precision (ступенчато, без интерполяции).

    Примеры с равным скором образуют один блок с общей точностью на конце
    блока: AP = sum_blocks TP_block * precision_block / n_pos.
    """
    scores = np.concatenate([scored.id_scores, scored.ood_scores])
    is_pos = np.concatenate([
        np.ones(scored.id_scores.size, dtype=bool),
        np.zeros(scored.ood_scores.size, dtype=bool),
    ])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_pos = scores[order], is_pos[order]

    # Последний индекс каждого блока равных скоров
    block_ends = np.r_[np.flatnonzero(np.diff(scores) != 0), scores.size - 1]
    cum_tp = np.cumsum(is_pos)[block_ends]
    cum_count = block_ends + 1
    tp_in_block = np.diff(np.r_[0, cum_tp])
    precision = cum_tp / cum_count
    return float((tp_in_block * precision).sum() / scored.id_scores.size)


def id_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Доля совпадений argmax; при равенстве логитов выбирается меньший индекс класса."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise MetricError(f"id_accuracy: logits {logits.shape}, labels {labels.shape}")
    if labels.size == 0:
        raise MetricError("id_accuracy: пустой набор")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise MetricError("id_accuracy: метка вне диапазона")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def ood_metrics(id_scores: np.ndarray, ood_scores: np.ndarray) -> dict:
    """Все три метрики в долях [0, 1]."""
    scored = ScoredSet(id_scores, ood_scores)
    return {
        "auroc": auroc(scored),
        "far95": far_at_95(scored),
        "aupr": aupr(scored),
    }
