"""
Тестирование метрик OOD-детекции.

Сценарии тестирования:
1. Ручные примеры AUROC / FAR@95 / AUPR
2. Сверка с переборными оракулами на 120 случайных наборах с ничьими
3. Инвариантности: монотонное преобразование, перестановка, обмен сторон
4. Ошибки: пустая сторона, NaN
5. id_accuracy: правило ничьих и сверка с циклом
"""

import numpy as np
import pytest
from sklearn.metrics import average_precision_score, roc_auc_score

from app.core.errors import MetricError
from app.core.eval_metrics import (
    ScoredSet,
    aupr,
    auroc,
    far_at_95,
    id_accuracy,
    ood_metrics,
)


def _oracle_auroc(id_scores, ood_scores):
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in id_scores for b in ood_scores)
    return wins / (len(id_scores) * len(ood_scores))


def _oracle_far(id_scores, ood_scores):
    n = len(id_scores)
    admitted = [
        tau for tau in np.unique(np.concatenate([id_scores, ood_scores]))
        if 100 * np.sum(id_scores >= tau) >= 95 * n
    ]
    return float(np.mean(ood_scores >= max(admitted)))


def _oracle_aupr(id_scores, ood_scores):
    everything = np.concatenate([id_scores, ood_scores])
    total = 0.0
    for score in id_scores:
        above = everything >= score
        total += np.sum(id_scores >= score) / np.sum(above)
    return total / len(id_scores)


def _random_sets(n_sets=120, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_sets):
        n_id, n_ood = rng.integers(1, 201, size=2)
        # Целые скоры из узкого диапазона дают много ничьих
        high = int(rng.integers(2, 30))
        shift = int(rng.integers(0, 5))
        yield (
            rng.integers(0, high, size=n_id).astype(np.float64) + shift,
            rng.integers(0, high, size=n_ood).astype(np.float64),
        )


# ============================================================================
# Ручные примеры
# ============================================================================

def test_auroc_examples():
    """Тест 1: идеальное разделение, все равны, 3 из 4 пар."""
    assert auroc(ScoredSet([0.9, 0.8], [0.2, 0.1])) == 1.0
    assert auroc(ScoredSet([0.3, 0.3, 0.3], [0.3, 0.3])) == 0.5
    assert auroc(ScoredSet([0.9, 0.4], [0.5, 0.1])) == pytest.approx(0.75)


def test_far_examples():
    assert far_at_95(ScoredSet([0.9, 0.8, 0.7], [0.2, 0.1])) == 0.0
    assert far_at_95(ScoredSet([1.0, 1.0, 1.0], [1.0, 1.0])) == 1.0


def test_far_interleaved_sweep():
    id_scores = np.arange(40, dtype=np.float64)
    ood_scores = np.array([0.5, 1.5, 2.5, 3.5, 10.5, 20.5, 30.5, 38.5, 39.5, 45.0])
    # 38-й по величине ID-скор равен 2.0
    expected = np.mean(ood_scores >= 2.0)
    assert far_at_95(ScoredSet(id_scores, ood_scores)) == pytest.approx(expected)
    assert far_at_95(ScoredSet(id_scores, ood_scores)) == pytest.approx(
        _oracle_far(id_scores, ood_scores)
    )


def test_aupr_examples():
    assert aupr(ScoredSet([0.9, 0.8], [0.2, 0.1])) == 1.0
    assert aupr(ScoredSet([0.1], [0.9])) == pytest.approx(0.5)


def test_ood_metrics_bundle():
    metrics = ood_metrics(np.array([0.9, 0.4]), np.array([0.5, 0.1]))
    assert set(metrics) == {"auroc", "far95", "aupr"}
    assert metrics["auroc"] == pytest.approx(0.75)


# ============================================================================
# Оракулы
# ============================================================================

def test_metrics_match_brute_force_oracles():
    """Тест 2: ранговый AUROC, FAR и ступенчатый AUPR против переборных оракулов."""
    for id_scores, ood_scores in _random_sets():
        scored = ScoredSet(id_scores, ood_scores)
        assert auroc(scored) == _oracle_auroc(id_scores, ood_scores)
        assert far_at_95(scored) == _oracle_far(id_scores, ood_scores)
        assert abs(aupr(scored) - _oracle_aupr(id_scores, ood_scores)) <= 1e-12


def test_metrics_agree_with_sklearn():
    for id_scores, ood_scores in _random_sets(n_sets=40, seed=3):
        scored = ScoredSet(id_scores, ood_scores)
        y_true = np.r_[np.ones(id_scores.size), np.zeros(ood_scores.size)]
        y_score = np.r_[id_scores, ood_scores]
        assert auroc(scored) == pytest.approx(roc_auc_score(y_true, y_score), abs=1e-12)
        assert aupr(scored) == pytest.approx(average_precision_score(y_true, y_score), abs=1e-12)


def test_metric_ranges():
    for id_scores, ood_scores in _random_sets(n_sets=30, seed=1):
        metrics = ood_metrics(id_scores, ood_scores)
        assert 0.0 <= metrics["auroc"] <= 1.0
        assert 0.0 <= metrics["far95"] <= 1.0
        assert 0.0 < metrics["aupr"] <= 1.0


# ============================================================================
# Инвариантности
# ============================================================================

def test_auroc_monotone_transform_invariance(rng):
    """Тест 3: exp и аффинное преобразование с положительным наклоном."""
    id_scores, ood_scores = rng.normal(1.0, size=50), rng.normal(size=70)
    base = auroc(ScoredSet(id_scores, ood_scores))
    assert auroc(ScoredSet(np.exp(id_scores), np.exp(ood_scores))) == base
    assert auroc(ScoredSet(3.0 * id_scores - 2.0, 3.0 * ood_scores - 2.0)) == base


def test_auroc_swap_without_ties(rng):
    id_scores, ood_scores = rng.normal(0.5, size=40), rng.normal(size=60)
    forward = auroc(ScoredSet(id_scores, ood_scores))
    backward = auroc(ScoredSet(ood_scores, id_scores))
    assert backward == pytest.approx(1.0 - forward, abs=1e-12)


def test_permutation_invariance(rng):
    for id_scores, ood_scores in _random_sets(n_sets=20, seed=2):
        before = ood_metrics(id_scores, ood_scores)
        after = ood_metrics(rng.permutation(id_scores), rng.permutation(ood_scores))
        for name in before:
            assert after[name] == pytest.approx(before[name], abs=1e-12)


def test_far_weakly_decreases_when_ood_shifts_down(rng):
    id_scores, ood_scores = rng.normal(size=100), rng.normal(size=100)
    previous = far_at_95(ScoredSet(id_scores, ood_scores))
    for delta in (0.1, 0.5, 1.0, 3.0):
        current = far_at_95(ScoredSet(id_scores, ood_scores - delta))
        assert current <= previous
        previous = current


# ============================================================================
# Ошибки
# ============================================================================

def test_invalid_sets_raise():
    """Тест 4: пустая сторона и нечисловые скоры."""
    with pytest.raises(MetricError):
        ScoredSet([], [0.1])
    with pytest.raises(MetricError):
        ScoredSet([0.1], [])
    with pytest.raises(MetricError):
        ScoredSet([np.nan, 0.2], [0.1])
    with pytest.raises(MetricError):
        ood_metrics(np.array([0.1]), np.array([np.inf]))


# ============================================================================
# Точность
# ============================================================================

def test_id_accuracy_tie_rule():
    """Тест 5: равные логиты -> класс с меньшим индексом."""
    assert id_accuracy(np.zeros((5, 3)), np.zeros(5, dtype=int)) == 1.0
    assert id_accuracy(np.zeros((5, 3)), np.ones(5, dtype=int)) == 0.0
    assert id_accuracy(np.eye(3), np.arange(3)) == 1.0


def test_id_accuracy_matches_loop(rng):
    logits = rng.integers(0, 3, size=(200, 4)).astype(np.float64)
    labels = rng.integers(0, 4, size=200)
    hits = 0
    for row, label in zip(logits, labels):
        best = 0
        for k in range(1, row.size):
            if row[k] > row[best]:
                best = k
        hits += best == label
    assert id_accuracy(logits, labels) == hits / 200


def test_id_accuracy_errors():
    with pytest.raises(MetricError):
        id_accuracy(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(MetricError):
        id_accuracy(np.zeros((0, 2)), np.zeros(0, dtype=int))
