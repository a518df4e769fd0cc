"""
Общие утилиты тестов: проверка градиентов конечными разностями и
крошечные конфиги/наборы данных.
"""

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from app.core.autodiff import Tape, Tensor, backward
from app.core.config import EncoderConfig, RunConfig, VIHeadConfig

FD_STEP = 1e-4
RTOL = 1e-3
ATOL = 1e-5


def numeric_grad(fn: Callable[[], Tensor], tensor: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Центральные разности по каждому элементу tensor.data (вне ленты)."""
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    for idx in np.ndindex(tensor.shape):
        original = tensor.data[idx]
        tensor.data[idx] = original + h
        plus = fn().item()
        tensor.data[idx] = original - h
        minus = fn().item()
        tensor.data[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def analytic_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list:
    for t in tensors:
        t.grad = None
    with Tape():
        out = fn()
        backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def assert_gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                     rtol: float = RTOL, atol: float = ATOL) -> None:
    """Аналитический градиент совпадает с центральными разностями (float64)."""
    analytic = analytic_grads(fn, tensors)
    for i, (t, g) in enumerate(zip(tensors, analytic)):
        expected = numeric_grad(fn, t)
        np.testing.assert_allclose(g, expected, rtol=rtol, atol=atol, err_msg=f"тензор #{i} {t.shape}")


def tiny_run_config(**overrides) -> RunConfig:
    """L=2, d=8, d_z=4, K=2: конфиг для проверок градиентов и быстрых прогонов."""
    values = {
        "encoder": EncoderConfig(n_layers=2, d_model=8, n_heads=2, ffn_dim=16, max_len=8),
        "head": VIHeadConfig(d_z=4, decoder_hidden=8, n_classes=2),
        "epochs": 2,
        "batch_size": 8,
        "precision": "float64",
    }
    values.update(overrides)
    return RunConfig(**values)


def write_jsonl(path: Path, records: list) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path
