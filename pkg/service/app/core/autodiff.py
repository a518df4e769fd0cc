"""
Минимальный движок плотных тензоров с обратным автодифференцированием.

Операции, выполненные внутри `with Tape():`, записываются на ленту в
порядке выполнения (это и есть топологический порядок). `backward(loss)`
проходит ленту в обратном порядке ровно один раз и накапливает градиенты
в листовых тензорах с requires_grad. Вне ленты операции ничего не
записывают и работают как инференс.

Точность: float32 для обучения, float64 для проверки градиентов
конечными разностями (см. `default_dtype`).
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from app.core.errors import ContractError, NumericError, ShapeError, VocabError

logger = logging.getLogger(__name__)

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_local = threading.local()


# ============================================================================
# Точность
# ============================================================================

def get_default_dtype():
    """Текущий dtype для новых тензоров и параметров, свой у каждого потока."""
    return getattr(_local, "dtype", np.float32)


def set_default_dtype(dtype) -> None:
    resolved = np.dtype(dtype).type
    if resolved not in (np.float32, np.float64):
        raise ContractError(f"Поддерживаются только float32/float64, получено {dtype}")
    _local.dtype = resolved


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Временно переключить точность (например, float64 для gradcheck)."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


# ============================================================================
# Тензор и лента
# ============================================================================

class Tensor:
    """
    Плотный массив с опциональным градиентом.

    Attributes:
        data: np.ndarray значений.
        grad: Накопленный градиент той же формы или None.
        requires_grad: Участвует ли тензор в дифференцировании.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._entry: Optional["TapeEntry"] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out._entry = None
        out._tape = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() требует скаляр, форма {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # --- Операторы ---

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """Обучаемый параметр: лист с requires_grad=True."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


@dataclass
class TapeEntry:
    """Записанная операция: входы, выход и локальное правило обратного прохода."""

    kind: str
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """
    Лента вычислений (ComputationTape).

    Используется как контекстный менеджер; ленты вкладываются по стеку
    текущего потока. Одну ленту нельзя вести из двух потоков.
    """

    entries: list = field(default_factory=list)

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()


def _active_tape() -> Optional[Tape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(kind: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"{kind}: вход содержит NaN/Inf")


def _make(kind: str, data: np.ndarray, inputs: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    tape = _active_tape()
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    if requires:
        entry = TapeEntry(kind, tuple(inputs), out, backward_fn)
        tape.record(entry)
        out._entry = entry
        out._tape = tape
    return out


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: несовместимые формы {a.shape} и {b.shape}") from None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Свернуть градиент обратно к форме входа после broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ============================================================================
# Элементарные операции
# ============================================================================

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    _check_finite("add", a.data, b.data)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), backward_fn)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    _check_finite("sub", a.data, b.data)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), backward_fn)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    _check_finite("mul", a.data, b.data)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), backward_fn)


def scale(x: TensorLike, factor: float) -> Tensor:
    """Умножение на константу."""
    x = as_tensor(x)
    _check_finite("scale", x.data)
    factor = float(factor)

    def backward_fn(g):
        return (g * factor,)

    return _make("scale", x.data * factor, (x,), backward_fn)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Матричное произведение с broadcasting по батчевым осям (ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: несовместимые формы {a.shape} и {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: несовместимые формы {a.shape} и {b.shape}") from None
    _check_finite("matmul", a.data, b.data)

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", np.matmul(a.data, b.data), (a, b), backward_fn)


def exp(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    _check_finite("exp", x.data)
    out = np.exp(x.data)

    def backward_fn(g):
        return (g * out,)

    return _make("exp", out, (x,), backward_fn)


def tanh(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    _check_finite("tanh", x.data)
    out = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1.0 - out * out),)

    return _make("tanh", out, (x,), backward_fn)


def gelu(x: TensorLike) -> Tensor:
    """Точный GELU: x * Phi(x)."""
    x = as_tensor(x)
    _check_finite("gelu", x.data)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))
    out = x.data * cdf

    def backward_fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _make("gelu", out.astype(x.dtype, copy=False), (x,), backward_fn)


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_finite("softmax", x.data)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), backward_fn)


def logsumexp(x: TensorLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    _check_finite("logsumexp", x.data)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    weights = e / s

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _make("logsumexp", out if keepdims else np.squeeze(out, axis=axis), (x,), backward_fn)


def layernorm(x: TensorLike, gamma: TensorLike, beta: TensorLike, eps: float = 1e-5) -> Tensor:
    """LayerNorm по последней оси с аффинными gamma/beta формы [d]."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layernorm: вход {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    _check_finite("layernorm", x.data, gamma.data, beta.data)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward_fn(g):
        g_gamma = (g * xhat).reshape(-1, d).sum(axis=0)
        g_beta = g.reshape(-1, d).sum(axis=0)
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    return _make("layernorm", out, (x, gamma, beta), backward_fn)


def embed_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Выбор строк таблицы эмбеддингов по целочисленным идентификаторам."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError(f"embed_lookup: ожидались целые id, получено {ids.dtype}")
    vocab_size = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise VocabError(
            f"embed_lookup: id вне диапазона [0, {vocab_size}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    _check_finite("embed_lookup", table.data)

    def backward_fn(g):
        g_table = np.zeros_like(table.data)
        np.add.at(g_table, ids, g)
        return (g_table,)

    return _make("embed_lookup", table.data[ids], (table,), backward_fn)


def mse(pred: TensorLike, target: TensorLike) -> Tensor:
    """Средний квадрат ошибки по всем элементам."""
    pred, target = as_tensor(pred), as_tensor(target)
    _broadcast_shape("mse", pred, target)
    _check_finite("mse", pred.data, target.data)
    diff = pred.data - target.data
    n = diff.size

    def backward_fn(g):
        gd = g * 2.0 * diff / n
        return _unbroadcast(gd, pred.shape), _unbroadcast(-gd, target.shape)

    return _make("mse", np.asarray((diff * diff).mean(), dtype=diff.dtype), (pred, target), backward_fn)


def cross_entropy(logits: TensorLike, labels: np.ndarray) -> Tensor:
    """Кросс-энтропия, слитая с log-softmax; среднее по батчу."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"cross_entropy: метка вне диапазона [0, {n_classes})")
    _check_finite("cross_entropy", logits.data)
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    batch = logits.shape[0]
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def backward_fn(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _make("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward_fn)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: формы {[t.shape for t in tensors]}") from None
    _check_finite("concat", out)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make("concat", out, tensors, backward_fn)


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: формы {[t.shape for t in tensors]}") from None
    _check_finite("stack", out)

    def backward_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make("stack", out, tensors, backward_fn)


def tsum(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    _check_finite("sum", x.data)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward_fn)


def tmean(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: TensorLike, shape: tuple) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {x.shape} -> {shape}") from None

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _make("reshape", out, (x,), backward_fn)


def transpose(x: TensorLike, axes: tuple) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)

    def backward_fn(g):
        return (g.transpose(inverse),)

    return _make("transpose", x.data.transpose(axes), (x,), backward_fn)


def select(x: TensorLike, index: int, axis: int = 0) -> Tensor:
    """Взять один индекс по оси (ось удаляется)."""
    x = as_tensor(x)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        full[tuple(slicer)] = g
        return (full,)

    return _make("select", np.take(x.data, index, axis=axis), (x,), backward_fn)


_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "softmax": softmax,
    "layernorm": layernorm,
    "gelu": gelu,
    "tanh": tanh,
    "embed_lookup": embed_lookup,
    "logsumexp": logsumexp,
    "mse": mse,
    "cross_entropy": cross_entropy,
    "concat": lambda *tensors, axis=0: concat(tensors, axis=axis),
    "scale": scale,
    "sub": sub,
    "exp": exp,
    "sum": tsum,
    "mean": tmean,
    "reshape": reshape,
    "transpose": transpose,
    "select": select,
    "stack": lambda *tensors, axis=0: stack(tensors, axis=axis),
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """
    Выполнить примитив по имени.

    Args:
        kind: Имя операции (matmul, add, mul, softmax, layernorm, gelu, tanh,
            embed_lookup, logsumexp, mse, cross_entropy, concat, scale, ...).
        *inputs: Тензоры (и константы/индексы, где операция их принимает).
        **attrs: Атрибуты операции (axis, eps, ...).
    """
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ContractError(f"Неизвестная операция: {kind}") from None
    return fn(*inputs, **attrs)


# ============================================================================
# Обратный проход
# ============================================================================

def backward(loss: Tensor) -> None:
    """
    Обратный проход от скалярного loss.

    Градиенты накапливаются в .grad листовых тензоров с requires_grad;
    повторный вызов без zero_grad суммирует градиенты.

    Raises:
        ContractError: loss не скаляр или не записан на ленту.
        NumericError: получен нечисловой градиент.
    """
    if loss.size != 1:
        raise ContractError(f"backward требует скалярный loss, форма {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss не записан на ленту (вычисляйте внутри `with Tape():`)")

    grads: dict = {id(loss): np.ones_like(loss.data)}
    leaves: dict = {}
    for entry in reversed(loss._tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        input_grads = entry.backward_fn(g)
        for inp, ig in zip(entry.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if inp._entry is None:
                leaves[key] = inp
                if inp.grad is None:
                    inp.grad = np.array(ig, dtype=inp.dtype)
                else:
                    inp.grad = inp.grad + ig
            elif key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig

    for leaf in leaves.values():
        if not np.all(np.isfinite(leaf.grad)):
            raise NumericError(f"Нечисловой градиент у тензора формы {leaf.shape}")


# ============================================================================
# Модули и оптимизатор
# ============================================================================

class Module:
    """Контейнер параметров; обходит атрибуты-параметры, подмодули и их списки."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ContractError(
                f"Несовпадение параметров: отсутствуют {sorted(missing)}, лишние {sorted(unexpected)}"
            )
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: ожидалась форма {p.shape}, получено {value.shape}")
            p.data = np.array(value, dtype=p.dtype)


@dataclass
class OptimizerState:
    """Состояние AdamW: моменты по индексу параметра, счётчик шагов, гиперпараметры."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    no_decay: frozenset = frozenset()
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def adamw_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """
    Один шаг AdamW с коррекцией смещения и развязанным weight decay.

    Градиенты не изменяются. Параметры с индексами из state.no_decay не затухают.

    Raises:
        ContractError: у зарегистрированного параметра нет градиента.
    """
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ContractError(f"Нет градиента у параметров с индексами {missing}")

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for i, p in enumerate(params):
        g = p.grad
        m = state.exp_avg.get(i)
        if m is None:
            m = state.exp_avg[i] = np.zeros_like(p.data)
            state.exp_avg_sq[i] = np.zeros_like(p.data)
        v = state.exp_avg_sq[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay and i not in state.no_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


class AdamW:
    """Обёртка над adamw_step с фиксированным списком параметров."""

    def __init__(self, params: Sequence[Parameter], lr: float, weight_decay: float = 0.0,
                 no_decay: Sequence[Parameter] = ()):
        self.params = list(params)
        exempt = {id(p) for p in no_decay}
        self.state = OptimizerState(
            lr=lr,
            weight_decay=weight_decay,
            no_decay=frozenset(i for i, p in enumerate(self.params) if id(p) in exempt),
        )

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def step(self) -> None:
        adamw_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Linear(Module):
    """
    Аффинное отображение x @ W + b.

    Веса инициализируются равномерно в ±1/sqrt(fan_in), смещения нулями.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: TensorLike) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 1:
            x = reshape(x, (1, x.shape[0]))
        return add(matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: TensorLike) -> Tensor:
        return layernorm(x, self.gamma, self.beta, eps=self.eps)
