"""
Токенизатор и небольшой трансформерный энкодер.

Энкодер добавляет [CLS] в начало последовательности и возвращает скрытое
состояние [CLS] на каждом слое (HiddenStack формы B x L x d_model):
строка 0 это выход эмбеддингов до первого блока, строки 1..L-1 это выходы
pre-LN блоков.
"""

import hashlib
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.core.autodiff import (
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Tensor,
    add,
    embed_lookup,
    gelu,
    matmul,
    reshape,
    scale,
    select,
    softmax,
    stack,
    transpose,
)
from app.core.config import EncoderConfig
from app.core.errors import ContractError, ShapeError, VocabError

logger = logging.getLogger(__name__)

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN = "[PAD]", "[UNK]", "[CLS]"
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN)

# Аддитивная маска для [PAD]; после softmax вес ровно 0
_MASK_VALUE = -1e9


class Vocabulary:
    """
    Словарь токен -> id с плотными id 0..V-1.

    Зарезервированы [PAD]=0, [UNK]=1, [CLS]=2. Остальные токены упорядочены
    по убыванию частоты, при равенстве лексикографически.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED_TOKENS:
            raise ContractError(f"Первые токены словаря должны быть {RESERVED_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ContractError("Словарь содержит повторяющиеся токены")
        self._tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 1) -> "Vocabulary":
        """Построить словарь по пробельной токенизации корпуса."""
        counts = Counter(tok for text in texts for tok in text.split())
        for tok in RESERVED_TOKENS:
            counts.pop(tok, None)
        ordered = sorted(
            (tok for tok, c in counts.items() if c >= min_freq),
            key=lambda tok: (-counts[tok], tok),
        )
        vocab = cls(list(RESERVED_TOKENS) + ordered)
        logger.info(f"Словарь построен: {len(vocab)} токенов (min_freq={min_freq})")
        return vocab

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> list:
        return list(self._tokens)

    def token_to_id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list:
        return [self.token_to_id(tok) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> list:
        tokens = []
        for i in ids:
            if not 0 <= i < len(self._tokens):
                raise VocabError(f"id {i} вне словаря размера {len(self)}")
            tokens.append(self._tokens[i])
        return tokens

    @property
    def hash(self) -> str:
        """sha256 от токенов в порядке id."""
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        """Один токен на строку, номер строки = id."""
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(lines)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> np.ndarray:
    """
    [CLS] + id токенов, обрезка до max_len, дополнение [PAD].

    Неизвестные токены отображаются в [UNK]; пустой текст даёт [CLS] + padding.
    """
    if max_len < 2:
        raise ContractError(f"max_len должен быть >= 2, получено {max_len}")
    ids = [CLS_ID] + vocab.encode(text.split())
    ids = ids[:max_len]
    ids += [PAD_ID] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def tokenize_batch(texts: Sequence[str], vocab: Vocabulary, max_len: int) -> np.ndarray:
    if not texts:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([tokenize(text, vocab, max_len) for text in texts])


class EncoderBlock(Module):
    """Pre-LN блок: x + Attn(LN(x)), затем x + FFN(LN(x))."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        d = config.d_model
        self.n_heads = config.n_heads
        self.ln_attn = LayerNorm(d)
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng)
        self.ln_ffn = LayerNorm(d)
        self.ffn_in = Linear(d, config.ffn_dim, rng)
        self.ffn_out = Linear(config.ffn_dim, d, rng)

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        head_dim = x.shape[-1] // self.n_heads
        return transpose(reshape(x, (batch, length, self.n_heads, head_dim)), (0, 2, 1, 3))

    def _attention(self, x: Tensor, mask: Tensor) -> Tensor:
        batch, length, d = x.shape
        q = self._split_heads(self.w_q(x), batch, length)
        k = self._split_heads(self.w_k(x), batch, length)
        v = self._split_heads(self.w_v(x), batch, length)
        head_dim = d // self.n_heads
        scores = add(scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim)), mask)
        weights = softmax(scores, axis=-1)
        context = transpose(matmul(weights, v), (0, 2, 1, 3))
        return self.w_o(reshape(context, (batch, length, d)))

    def __call__(self, x: Tensor, mask: Tensor) -> Tensor:
        x = add(x, self._attention(self.ln_attn(x), mask))
        return add(x, self.ffn_out(gelu(self.ffn_in(self.ln_ffn(x)))))


class TransformerEncoder(Module):
    """
    Трансформерный энкодер с обучаемыми позиционными эмбеддингами.

    Attributes:
        config: EncoderConfig.
        vocab_size: V.
    """

    def __init__(self, config: EncoderConfig, vocab_size: int, rng: np.random.Generator):
        self.config = config
        self.vocab_size = vocab_size
        d = config.d_model
        self.token_embedding = Parameter(rng.normal(0.0, 0.02, size=(vocab_size, d)))
        self.position_embedding = Parameter(rng.normal(0.0, 0.02, size=(config.max_len, d)))
        self.blocks = [EncoderBlock(config, rng) for _ in range(config.n_layers - 1)]

    def embed(self, ids: np.ndarray) -> Tensor:
        length = ids.shape[1]
        positions = embed_lookup(self.position_embedding, np.arange(length))
        return add(embed_lookup(self.token_embedding, ids), positions)

    def padding_mask(self, ids: np.ndarray) -> Tensor:
        mask = np.where(ids == PAD_ID, _MASK_VALUE, 0.0)
        return Tensor(mask[:, None, None, :])

    def encode(self, ids: np.ndarray) -> Tensor:
        """
        Прогнать батч id через энкодер.

        Args:
            ids: Целочисленный массив B x N, N <= max_len.

        Returns:
            Tensor B x L x d_model, [CLS] состояния всех слоёв.

        Raises:
            VocabError: id вне словаря.
            ShapeError: длина последовательности больше max_len.
        """
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ShapeError(f"Ожидался батч B x N, форма {ids.shape}")
        if ids.shape[1] > self.config.max_len:
            raise ShapeError(f"Длина {ids.shape[1]} больше max_len={self.config.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabError(f"id вне словаря размера {self.vocab_size}: max={ids.max()}")

        x = self.embed(ids)
        mask = self.padding_mask(ids)
        states = [select(x, 0, axis=1)]
        for block in self.blocks:
            x = block(x, mask)
            states.append(select(x, 0, axis=1))
        return stack(states, axis=1)

    __call__ = encode
