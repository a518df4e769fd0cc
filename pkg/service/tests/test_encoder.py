"""
Тестирование токенизатора и энкодера.

Сценарии тестирования:
1. Словарь: зарезервированные id, порядок, hash, сохранение/загрузка
2. tokenize: [CLS], [UNK], обрезка и дополнение
3. encode: форма B x L x d, детерминизм, VocabError
4. Маска [PAD] и инвариантность к длине дополнения
5. Градиент по эмбеддингам токенов
"""

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.autodiff import Tensor, forward_op, select
from app.core.config import EncoderConfig
from app.core.encoder import (
    CLS_ID,
    PAD_ID,
    UNK_ID,
    TransformerEncoder,
    Vocabulary,
    tokenize,
    tokenize_batch,
)
from app.core.errors import ContractError, ShapeError, VocabError
from tests.helpers import assert_gradcheck

TOY = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "a", "b"])


@pytest.fixture
def small_encoder(float64, rng):
    config = EncoderConfig(n_layers=3, d_model=8, n_heads=2, ffn_dim=16, max_len=64)
    return TransformerEncoder(config, vocab_size=len(TOY), rng=rng)


# ============================================================================
# Словарь и токенизация
# ============================================================================

def test_vocabulary_build_reserved_and_order():
    """Тест 1: [PAD]=0, [UNK]=1, [CLS]=2; далее по убыванию частоты, затем по алфавиту."""
    vocab = Vocabulary.build(["b a c", "a b", "a"])
    assert vocab.tokens == ["[PAD]", "[UNK]", "[CLS]", "a", "b", "c"]
    assert vocab.token_to_id("zzz") == UNK_ID
    assert vocab.decode(vocab.encode(["c", "a"])) == ["c", "a"]


def test_vocabulary_deterministic_hash(tmp_path):
    first = Vocabulary.build(["x y", "y z"])
    second = Vocabulary.build(["x y", "y z"])
    assert first.hash == second.hash

    path = tmp_path / "vocab.txt"
    first.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == first.tokens
    assert loaded.hash == first.hash


def test_vocabulary_decode_out_of_range():
    with pytest.raises(VocabError):
        TOY.decode([7])
    with pytest.raises(VocabError):
        TOY.decode([-1])


def test_tokenize_examples():
    """Тест 2: примеры токенизации."""
    np.testing.assert_array_equal(tokenize("a b", TOY, 4), [2, 3, 4, 0])
    np.testing.assert_array_equal(tokenize("", TOY, 3), [2, 0, 0])
    np.testing.assert_array_equal(tokenize("a z", TOY, 3), [2, 3, 1])


def test_tokenize_truncates():
    ids = tokenize("a b a b a b", TOY, 3)
    np.testing.assert_array_equal(ids, [CLS_ID, 3, 4])


def test_tokenize_requires_room_for_cls():
    with pytest.raises(ContractError):
        tokenize("a", TOY, 1)


def test_encoder_config_heads_must_divide():
    with pytest.raises(ValidationError):
        EncoderConfig(d_model=10, n_heads=4)
    with pytest.raises(ValidationError):
        EncoderConfig(n_layers=1)


# ============================================================================
# Энкодер
# ============================================================================

@pytest.mark.parametrize("n_layers", [2, 3, 5])
def test_encode_shape(float64, rng, n_layers):
    """Тест 3: ровно L строк на пример."""
    config = EncoderConfig(n_layers=n_layers, d_model=8, n_heads=2, ffn_dim=16, max_len=6)
    encoder = TransformerEncoder(config, vocab_size=len(TOY), rng=rng)
    ids = tokenize_batch(["a b", "b", "a a a"], TOY, 6)
    out = encoder.encode(ids)
    assert out.shape == (3, n_layers, 8)
    assert np.all(np.isfinite(out.data))


def test_encode_identical_inputs_identical_states(small_encoder):
    ids = tokenize_batch(["a b a", "a b a"], TOY, 8)
    out = small_encoder.encode(ids).data
    np.testing.assert_array_equal(out[0], out[1])


def test_encode_layer_zero_is_embedding_output(small_encoder):
    ids = tokenize_batch(["a b"], TOY, 8)
    out = small_encoder.encode(ids).data
    expected = small_encoder.token_embedding.data[CLS_ID] + small_encoder.position_embedding.data[0]
    np.testing.assert_allclose(out[0, 0], expected)


def test_encode_rejects_unknown_ids(small_encoder):
    with pytest.raises(VocabError):
        small_encoder.encode(np.array([[CLS_ID, len(TOY)]]))


def test_encode_rejects_too_long(small_encoder):
    with pytest.raises(ShapeError):
        small_encoder.encode(np.full((1, 65), CLS_ID))


def test_pad_embedding_does_not_leak(small_encoder, rng):
    """Тест 4: изменение эмбеддинга [PAD] не меняет состояния [CLS]."""
    ids = tokenize_batch(["a b", "b"], TOY, 8)
    before = small_encoder.encode(ids).data.copy()
    small_encoder.token_embedding.data[PAD_ID] += rng.normal(scale=5.0, size=8)
    small_encoder.position_embedding.data[5:] += rng.normal(scale=5.0, size=(59, 8))
    after = small_encoder.encode(ids).data
    np.testing.assert_allclose(after, before, atol=1e-6)


def test_padding_length_invariance(small_encoder):
    short = small_encoder.encode(tokenize_batch(["a b b a"], TOY, 32)).data
    long = small_encoder.encode(tokenize_batch(["a b b a"], TOY, 64)).data
    np.testing.assert_allclose(short, long, atol=1e-5)


def test_gradient_wrt_token_embeddings(float64, rng):
    """Тест 5: градиент скалярного считывания h^{L-1} по эмбеддингам токенов."""
    config = EncoderConfig(n_layers=2, d_model=8, n_heads=2, ffn_dim=16, max_len=5)
    encoder = TransformerEncoder(config, vocab_size=len(TOY), rng=rng)
    ids = tokenize_batch(["a b", "b a a"], TOY, 5)
    readout = Tensor(rng.normal(size=(2, 8)))

    def loss():
        last = select(encoder.encode(ids), config.n_layers - 1, axis=1)
        return forward_op("sum", forward_op("mul", last, readout))

    assert_gradcheck(loss, [encoder.token_embedding])
