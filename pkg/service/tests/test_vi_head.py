"""
Тестирование вариационной головы.

Сценарии тестирования:
1. build_target: симметрия, предел one-hot, пересчёт вручную
2. Апостериорное q(z|x): репараметризация и Monte-Carlo среднее
3. KL к N(0, I): аналитические значения, Monte-Carlo, неотрицательность
4. Декодер и классификатор
5. vi_loss / baseline_loss: отжиг, разложение, граничные значения
6. Сквозная проверка градиентов joint-loss на крошечном конфиге
"""

import numpy as np
import pytest

from app.core.autodiff import Tape, Tensor, backward, cross_entropy
from app.core.config import VIHeadConfig
from app.core.encoder import Vocabulary, tokenize_batch
from app.core.errors import ContractError, ShapeError
from app.core.model import build_model
from app.core.vi_head import (
    CombinationVector,
    Decoder,
    DiscriminativeHead,
    GaussianPosterior,
    VariationalPosterior,
    VIHead,
    annealing_beta,
    baseline_loss,
    build_target,
    kl_to_standard_normal,
    reconstruction_error,
    vi_loss,
)
from tests.helpers import assert_gradcheck, tiny_run_config


def _head(rng, n_layers=3, d_model=6, **overrides) -> VIHead:
    values = {"d_z": 4, "decoder_hidden": 8, "n_classes": 3}
    values.update(overrides)
    return VIHead(VIHeadConfig(**values), n_layers=n_layers, d_model=d_model, rng=rng)


# ============================================================================
# build_target
# ============================================================================

def test_build_target_equal_weights(float64):
    """Тест 1: L=2, h0=[1,0], h1=[0,1], равные логиты -> [0.5, 0.5]."""
    s = CombinationVector(2)
    target = build_target(Tensor([[1.0, 0.0], [0.0, 1.0]]), s)
    np.testing.assert_allclose(target.data, [[0.5, 0.5]])


def test_build_target_one_hot_limit(float64, rng):
    s = CombinationVector(2)
    s.logits.data[:] = [20.0, -20.0]
    stack = rng.normal(size=(3, 2, 5))
    np.testing.assert_allclose(build_target(Tensor(stack), s).data, stack[:, 0], atol=1e-6)


def test_build_target_matches_recomputation(float64, rng):
    s = CombinationVector(4)
    s.logits.data[:] = rng.normal(size=4)
    stack = rng.normal(size=(5, 4, 3))
    weights = np.exp(s.logits.data) / np.exp(s.logits.data).sum()
    expected = np.einsum("l,bld->bd", weights, stack)
    np.testing.assert_allclose(build_target(Tensor(stack), s).data, expected, rtol=1e-12)
    np.testing.assert_allclose(s.weights_numpy(), weights, rtol=1e-12)


def test_build_target_length_mismatch(float64):
    with pytest.raises(ShapeError):
        build_target(Tensor(np.zeros((2, 3, 4))), CombinationVector(2))


def test_combination_weights_on_simplex(float64, rng):
    s = CombinationVector(6)
    s.logits.data[:] = rng.normal(scale=3.0, size=6)
    w = s.weights().data
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-6)


# ============================================================================
# Апостериорное распределение
# ============================================================================

def test_posterior_zero_noise_gives_mean(float64, rng):
    """Тест 2: eps = 0 -> z = mu."""
    post = GaussianPosterior(6, 4, rng)(Tensor(rng.normal(size=(3, 6))), noise=np.zeros((3, 4)))
    np.testing.assert_array_equal(post.z.data, post.mu.data)


def test_posterior_unit_variance_unit_noise(float64, rng):
    posterior = GaussianPosterior(6, 4, rng)
    posterior.logvar_map.weight.data[:] = 0.0
    post = posterior(Tensor(rng.normal(size=(2, 6))), noise=np.ones((2, 4)))
    np.testing.assert_allclose(post.logvar.data, 0.0)
    np.testing.assert_allclose(post.z.data, post.mu.data + 1.0)


def test_posterior_needs_noise_or_rng(float64, rng):
    with pytest.raises(ContractError):
        GaussianPosterior(6, 4, rng)(Tensor(np.zeros((1, 6))))


def test_posterior_sample_mean(float64, rng):
    posterior = GaussianPosterior(6, 4, rng)
    posterior.logvar_map.bias.data[:] = [-1.0, 0.0, 0.5, 1.0]
    n = 100_000
    hidden = np.tile(rng.normal(size=(1, 6)), (n, 1))
    post = posterior(Tensor(hidden), rng=np.random.default_rng(123))
    sigma = np.sqrt(post.variance[0])
    bound = 4.0 * sigma / np.sqrt(n)
    assert np.all(np.abs(post.z.data.mean(axis=0) - post.mu.data[0]) < bound)


# ============================================================================
# KL
# ============================================================================

def _posterior(mu, var) -> VariationalPosterior:
    mu, logvar = Tensor(np.atleast_2d(mu)), Tensor(np.log(np.atleast_2d(var)))
    return VariationalPosterior(mu=mu, logvar=logvar, z=mu)


def test_kl_analytic_values(float64):
    """Тест 3: KL(N(0, I) || N(0, I)) = 0; mu=[1], var=[1] -> 0.5."""
    assert kl_to_standard_normal(_posterior(np.zeros(4), np.ones(4))).item() == pytest.approx(0.0, abs=1e-15)
    assert kl_to_standard_normal(_posterior([1.0], [1.0])).item() == pytest.approx(0.5)


def test_kl_matches_monte_carlo(float64):
    rng = np.random.default_rng(2024)
    n_samples, chunk = 1_000_000, 200_000
    for _ in range(10):
        mu = rng.normal(size=4) + 0.5
        var = np.exp(rng.uniform(-1.0, 1.0, size=4))
        closed = kl_to_standard_normal(_posterior(mu, var)).item()

        total = 0.0
        for _ in range(n_samples // chunk):
            z = mu + np.sqrt(var) * rng.standard_normal((chunk, 4))
            log_q = -0.5 * (((z - mu) ** 2) / var + np.log(var)).sum(axis=1)
            log_p = -0.5 * (z ** 2).sum(axis=1)
            total += (log_q - log_p).sum()
        estimate = total / n_samples
        assert abs(estimate - closed) / closed < 0.01


def test_kl_nonnegative(float64):
    rng = np.random.default_rng(5)
    mu = rng.normal(scale=2.0, size=(10_000, 4))
    var = np.exp(rng.uniform(-3.0, 3.0, size=(10_000, 4)))
    values = [kl_to_standard_normal(_posterior(mu[i], var[i])).item() for i in range(10_000)]
    assert min(values) >= -1e-6


# ============================================================================
# Декодер и классификатор
# ============================================================================

def test_decoder_shape_and_determinism(float64, rng):
    """Тест 4: декодер детерминирован и выдаёт d_model."""
    decoder = Decoder(4, 8, 6, rng)
    z = Tensor(rng.normal(size=(2, 4)))
    first, second = decoder(z).data, decoder(z).data
    assert first.shape == (2, 6)
    np.testing.assert_array_equal(first, second)


def test_decoder_zero_final_layer_returns_bias(float64, rng):
    decoder = Decoder(4, 8, 6, rng)
    decoder.fc_out.weight.data[:] = 0.0
    decoder.fc_out.bias.data[:] = np.arange(6.0)
    out = decoder(Tensor(rng.normal(size=(3, 4)))).data
    np.testing.assert_array_equal(out, np.tile(np.arange(6.0), (3, 1)))


def test_classifier_zero_weights_uniform(float64, rng):
    head = _head(rng)
    head.classifier.weight.data[:] = 0.0
    logits = head.classify(Tensor(rng.normal(size=(2, 4))))
    assert logits.shape == (2, 3)
    probs = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, 1.0 / 3.0)


def test_cross_entropy_gradient_is_softmax_minus_onehot(float64, rng):
    logits = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    with Tape():
        backward(cross_entropy(logits, np.array([2])))
    probs = np.exp(logits.data) / np.exp(logits.data).sum()
    np.testing.assert_allclose(logits.grad, probs - np.array([[0.0, 0.0, 1.0]]), atol=1e-12)


# ============================================================================
# Функции потерь
# ============================================================================

def test_annealing_beta_monotone_and_clamped():
    """Тест 5: beta неубывающая и в [0, 1]."""
    values = [annealing_beta(step, 100, 0.5) for step in range(0, 150)]
    assert values[0] == 0.0
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert all(0.0 <= v <= 1.0 for v in values)
    assert annealing_beta(50, 100, 0.5) == 1.0
    assert annealing_beta(25, 100, 0.5) == 0.5


def test_vi_loss_step_zero_is_ce(float64, rng):
    head = _head(rng)
    stack = Tensor(rng.normal(size=(4, 3, 6)))
    labels = np.array([0, 1, 2, 1])
    breakdown = vi_loss(head, stack, labels, 0, 100, rng=np.random.default_rng(1))
    assert breakdown.beta == 0.0
    assert breakdown.total == breakdown.ce


def test_vi_loss_after_horizon_sums_terms(float64, rng):
    head = _head(rng)
    stack = Tensor(rng.normal(size=(4, 3, 6)))
    labels = np.array([0, 1, 2, 1])
    b = vi_loss(head, stack, labels, 80, 100, rng=np.random.default_rng(1))
    assert b.beta == 1.0
    assert b.total == pytest.approx(b.ce + b.recon + b.kl, rel=1e-12)
    assert b.kl >= -1e-6


def test_reconstruction_error_sums_features(float64, rng):
    pred, target = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    expected = np.mean(np.sum((pred - target) ** 2, axis=1))
    assert reconstruction_error(Tensor(pred), Tensor(target)).item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ShapeError):
        reconstruction_error(Tensor(pred), Tensor(target[:, :4]))


def test_vi_loss_recon_is_per_example(float64, rng):
    """recon: сумма по d_model, среднее по батчу, на той же шкале что и KL."""
    head = _head(rng)
    stack = Tensor(rng.normal(size=(4, 3, 6)))
    noise = np.zeros((4, 4))
    b = vi_loss(head, stack, np.array([0, 1, 2, 1]), 80, 100, noise=noise)

    post = head.posterior(Tensor(stack.data[:, -1, :]), noise=noise)
    decoded = head.decode(post.z).data
    target = build_target(stack, head.combination).data
    expected = np.mean(np.sum((decoded - target) ** 2, axis=1))
    assert b.recon == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("step", [0, 10, 33, 49, 50, 99])
def test_breakdown_recombines_exactly(float64, rng, step):
    head = _head(rng)
    stack = Tensor(rng.normal(size=(4, 3, 6)))
    b = vi_loss(head, stack, np.array([0, 1, 2, 0]), step, 100, rng=np.random.default_rng(step))
    assert b.total == b.ce + b.beta * (b.recon + b.kl)


def test_vi_loss_label_out_of_range(float64, rng):
    head = _head(rng)
    with pytest.raises(ContractError):
        vi_loss(head, Tensor(rng.normal(size=(1, 3, 6))), np.array([3]), 0, 10, rng=rng)


def test_baseline_loss_uniform_logits(float64, rng):
    head = DiscriminativeHead(2, 6, rng)
    head.classifier.weight.data[:] = 0.0
    loss = baseline_loss(head, Tensor(rng.normal(size=(3, 2, 6))), np.array([0, 1, 1]))
    assert loss.item() == pytest.approx(np.log(2.0))


def test_baseline_loss_decreases_with_margin(float64):
    head = DiscriminativeHead(2, 2, np.random.default_rng(0))
    head.classifier.weight.data[:] = np.eye(2)
    losses = []
    for margin in (5.0, 10.0, 20.0):
        stack = Tensor(np.array([[[0.0, 0.0], [margin, 0.0]]]))
        losses.append(baseline_loss(head, stack, np.array([0])).item())
    assert losses[0] > losses[1] > losses[2] > 0.0
    assert losses[2] < 1e-8


def test_baseline_matches_vi_ce_with_shared_weights(float64, rng):
    """Общие веса классификатора и z = h^{L-1}: CE совпадают."""
    d = 4
    vi = _head(rng, n_layers=2, d_model=d, d_z=d, n_classes=2)
    disc = DiscriminativeHead(2, d, rng)
    disc.classifier.weight.data = vi.classifier.weight.data.copy()
    disc.classifier.bias.data = vi.classifier.bias.data.copy()

    stack = Tensor(rng.normal(size=(5, 2, d)))
    labels = np.array([0, 1, 1, 0, 1])
    hidden = Tensor(stack.data[:, -1, :])
    vi_ce = cross_entropy(vi.classify(hidden), labels).item()
    assert baseline_loss(disc, stack, labels).item() == pytest.approx(vi_ce, rel=1e-12)


def test_beta_zero_gives_zero_decoder_and_s_grads(float64, rng):
    head = _head(rng)
    stack = Tensor(rng.normal(size=(4, 3, 6)), requires_grad=True)
    with Tape():
        total, _ = head.loss(stack, np.array([0, 1, 2, 0]), 0, 100, rng=np.random.default_rng(0))
        backward(total)
    for p in head.decoder.parameters() + head.combination.parameters():
        np.testing.assert_array_equal(p.grad, 0.0)


def test_discriminative_breakdown_zero_unsupervised_terms(float64, rng):
    head = DiscriminativeHead(2, 6, rng)
    _, b = head.loss(Tensor(rng.normal(size=(3, 3, 6))), np.array([0, 1, 0]))
    assert b.recon == 0.0 and b.kl == 0.0 and b.beta == 0.0
    assert b.total == b.ce


# ============================================================================
# Сквозные проверки
# ============================================================================

def _tiny_model(objective="joint"):
    config = tiny_run_config(objective=objective)
    vocab = Vocabulary.build(["good day", "bad night", "good night"])
    model = build_model(config, len(vocab), np.random.default_rng(11))
    ids = tokenize_batch(["good day", "bad night good", "night"], vocab, config.encoder.max_len)
    return config, model, ids


def test_joint_loss_gradients_all_groups(float64):
    """Тест 6: градиенты всех групп параметров joint-loss (L=2, d=8, d_z=4, K=2)."""
    config, model, ids = _tiny_model()
    labels = np.array([0, 1, 1])
    noise = np.random.default_rng(3).standard_normal((3, config.head.d_z))

    def loss():
        return model.loss(ids, labels, step=10, total_steps=10, noise=noise)[0]

    params = dict(model.named_parameters())
    groups = [
        "head.combination.logits",
        "head.posterior.mu_map.weight",
        "head.posterior.logvar_map.bias",
        "head.decoder.fc_in.weight",
        "head.decoder.fc_out.bias",
        "head.classifier.weight",
        "encoder.token_embedding",
        "encoder.blocks.0.w_q.weight",
    ]
    assert_gradcheck(loss, [params[name] for name in groups])


def test_joint_loss_reproducible_with_seed(float64):
    grads = []
    for _ in range(2):
        _, model, ids = _tiny_model()
        with Tape():
            total, _ = model.loss(ids, np.array([0, 1, 1]), 3, 10, rng=np.random.default_rng(42))
            backward(total)
        grads.append({name: p.grad.copy() for name, p in model.named_parameters()})
    for name in grads[0]:
        np.testing.assert_array_equal(grads[0][name], grads[1][name])
