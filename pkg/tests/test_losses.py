import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pairedit import losses as L
from pairedit.checks import LOSS_KINDS, gradient_rel_err, random_batch
from pairedit.netmodel import DenoiserParams, Linear, LoraAdapter, StackEntry, init_adapter, predict_noise
from pairedit.schedule import STANDARD, forward_noise
from pairedit.tensorcore import Rng
from pairedit.trainer import Adam


def _identity_base(dim: int) -> DenoiserParams:
    """One linear layer that returns the x part of its input."""
    W = np.concatenate([np.eye(dim), np.zeros((dim, 2))], axis=1)
    return DenoiserParams((Linear(W, np.zeros(dim)),), n_freq=1)


def _constant_base(dim: int, c: float) -> DenoiserParams:
    return DenoiserParams((Linear(np.zeros((dim, dim + 2)), np.full(dim, c)),), n_freq=1)


def test_semantic_target_examples():
    e = np.array([1.0, 1.0])
    assert np.array_equal(L.semantic_target(e, np.array([0.0, 1.0]), np.zeros(2), 3.0, 4.0), [3.0, 7.0])
    assert np.array_equal(L.semantic_target(np.zeros(2), np.array([1.0, 0.0]), np.zeros(2), 1.0, 4.0), [4.0, 0.0])
    x = np.array([0.2, -0.7])
    assert np.array_equal(L.semantic_target(e, x, x, 2.0, 4.0), 2.0 * e)
    with pytest.raises(ValueError):
        L.semantic_target(e, np.zeros(3), np.zeros(3), 1.0, 4.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 1000))
def test_semantic_target_is_linear_in_the_delta(alpha, seed):
    eps, x0A, x0B = Rng(seed).normal((3, 4))
    beta, eta = 1.5, 4.0
    lhs = L.semantic_target(eps, alpha * (x0A - x0B), np.zeros(4), beta, eta) - beta * eps
    rhs = alpha * (L.semantic_target(eps, x0A - x0B, np.zeros(4), beta, eta) - beta * eps)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_standard_target_weight_near_t1():
    dt = 1.0 / 28
    eps0, x0A, x0B = np.zeros((1, 2)), np.array([[1.0, 0.0]]), np.zeros((1, 2))
    tgt = L.standard_semantic_target(eps0, x0A, x0B, np.array([1.0]), 4.0, dt)
    # weight eta * dt ~ 0.143 * eta; first term eps0 - x0A = -1
    assert np.isclose(tgt[0, 0], -1.0 + 4.0 * dt, rtol=0, atol=1e-15)
    assert 4.0 * dt < 0.15 * 4.0


def test_mse_properties():
    t = Rng(0).normal((3, 4))
    assert L.mse(t, t)[0] == 0.0
    assert np.isclose(L.mse(t + 0.3, t)[0], 0.09, rtol=1e-12)
    assert L.mse(t + Rng(1).normal((3, 4)), t)[0] > 0.0


@pytest.mark.parametrize("sched", ["standard", "cp"])
def test_content_loss_constant_offset(sched):
    # zero data and noise make every target zero; the base predicts the constant c
    batch = L.PairedBatch(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)), 0.5)
    base = _constant_base(2, 0.25)
    ad = init_adapter(Rng(0), base, 1)
    loss, _ = L.content_loss(base, ad, batch, L.LossConfig(content_schedule=sched))
    assert np.isclose(loss, 0.0625, rtol=1e-12)
    loss0, _ = L.content_loss(_constant_base(2, 0.0), ad, batch, L.LossConfig(content_schedule=sched))
    assert loss0 == 0.0


def test_semantic_loss_closed_form():
    # at t = 1 with x0A = 0 the CP input is beta*eps0, which the identity base predicts exactly,
    # so the residual is the eta * (x0A - x0B) term alone
    r = Rng(3)
    x0B, eps0 = r.normal((2, 5, 3))
    x0A = np.zeros_like(x0B)
    cfg = L.LossConfig(beta=2.0, eta=4.0)
    base = _identity_base(3)
    content, sem = init_adapter(Rng(1), base, 1), init_adapter(Rng(2), base, 1)
    batch = L.PairedBatch(x0A, x0B, eps0, 1.0)
    loss, _ = L.semantic_loss(base, sem, batch, cfg, content=content)
    assert np.isclose(loss, 16.0 * np.mean((x0A - x0B) ** 2), rtol=1e-12)


def test_semantic_loss_degenerate_pairs_is_reconstruction(small_base, rand_adapter):
    r = Rng(5)
    x0, eps0 = r.normal((2, 4, 4))
    t = r.uniform((4,))
    cfg = L.LossConfig(beta=1.5)
    batch = L.PairedBatch(x0, x0, eps0, t)
    c, s = rand_adapter(1), rand_adapter(2)
    loss, _ = L.semantic_loss(small_base, s, batch, cfg, content=c)
    x_t = forward_noise(x0, eps0, t, cfg.semantic)
    pred = predict_noise(small_base, [StackEntry(c), StackEntry(s)], x_t, t)
    assert np.isclose(loss, np.mean((pred - 1.5 * eps0) ** 2), rtol=1e-12)


def test_semantic_step_leaves_content_bitwise_unchanged(small_base, rand_adapter):
    c, s = rand_adapter(1), init_adapter(Rng(2), small_base, 2)
    before = c.to_vector().tobytes()
    _, (dA, dB) = L.semantic_loss(small_base, s, random_batch(Rng(0), 4, 4), L.LossConfig(), content=c)
    Adam(s.params(), 0.01).step([*dA, *dB])
    assert c.to_vector().tobytes() == before
    # the gradient tuple covers only the semantic adapter's parameters
    assert [g.shape for g in (*dA, *dB)] == [p.shape for p in s.params()]


def test_joint_objective():
    assert L.joint_objective(0.3, 5.0, 0.0) == 0.3
    assert L.joint_objective(0.3, 0.2, 1.0) == 0.3 + 0.2
    assert L.joint_objective(1.0, 2.0, 0.5) == 2.0


def test_variant_a_noop_equals_twice_base_error(small_base):
    r = Rng(7)
    x0, eps0 = r.normal((2, 3, 4))
    t = r.uniform((3,))
    batch = L.PairedBatch(x0, x0, eps0, t)
    ad = init_adapter(Rng(1), small_base, 2)
    loss, _ = L.variant_a_loss(small_base, ad, batch, L.LossConfig())
    pred = predict_noise(small_base, [], forward_noise(x0, eps0, t, STANDARD), t)
    base_err = np.mean((pred - STANDARD.velocity(x0, eps0)) ** 2)
    assert np.isclose(loss, 2.0 * base_err, rtol=1e-12)


def test_variant_a_swap_symmetry(small_base, rand_adapter):
    batch = random_batch(Rng(4), 3, 4)
    ad = rand_adapter(3)
    flipped = LoraAdapter(ad.A, [-b for b in ad.B])
    swapped = L.PairedBatch(batch.x0B, batch.x0A, batch.eps0, batch.t)
    a, _ = L.variant_a_loss(small_base, ad, batch, L.LossConfig())
    b, _ = L.variant_a_loss(small_base, flipped, swapped, L.LossConfig())
    assert np.isclose(a, b, rtol=1e-12)


def test_variant_b_has_no_content_adapter(small_base, rand_adapter):
    batch = random_batch(Rng(4), 3, 4)
    s = rand_adapter(3)
    assert L.variant_b_loss(small_base, s, batch, L.LossConfig())[0] == \
        L.semantic_loss(small_base, s, batch, L.LossConfig(), content=None)[0]


def test_variant_c_uses_standard_path(small_base, rand_adapter):
    batch = random_batch(Rng(4), 3, 4)
    c, s = rand_adapter(1), rand_adapter(3)
    cfg = L.LossConfig()
    loss, _ = L.variant_c_loss(small_base, c, s, batch, cfg)
    x_t = forward_noise(batch.x0A, batch.eps0, batch.t, STANDARD)
    pred = predict_noise(small_base, [StackEntry(c), StackEntry(s)], x_t, batch.t)
    target = L.standard_semantic_target(batch.eps0, batch.x0A, batch.x0B, batch.t, cfg.eta, cfg.dt)
    assert np.isclose(loss, np.mean((pred - target) ** 2), rtol=1e-12)


@pytest.mark.parametrize("kind", LOSS_KINDS)
@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(kind, seed):
    assert gradient_rel_err(kind, seed) < 1e-4


def test_batch_validation():
    with pytest.raises(ValueError):
        L.PairedBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        L.PairedBatch(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), 0.5)
    with pytest.raises(ValueError):
        L.PairedBatch(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.array([0.1, 0.2, 0.3]))


def test_config_validation():
    for bad in (dict(eta=0.0), dict(lambda_sem=-1.0), dict(beta=0.0), dict(content_schedule="cosine")):
        with pytest.raises(ValueError):
            L.LossConfig(**bad)
