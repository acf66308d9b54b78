import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npode import diffcore as dc
from npode.decoders import OdeSolverConfig
from npode.errors import ContractError, DomainError
from npode.model import ModelConfig, NpOdeModel
from npode.npmodel import (
    AttentionParams,
    EncoderParams,
    LatentDistribution,
    cross_attention,
    encode_deterministic,
    encode_stochastic,
    gaussian_log_likelihood,
    kl_divergence,
    sample_latent,
)
from npode.training import predict


def softplus(x):
    return np.log1p(np.exp(x))


def random_encoder(rng, n_in, width, layers=3, latent=None):
    Ws, bs, w = [], [], n_in
    for _ in range(layers):
        Ws.append(rng.normal(size=(w, width)) / math.sqrt(w))
        bs.append(rng.normal(size=width) * 0.1)
        w = width
    head = None
    if latent:
        head = (rng.normal(size=(width, 2 * latent)) / math.sqrt(width), rng.normal(size=2 * latent) * 0.1)
    return EncoderParams(Ws, bs, head=head)


def random_attention(rng, m, width, heads):
    def mat(a, b):
        return rng.normal(size=(a, b)) / math.sqrt(a)

    return AttentionParams(heads, mat(m, width), rng.normal(size=width) * 0.1,
                           mat(width, width), mat(width, width), mat(width, width), mat(width, width))


# ---------------------------------------------------------------- encoders


def test_deterministic_encoder_zero_weights_give_zero():
    params = EncoderParams([np.zeros((3, 4)), np.zeros((4, 4))], [np.zeros(4), np.zeros(4)])
    out = encode_deterministic(params, np.ones((5, 1)), np.ones((5, 2)))
    assert out.shape == (5, 4)
    assert np.all(out.value == 0)


def test_deterministic_encoder_identity_layer():
    params = EncoderParams([np.eye(3)], [np.zeros(3)], activation="linear")
    out = encode_deterministic(params, [[0.5]], [[-1.0, 2.0]])
    np.testing.assert_array_equal(out.value, [[0.5, -1.0, 2.0]])


def test_deterministic_encoder_matches_hand_unrolled_layers():
    rng = np.random.default_rng(3)
    params = random_encoder(rng, 3, 5, layers=2)
    x, y = rng.normal(size=(4, 1)), rng.normal(size=(4, 2))
    h = np.hstack([x, y]) @ params.weights[0] + params.biases[0]
    expected = np.maximum(h, 0) @ params.weights[1] + params.biases[1]
    np.testing.assert_allclose(encode_deterministic(params, x, y).value, expected, rtol=1e-13)


def test_encoders_reject_empty_context():
    params = random_encoder(np.random.default_rng(0), 2, 4, latent=2)
    with pytest.raises(ContractError):
        encode_deterministic(params, np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(ContractError):
        encode_stochastic(params, np.zeros((0, 1)), np.zeros((0, 1)))


def test_stochastic_encoder_hand_computation():
    W0 = np.array([[1.0, -1.0], [0.5, 2.0]])
    Wout = np.array([[1.0, 0.0], [0.0, 1.0]])
    params = EncoderParams([W0], [np.zeros(2)], head=(Wout, np.array([0.1, -0.2])))
    x, y = np.array([[1.0], [3.0]]), np.array([[2.0], [-2.0]])
    s = np.hstack([x, y]) @ W0
    agg = s.mean(axis=0) @ Wout + [0.1, -0.2]
    dist = encode_stochastic(params, x, y).numpy()
    np.testing.assert_allclose(dist.mean, agg[:1])
    np.testing.assert_allclose(dist.std, 0.01 + softplus(agg[1:]))


@pytest.mark.parametrize("k", [1, 2, 7])
def test_stochastic_encoder_duplicated_point(k):
    rng = np.random.default_rng(1)
    params = random_encoder(rng, 3, 6, latent=4)
    x, y = rng.normal(size=(1, 1)), rng.normal(size=(1, 2))
    ref = encode_stochastic(params, x, y).numpy()
    dup = encode_stochastic(params, np.repeat(x, k, 0), np.repeat(y, k, 0)).numpy()
    np.testing.assert_allclose(dup.mean, ref.mean, atol=1e-14)
    np.testing.assert_allclose(dup.std, ref.std, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_stochastic_encoder_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    params = random_encoder(rng, 3, 8, latent=4)
    x, y = rng.normal(size=(9, 1)), rng.normal(size=(9, 2))
    perm = rng.permutation(9)
    a = encode_stochastic(params, x, y).numpy()
    b = encode_stochastic(params, x[perm], y[perm]).numpy()
    assert np.max(np.abs(a.mean - b.mean)) < 1e-10
    assert np.max(np.abs(a.std - b.std)) < 1e-10


def test_stochastic_std_positive_under_extreme_weights():
    rng = np.random.default_rng(2)
    params = random_encoder(rng, 2, 4, latent=3)
    params.head = (params.head[0] * 1e3, params.head[1] - 1e3)
    dist = encode_stochastic(params, rng.normal(size=(5, 1)), rng.normal(size=(5, 1))).numpy()
    assert np.all(dist.std >= 0.01)


# ---------------------------------------------------------------- attention


def test_attention_single_key_returns_projected_value():
    rng = np.random.default_rng(4)
    att = random_attention(rng, 2, 8, 2)
    values = rng.normal(size=(1, 8))
    out = cross_attention(att, rng.normal(size=(1, 2)), values, rng.normal(size=(3, 2))).value
    expected = values @ att.Wv @ att.Wo
    np.testing.assert_allclose(out, np.repeat(expected, 3, 0), rtol=1e-12)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(5)
    att = random_attention(rng, 1, 8, 4)
    values = rng.normal(size=(6, 8))
    out = cross_attention(att, np.full((6, 1), 0.3), values, np.array([1.7])).value
    np.testing.assert_allclose(out, values.mean(0) @ att.Wv @ att.Wo, rtol=1e-12)


def test_attention_count_mismatch():
    rng = np.random.default_rng(6)
    att = random_attention(rng, 1, 4, 2)
    with pytest.raises(ContractError):
        cross_attention(att, np.zeros((3, 1)), np.zeros((2, 4)), np.zeros((1, 1)))


def test_attention_matches_per_head_loops():
    rng = np.random.default_rng(7)
    H, heads = 8, 2
    hd = H // heads
    att = random_attention(rng, 2, H, heads)
    keys, values, q = rng.normal(size=(5, 2)), rng.normal(size=(5, H)), rng.normal(size=(3, 2))
    qe = (q @ att.embed_W + att.embed_b) @ att.Wq
    ke = (keys @ att.embed_W + att.embed_b) @ att.Wk
    ve = values @ att.Wv
    merged = np.zeros((3, H))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        s = qe[:, sl] @ ke[:, sl].T / math.sqrt(hd)
        w = np.exp(s - s.max(1, keepdims=True))
        w /= w.sum(1, keepdims=True)
        merged[:, sl] = w @ ve[:, sl]
    np.testing.assert_allclose(cross_attention(att, keys, values, q).value, merged @ att.Wo, rtol=1e-11)


@pytest.mark.parametrize("seed", range(20))
def test_attention_joint_permutation_invariance(seed):
    rng = np.random.default_rng(100 + seed)
    att = random_attention(rng, 1, 8, 4)
    keys, values, q = rng.normal(size=(7, 1)), rng.normal(size=(7, 8)), rng.normal(size=(4, 1))
    perm = rng.permutation(7)
    a = cross_attention(att, keys, values, q).value
    b = cross_attention(att, keys[perm], values[perm], q).value
    assert np.max(np.abs(a - b)) < 1e-10


def test_predict_invariant_to_context_order():
    cfg = ModelConfig(1, 2, feature_width=8, latent_dim=4, num_heads=2, ode_channels=4,
                      solver=OdeSolverConfig(0, 0.2, 0.05))
    model = NpOdeModel.initialise(cfg, 0)
    rng = np.random.default_rng(0)
    x, y, xt = rng.normal(size=(8, 1)), rng.normal(size=(8, 2)), rng.normal(size=(5, 1))
    ref = predict(model, x, y, xt, rng=dc.make_rng(3))
    for _ in range(5):
        perm = rng.permutation(8)
        out = predict(model, x[perm], y[perm], xt, rng=dc.make_rng(3))
        assert np.max(np.abs(out.mean - ref.mean)) < 1e-10
        assert np.max(np.abs(out.std - ref.std)) < 1e-10


# ---------------------------------------------------------------- latent sampling and KL


def test_sample_latent_zero_std_returns_mean():
    dist = LatentDistribution(np.array([1.0, -2.0]), np.zeros(2))
    np.testing.assert_array_equal(sample_latent(dist, dc.make_rng(0)).value, [1.0, -2.0])


def test_sample_latent_determinism():
    dist = LatentDistribution(np.zeros(3), np.ones(3))
    rng = dc.make_rng(11)
    a, b = sample_latent(dist, rng).value, sample_latent(dist, rng).value
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, sample_latent(dist, dc.make_rng(11)).value)


def test_sample_latent_monte_carlo_mean():
    mean, std = np.array([0.5, -1.0, 3.0]), np.array([1.0, 0.2, 2.0])
    dist = LatentDistribution(mean, std)
    rng = dc.make_rng(0)
    draws = mean + std * rng.standard_normal((100_000, 3))  # same reparameterisation in bulk
    single = np.array([sample_latent(dist, dc.make_rng(i)).value for i in range(2000)])
    assert np.all(np.abs(draws.mean(0) - mean) < 3 * std / math.sqrt(100_000))
    assert np.all(np.abs(single.mean(0) - mean) < 4 * std / math.sqrt(2000))


def test_kl_zero_and_unit_shift():
    d = LatentDistribution(np.array([0.3, -0.1]), np.array([0.5, 2.0]))
    assert kl_divergence(d, d).value == 0.0
    post = LatentDistribution(np.array([1.0]), np.array([1.0]))
    prior = LatentDistribution(np.array([0.0]), np.array([1.0]))
    assert kl_divergence(post, prior).value == 0.5


def test_kl_rejects_non_positive_std():
    good = LatentDistribution(np.zeros(1), np.ones(1))
    with pytest.raises(DomainError):
        kl_divergence(LatentDistribution(np.zeros(1), np.zeros(1)), good)
    with pytest.raises(DomainError):
        kl_divergence(good, LatentDistribution(np.zeros(1), -np.ones(1)))


@pytest.mark.parametrize("seed", range(20))
def test_kl_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 5))
    mq, sq = rng.normal(size=dim), rng.uniform(0.3, 2.0, dim)
    mp, sp = rng.normal(size=dim), rng.uniform(0.3, 2.0, dim)
    closed = kl_divergence(LatentDistribution(mq, sq), LatentDistribution(mp, sp)).value
    z = mq + sq * rng.standard_normal((100_000, dim))

    def logq(z, m, s):
        return np.sum(-0.5 * ((z - m) / s) ** 2 - np.log(s) - 0.5 * math.log(2 * math.pi), axis=1)

    terms = logq(z, mq, sq) - logq(z, mp, sp)
    se = terms.std(ddof=1) / math.sqrt(len(terms))
    assert abs(terms.mean() - closed) < 3 * se + 1e-12


# ---------------------------------------------------------------- likelihood


def test_log_likelihood_standard_normal_at_zero():
    assert gaussian_log_likelihood([0.0], [0.0], [1.0]).value == pytest.approx(-0.918938533, abs=1e-9)


def test_log_likelihood_zero_residual():
    s = np.array([0.3, 2.0, 1.1])
    got = gaussian_log_likelihood(np.ones(3), np.ones(3), s).value
    assert got == pytest.approx(-np.sum(0.5 * math.log(2 * math.pi) + np.log(s)), rel=1e-14)


def test_log_likelihood_matches_density_quadrature():
    y, mu, s = 0.7, 0.2, 0.4
    h = 1e-5
    grid = np.linspace(y - h / 2, y + h / 2, 101)
    dens = np.exp(-0.5 * ((grid - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    mass = np.trapezoid(dens, grid) if hasattr(np, "trapezoid") else np.trapz(dens, grid)
    assert gaussian_log_likelihood([y], [mu], [s]).value == pytest.approx(math.log(mass / h), abs=1e-8)


def test_log_likelihood_rejects_non_positive_std():
    with pytest.raises(DomainError):
        gaussian_log_likelihood([0.0], [0.0], [0.0])
