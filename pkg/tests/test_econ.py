import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deephybrid.econ import (
    EconReport,
    LatentDirection,
    econ_of_latent,
    econ_report,
    interpolate,
    market_share,
    prob_deriv_alt,
    prob_deriv_sd,
    prob_grad_latent,
    substitution,
    substitution_matrix,
    welfare,
)
from deephybrid.predictor import Head, PredictorModel, softmax
from oracles import derivative_cases, rel_err

utils = arrays(float, st.integers(2, 6), elements=st.floats(-50, 50))


def _joint(beta, ints=None):
    beta = np.asarray(beta, dtype=float)
    ints = np.zeros(len(beta)) if ints is None else np.asarray(ints, dtype=float)
    return PredictorModel(Head.JOINT_SHARES, beta, ints, 0.0)


def test_market_share_examples(rng):
    assert np.allclose(market_share([[0.2, 0.3, 0.5]]), [0.2, 0.3, 0.5])
    assert np.allclose(market_share(np.full((2, 4), 0.25)), 0.25)
    Pm = softmax(rng.normal(size=(100, 4)))
    oracle = [sum(Pm[n, k] for n in range(100)) / 100 for k in range(4)]
    assert np.allclose(market_share(Pm), oracle, atol=1e-15)
    assert np.allclose(market_share(Pm, normalized=False), np.array(oracle) * 100)
    with pytest.raises(ValueError):
        market_share(np.zeros((0, 4)))


def test_welfare_examples():
    assert welfare([2.0]) == 2.0
    assert welfare([0.0, 0.0]) == pytest.approx(np.log(2), abs=1e-15)
    mpmath.mp.dps = 50
    oracle = float(mpmath.log(mpmath.exp(1000) + mpmath.exp(1000)))
    assert welfare([1000.0, 1000.0]) == pytest.approx(oracle, abs=1e-12)
    assert welfare([0.0, 0.0], alpha=2.0) == pytest.approx(np.log(2) / 2)
    with pytest.raises(ValueError):
        welfare([1.0], alpha=0.0)


@given(utils, st.floats(-100, 100))
def test_welfare_shift(V, c):
    assert abs(welfare(V + c) - welfare(V) - c) <= 1e-12 * max(1.0, abs(welfare(V)) + abs(c))


def test_substitution_examples(rng):
    assert substitution(1.3, 1.3) == 1.0
    assert substitution(np.log(2), 0.0) == pytest.approx(2.0, rel=1e-15)
    V = rng.normal(size=4)
    p = np.exp(V) / np.exp(V).sum()
    assert np.allclose(substitution_matrix(V), p[:, None] / p[None, :], rtol=1e-12)


@given(utils)
def test_substitution_reciprocal(V):
    S = substitution_matrix(V)
    assert np.allclose(S * S.T, 1.0, rtol=1e-9, atol=0)
    assert np.all(np.diag(S) == 1.0)


def test_prob_grad_latent_examples(rng):
    m = _joint(rng.normal(size=(4, 3)))
    assert np.all(prob_grad_latent(m, rng.normal(size=3), np.zeros(3)) == 0)
    d = np.array([0.7, -0.3])
    m2 = _joint([d, [0.0, 0.0]])
    u = np.array([1.5, 2.0])
    g = prob_grad_latent(m2, np.zeros(2), u)
    assert np.allclose(g, [0.25 * u @ d, -0.25 * u @ d], atol=1e-15)
    with pytest.raises(ValueError):
        prob_grad_latent(m, np.zeros(3), np.zeros(2))


def test_prob_deriv_alt_examples():
    m = PredictorModel(Head.DISCRETE_CHOICE, np.zeros((2, 1)), np.zeros(2), 0.0,
                       beta_alt=np.array([2.0]))
    assert prob_deriv_alt(m, np.zeros(1), np.zeros((2, 1)), 0, 0) == pytest.approx(0.5)
    m1 = PredictorModel(Head.DISCRETE_CHOICE, np.zeros((1, 1)), np.zeros(1), 0.0,
                        beta_alt=np.array([2.0]))
    assert prob_deriv_alt(m1, np.zeros(1), np.zeros((1, 1)), 0, 0) == 0.0
    far = PredictorModel(Head.DISCRETE_CHOICE, np.zeros((2, 1)), np.array([0.0, -800.0]), 0.0,
                         beta_alt=np.array([2.0]))
    assert prob_deriv_alt(far, np.zeros(1), np.zeros((2, 1)), 1, 0) == 0.0


def test_prob_deriv_sd_examples(rng):
    same = PredictorModel(Head.DISCRETE_CHOICE, np.tile([[0.4, -1.0]], (3, 1)), rng.normal(size=3),
                          0.0, beta_alt=np.zeros(1))
    for k in range(3):
        assert abs(prob_deriv_sd(same, rng.normal(size=2), np.zeros((3, 1)), k, 1)) < 1e-15
    b = 1.2
    m = PredictorModel(Head.DISCRETE_CHOICE, np.array([[b], [-b]]), np.zeros(2), 0.0,
                       beta_alt=np.zeros(1))
    x = 0.3
    p = 1 / (1 + np.exp(-2 * b * x))
    assert prob_deriv_sd(m, np.array([x]), np.zeros((2, 1)), 0, 0) == pytest.approx(2 * b * p * (1 - p))


def test_derivatives_match_finite_differences():
    for name, ana, num, mass in derivative_cases(np.random.default_rng(1), n=20):
        assert rel_err(ana, num) < 1e-4, name
        if mass is not None:
            assert abs(mass) < 1e-10


def test_interpolate_examples(rng):
    zs, zc = rng.normal(size=5), rng.normal(size=5)
    d1 = LatentDirection.between(zs, zc)
    d2 = LatentDirection(rng.normal(size=5))
    assert np.array_equal(interpolate(zs, [d1, d2], [0, 0]), zs)
    assert np.allclose(interpolate(zs, [d1], [1.0]), zc, atol=1e-15)
    a = rng.normal(size=2)
    out = interpolate(zs, [d1, d2], a)
    for j in range(5):
        assert out[j] == pytest.approx(zs[j] + a[0] * d1.u[j] + a[1] * d2.u[j], abs=1e-14)
    with pytest.raises(ValueError):
        interpolate(zs, [d1], [1.0, 2.0])
    with pytest.raises(ValueError):
        interpolate(zs, [np.zeros(4)], [1.0])


def test_econ_report_consistency(rng):
    beta = rng.normal(size=(4, 3))
    beta[3] = 0
    m = _joint(beta, rng.normal(size=4))
    z = rng.normal(size=3)
    r = econ_report(m, z, alpha=1.0, direction=np.ones(3))
    from deephybrid.predictor import predict
    assert np.allclose(r.market_shares, predict(m, z)[0], atol=1e-15)
    assert abs(r.market_shares.sum() - 1) < 1e-9
    assert r.welfare == pytest.approx(welfare(r.utilities))
    with pytest.raises(ValueError):
        EconReport(np.array([0.5, 0.6]), 0.0, np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        econ_report(PredictorModel(Head.LINEAR_SHARES, beta, np.zeros(4), 0.0), z)


def test_econ_of_latent_requires_training(rng):
    from deephybrid.mixing import MixingModel
    m = _joint(np.zeros((4, 64)))
    with pytest.raises(ValueError):
        econ_of_latent(MixingModel(2), m, np.zeros(64))
    with pytest.raises(ValueError):
        econ_of_latent(MixingModel(1), m, np.zeros(64))
