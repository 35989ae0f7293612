import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deephybrid import predictor as P
from deephybrid.dataio import make_folds
from deephybrid.predictor import (
    Head,
    PredictorModel,
    choice_design,
    cross_entropy,
    evaluate,
    fit_choice,
    fit_joint_shares,
    fit_linear,
    kl_shares,
    lasso_saturation,
    linear_fit,
    predict,
    r2_score,
    softmax,
    sparsity_path,
)


def test_fit_linear_saturation(rng):
    Z = rng.normal(size=(50, 4))
    y = Z @ [1.0, -2.0, 0.0, 0.5] + rng.normal(size=50)
    m = fit_linear(Z, y, lasso_saturation(Z, y) * 1.0001)
    assert np.all(m.beta == 0)
    assert m.intercepts[0] == pytest.approx(y.mean(), abs=1e-12)
    m = fit_linear(Z, y, lasso_saturation(Z, y) * 0.9)
    assert np.count_nonzero(m.beta) >= 1


def test_fit_linear_ols_oracle(rng):
    Z = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    X = np.hstack([np.ones((30, 1)), Z])
    coef = np.linalg.solve(X.T @ X, X.T @ y)
    m = fit_linear(Z, y, 0.0)
    assert np.allclose(m.beta[0], coef[1:], atol=1e-6)
    assert m.intercepts[0] == pytest.approx(coef[0], abs=1e-6)


def test_fit_linear_noiseless_recovery(rng):
    Z = rng.normal(size=(200, 5))
    m = fit_linear(Z, Z[:, 0], 1e-6)
    assert 0.99 <= m.beta[0, 0] <= 1.0


def test_fit_linear_kkt(rng):
    """Subgradient optimality of the (1/2N) lasso objective."""
    Z = rng.normal(size=(80, 6))
    y = Z @ rng.normal(size=6) + rng.normal(size=80)
    theta = 0.1
    m = fit_linear(Z, y, theta, tol=1e-12)
    b = m.beta[0]
    r = y - m.intercepts[0] - Z @ b
    g = Z.T @ r / len(y)
    on = b != 0
    assert np.allclose(g[on], theta * np.sign(b[on]), atol=1e-6)
    assert np.all(np.abs(g[~on]) <= theta + 1e-6)
    assert abs(r.mean()) < 1e-10


def test_fit_linear_errors():
    with pytest.raises(ValueError):
        fit_linear(np.ones((1, 2)), np.ones(1), 0.1)
    with pytest.raises(ValueError):
        fit_linear(np.array([[np.nan], [1.0]]), np.ones(2), 0.1)
    with pytest.raises(ValueError):
        fit_linear(np.ones((3, 2)), np.ones(3), -1.0)


def test_kl_examples(rng):
    Pm = softmax(rng.normal(size=(10, 4)))
    assert kl_shares(Pm, Pm) == pytest.approx(0.0, abs=1e-14)
    uni = np.full_like(Pm, 0.25)
    oracle = np.mean(np.sum(Pm * np.log(4 * Pm), axis=1))
    assert kl_shares(Pm, uni) == pytest.approx(oracle, rel=1e-12)
    Pz = np.array([[1.0, 0.0, 0.0, 0.0]])
    assert kl_shares(Pz, uni[:1]) == pytest.approx(np.log(4))


def test_fit_joint_shares_zero_theta_and_errors(rng):
    Z = rng.normal(size=(60, 2))
    beta = np.array([[1.0, -0.5], [0.3, 0.8], [-0.7, 0.2], [0, 0]])
    Pm = softmax(Z @ beta.T + [0.2, -0.1, 0.4, 0])
    m = fit_joint_shares(Z, Pm, 0.0, tol=1e-10, max_iter=100000)
    assert np.allclose(m.beta, beta, atol=1e-3)
    assert np.all(m.beta[3] == 0)
    with pytest.raises(ValueError):
        fit_joint_shares(Z, Pm * 1.01, 0.0)


def test_fit_joint_shares_true_features(small_world):
    w = small_world
    m = fit_joint_shares(w.region_features, w.true_shares, 0.0, tol=1e-10, max_iter=200000)
    assert np.max(np.abs(m.beta - w.truth.share_beta)) < 0.05


def test_predict_examples(rng):
    m = PredictorModel(Head.JOINT_SHARES, np.zeros((4, 3)), np.zeros(4), 0.0, reference_mode=3)
    assert np.allclose(predict(m, rng.normal(size=(5, 3))), 0.25)
    one = PredictorModel(Head.JOINT_SHARES, np.zeros((1, 3)), np.zeros(1), 0.0)
    assert np.all(predict(one, rng.normal(size=(5, 3))) == 1.0)
    beta, ints = rng.normal(size=(4, 3)), rng.normal(size=4)
    beta[3] = 0
    m = PredictorModel(Head.JOINT_SHARES, beta, ints, 0.0, reference_mode=3)
    z = rng.normal(size=(6, 3))
    out = predict(m, z)
    for n in range(6):
        e = [np.exp(ints[k] + sum(beta[k, j] * z[n, j] for j in range(3))) for k in range(4)]
        assert np.allclose(out[n], np.array(e) / sum(e), atol=1e-12)
    assert np.all(out > 0) and np.allclose(out.sum(1), 1, atol=1e-12)


@given(st.lists(st.floats(-700, 700), min_size=2, max_size=6))
def test_softmax_rows_sum_to_one(v):
    p = softmax(np.array([v]))
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)


def test_reference_row_invariant():
    with pytest.raises(ValueError):
        PredictorModel(Head.JOINT_SHARES, np.ones((2, 2)), np.zeros(2), 0.0, reference_mode=1)
    with pytest.raises(ValueError):
        PredictorModel(Head.LINEAR_SHARES, np.ones((2, 2)), np.zeros(2), -0.1)


def test_model_json_roundtrip(rng):
    beta = rng.normal(size=(4, 3))
    beta[3] = 0
    m = PredictorModel(Head.DISCRETE_CHOICE, beta, rng.normal(size=4), 0.1, reference_mode=3,
                       beta_alt=rng.normal(size=2), blocks={"sd": (0, 3)})
    back = PredictorModel.from_json(m.to_json())
    assert np.array_equal(back.beta, m.beta) and np.array_equal(back.beta_alt, m.beta_alt)
    assert back.blocks == m.blocks and back.head is m.head


def test_r2_and_metrics_examples(rng):
    y = rng.normal(size=20)
    assert r2_score(y, np.full(20, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert r2_score(y, y) == 1.0
    Y = np.eye(4)[rng.integers(0, 4, 10)]
    assert cross_entropy(Y, Y) == 0.0
    # random predictor on balanced 4-mode data
    chosen = np.tile(np.arange(4), 2500)
    guess = rng.integers(0, 4, size=len(chosen))
    assert abs(np.mean(guess == chosen) - 0.25) < 0.03


def test_evaluate_perfect_linear(rng):
    Z = rng.normal(size=(40, 2))
    Pm = np.column_stack([0.3 + 0.01 * Z[:, 0], 0.2 + 0.01 * Z[:, 1], np.full(40, 0.3)])
    Pm = np.column_stack([Pm, 1 - Pm.sum(1)])
    folds = make_folds(list(range(40)), 4, 0)
    m = evaluate(linear_fit(0.0, modes=(0, 1)), (Z, Pm), folds)
    assert m.r2["auto"][1] == pytest.approx(1.0, abs=1e-10)
    assert m.r2["active"][0] == pytest.approx(1.0, abs=1e-10)


def _choice_world(rng, n=4000, k=4, d=3, a=2):
    from deephybrid.records import TripTable
    G = rng.normal(size=(n, d))
    xa = rng.normal(size=(n, k, a))
    beta = rng.normal(0, 0.7, size=(k, d))
    beta[-1] = 0
    ints = np.r_[rng.normal(0, 0.5, k - 1), 0]
    alt = np.array([-0.8, 0.5])
    probs = softmax(ints + G @ beta.T + xa @ alt)
    chosen = (rng.random(n)[:, None] > np.cumsum(probs, 1)).sum(1)
    trips = TripTable([str(i) for i in range(n)], np.zeros(n, int), np.zeros(n, int), G, xa,
                      np.minimum(chosen, k - 1), ["r"])
    return trips, beta, ints, alt


def test_fit_choice_recovers_alt(rng):
    trips, beta, ints, alt = _choice_world(rng)
    m = fit_choice(trips, None, 0.0)
    assert np.allclose(m.beta_alt, alt, atol=0.1)
    assert np.allclose(m.beta, beta, atol=0.2)
    assert m.converged


def test_fit_choice_large_theta_gives_frequencies(rng):
    trips, *_ = _choice_world(rng, n=1500)
    d = choice_design(trips)
    d.x_alt[:] = 0
    m = fit_choice(d, theta=10.0)
    assert np.all(m.beta == 0)
    freq = np.bincount(trips.chosen, minlength=4) / len(trips)
    assert np.allclose(predict(m, d.G, d.x_alt)[0], freq, atol=1e-4)


def test_fit_choice_uniform_predictor(rng):
    trips, *_ = _choice_world(rng, n=400)
    Pm = np.full((400, 4), 0.25)
    Y = np.eye(4)[trips.chosen]
    assert cross_entropy(Y, Pm) == pytest.approx(np.log(4))


def test_fit_choice_missing_mode_pinned(rng):
    trips, *_ = _choice_world(rng, n=600)
    trips.chosen[trips.chosen == 1] = 0
    with pytest.warns(RuntimeWarning):
        m = fit_choice(trips, None, 0.01)
    assert np.all(predict(m, trips.x_sd, trips.x_alt)[:, 1] < 1e-6)


def test_sparsity_path_monotone(rng):
    Z = rng.normal(size=(120, 8))
    Pm = softmax(Z[:, :3] @ rng.normal(size=(3, 4)))
    folds = make_folds(list(range(120)), 5, 0)
    sat = max(lasso_saturation(P.standardize(Z)[0], Pm[:, j]) for j in range(3))
    grid = [0.0, 1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 1.01 * sat]
    rows = sparsity_path(linear_fit, (Z, Pm), grid, folds, blocks={"a": (0, 4), "b": (4, 8)})
    counts = [sum(r["nonzero"].values()) for r in rows]
    assert counts[0] >= 23
    assert counts[-1] == 0
    assert sum(b > a for a, b in zip(counts, counts[1:])) <= 1
    assert set(rows[0]["nonzero"]) == {"a", "b"}
    assert P.test_score(rows[0]["metrics"]) == rows[0]["test_metric"]
