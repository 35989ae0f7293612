"""Generalized-linear behavioral predictors with L1 sparsity.

Three heads share ``y = link(beta' z)``:

* ``LINEAR_SHARES``  identity link, one least-squares fit per mode,
  solved by coordinate descent on ``(1/2N)||y - b - Z beta||^2 + theta |beta|_1``.
* ``JOINT_SHARES``   softmax link over modes, fitted to observed shares with
  the mean KL divergence.
* ``DISCRETE_CHOICE`` multinomial logit over trips with cross entropy,
  alternative-specific coefficients on latents / sociodemographics and one
  shared coefficient vector on alternative attributes.

Softmax heads fix the reference mode's row at zero and are solved by a
monotone accelerated proximal gradient method.
"""
import enum
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso

from .dataio import StandardizeStats, standardize
from .records import MODES

P_FLOOR = 1e-12
NONZERO_TOL = 1e-10


class Head(enum.Enum):
    LINEAR_SHARES = "linear_shares"
    JOINT_SHARES = "joint_shares"
    DISCRETE_CHOICE = "discrete_choice"


@dataclass
class PredictorModel:
    head: Head
    beta: np.ndarray                 # K x D (LINEAR: one row per fitted mode)
    intercepts: np.ndarray           # K
    theta: float
    reference_mode: int = None
    beta_alt: np.ndarray = None      # A, DISCRETE_CHOICE only
    blocks: dict = field(default_factory=dict)   # name -> (start, stop) columns of beta
    stats: StandardizeStats = None   # input standardization applied before beta
    modes: tuple = None              # fitted mode indices (LINEAR)
    n_iter: int = 0
    converged: bool = True
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.reference_mode is not None and np.any(self.beta[self.reference_mode]):
            raise ValueError("reference mode row of beta must be zero")

    def nonzero(self, tol=NONZERO_TOL):
        """Count of non-zero slopes per block (all columns if no blocks)."""
        nz = np.abs(self.beta) > tol
        if not self.blocks:
            return {"all": int(nz.sum())}
        return {k: int(nz[:, a:b].sum()) for k, (a, b) in self.blocks.items()}

    def to_json(self):
        return json.dumps({
            "head": self.head.value,
            "theta": self.theta,
            "beta": self.beta.tolist(),
            "intercepts": self.intercepts.tolist(),
            "reference_mode": self.reference_mode,
            "beta_alt": None if self.beta_alt is None else self.beta_alt.tolist(),
            "blocks": {k: list(v) for k, v in self.blocks.items()},
            "stats": None if self.stats is None else self.stats.to_dict(),
            "modes": None if self.modes is None else list(self.modes),
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            head=Head(d["head"]), beta=np.array(d["beta"], dtype=float),
            intercepts=np.array(d["intercepts"], dtype=float), theta=d["theta"],
            reference_mode=d["reference_mode"],
            beta_alt=None if d["beta_alt"] is None else np.array(d["beta_alt"], dtype=float),
            blocks={k: tuple(v) for k, v in d["blocks"].items()},
            stats=None if d["stats"] is None else StandardizeStats.from_dict(d["stats"]),
            modes=None if d["modes"] is None else tuple(d["modes"]),
        )


def _check_finite(*arrays):
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def softmax(v):
    v = np.asarray(v, dtype=float)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


# --------------------------------------------------------------------------
# linear head

def _lasso(Z, Y, theta, tol, max_iter):
    """Multi-output lasso; theta = 0 falls back to min-norm least squares."""
    zm, ym = Z.mean(axis=0), Y.mean(axis=0)
    Zc, Yc = Z - zm, Y - ym
    if theta == 0:
        B = np.linalg.lstsq(Zc, Yc, rcond=None)[0].T
        return B, ym - B @ zm, 1, True
    est = Lasso(alpha=theta, fit_intercept=False, tol=tol, max_iter=max_iter,
                selection="cyclic", precompute=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        try:
            est.fit(Zc, Yc)
            ok = True
        except ConvergenceWarning:
            warnings.simplefilter("ignore", ConvergenceWarning)
            est.fit(Zc, Yc)
            ok = False
    if not ok:
        warnings.warn(f"coordinate descent hit max_iter={max_iter}", RuntimeWarning)
    B = np.atleast_2d(est.coef_)
    return B, ym - B @ zm, int(np.max(est.n_iter_)), ok


def lasso_objective(Z, y, beta, intercept, theta):
    r = y - intercept - Z @ beta
    return 0.5 * np.mean(r ** 2) + theta * np.abs(beta).sum()


def fit_linear(Z, y, theta, tol=1e-8, max_iter=100000, modes=None):
    """L1-penalized least squares with an unpenalized intercept.

    ``y`` may be a vector or an N x M matrix (one independent fit per
    column). Minimizes ``(1/2N) sum r^2 + theta * |beta|_1`` by cyclic
    coordinate descent until the largest scaled coefficient update is below
    ``tol``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(Z, y)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
        raise ValueError("Z rows must match y")
    if Z.shape[0] < 2:
        raise ValueError("need at least two observations")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    Y = y[:, None] if y.ndim == 1 else y
    B, b0, iters, conv = _lasso(Z, Y, theta, tol, max_iter)
    if modes is None:
        modes = tuple(range(Y.shape[1]))
    return PredictorModel(Head.LINEAR_SHARES, B, b0, float(theta),
                          modes=tuple(modes), n_iter=iters, converged=conv)


def lasso_saturation(Z, y):
    """Smallest theta for which every slope is zero."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs((Z - Z.mean(0)).T @ (y - y.mean()))) / len(y))


# --------------------------------------------------------------------------
# softmax heads

def utilities(beta, intercepts, G, beta_alt=None, x_alt=None):
    v = intercepts + G @ beta.T
    if beta_alt is not None and x_alt is not None:
        v = v + x_alt @ beta_alt
    return v


def cross_entropy(Y, P):
    """(1/N) sum_n sum_k -Y_nk ln max(P_nk, 1e-12)."""
    return float(-np.sum(Y * np.log(np.maximum(P, P_FLOOR))) / len(Y))


def kl_shares(P, P_hat):
    """(1/N) sum P (ln P - ln P_hat), with 0 ln 0 = 0 and P_hat floored."""
    P = np.asarray(P, dtype=float)
    plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return float(np.sum(plogp - P * np.log(np.maximum(P_hat, P_FLOOR))) / len(P))


def mnl_gradient(beta, intercepts, G, Y, beta_alt=None, x_alt=None):
    """Gradient of the mean cross entropy w.r.t. (beta, intercepts, beta_alt)."""
    P = softmax(utilities(beta, intercepts, G, beta_alt, x_alt))
    R = (P - Y) / len(G)
    g_beta = R.T @ G
    g_int = R.sum(axis=0)
    g_alt = None if x_alt is None else np.einsum("nk,nka->a", R, x_alt)
    return g_beta, g_int, g_alt


@dataclass
class _Params:
    beta: np.ndarray
    ints: np.ndarray
    alt: np.ndarray

    def flat(self):
        parts = [self.beta.ravel(), self.ints]
        if self.alt is not None:
            parts.append(self.alt)
        return np.concatenate(parts)


def _fit_mnl(G, Y, theta, ref, x_alt=None, penalty_mask=None, penalize_alt=False,
             tol=1e-7, max_iter=20000, free_modes=None):
    """Monotone FISTA on mean cross entropy + theta * |penalized beta|_1."""
    n, d = G.shape
    k = Y.shape[1]
    a = 0 if x_alt is None else x_alt.shape[2]
    pen = np.ones(d, bool) if penalty_mask is None else np.asarray(penalty_mask, bool)
    free = np.ones(k, bool) if free_modes is None else np.asarray(free_modes, bool)
    free[ref] = False

    def clamp(p):
        p.beta[~free] = 0.0
        p.ints[~free] = np.where(np.arange(k)[~free] == ref, 0.0, -30.0)
        return p

    def smooth(p):
        P = softmax(utilities(p.beta, p.ints, G, p.alt, x_alt))
        return cross_entropy(Y, P)

    def penalty(p):
        s = np.abs(p.beta[:, pen]).sum()
        if penalize_alt and p.alt is not None:
            s += np.abs(p.alt).sum()
        return theta * s

    def prox(p, step):
        b = p.beta.copy()
        b[:, pen] = soft_threshold(b[:, pen], step * theta)
        alt = p.alt
        if penalize_alt and alt is not None:
            alt = soft_threshold(alt, step * theta)
        return clamp(_Params(b, p.ints.copy(), None if alt is None else alt.copy()))

    # Lipschitz bound of the softmax cross entropy: 0.5 * lambda_max of the design.
    col = np.hstack([np.ones((n, 1)), G] + ([] if a == 0 else [x_alt.reshape(n, -1)]))
    L = max(0.5 * np.linalg.norm(col, 2) ** 2 / n, 1e-12)

    x = clamp(_Params(np.zeros((k, d)), np.zeros(k), None if a == 0 else np.zeros(a)))
    y = x
    fx = smooth(x) + penalty(x)
    t = 1.0
    trace = [fx]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gb, gi, ga = mnl_gradient(y.beta, y.ints, G, Y, y.alt, x_alt)
        fy = smooth(y)
        yflat = y.flat()
        while True:
            step = 1.0 / L
            z = prox(_Params(y.beta - step * gb, y.ints - step * gi,
                             None if ga is None else y.alt - step * ga), step)
            diff = z.flat() - yflat
            grad = np.concatenate([gb.ravel(), gi] + ([] if ga is None else [ga]))
            if smooth(z) <= fy + grad @ diff + 0.5 * L * diff @ diff + 1e-15:
                break
            L *= 2.0
        fz = smooth(z) + penalty(z)
        x_prev = x
        if fz <= fx:
            x, fx = z, fz
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        xf, zf, pf = x.flat(), z.flat(), x_prev.flat()
        yf = xf + (t / t_next) * (zf - xf) + ((t - 1) / t_next) * (xf - pf)
        y = _unflat(yf, k, d, a)
        t = t_next
        trace.append(fx)
        change = np.max(np.abs(xf - pf)) if it > 1 else np.inf
        if change < tol and np.max(np.abs(zf - xf)) < tol:
            converged = True
            break
        L *= 0.9  # let the step grow back between backtracks
    if not converged:
        warnings.warn(f"proximal gradient hit max_iter={max_iter}", RuntimeWarning)
    return x, it, converged, trace


def _unflat(v, k, d, a):
    beta = v[: k * d].reshape(k, d)
    ints = v[k * d: k * d + k]
    alt = v[k * d + k:] if a else None
    return _Params(beta.copy(), ints.copy(), None if alt is None else alt.copy())


def fit_joint_shares(Z, P, theta, reference_mode=len(MODES) - 1, tol=1e-7, max_iter=20000):
    """Softmax regression of region shares on latents, KL objective + L1."""
    Z = np.asarray(Z, dtype=float)
    P = np.asarray(P, dtype=float)
    _check_finite(Z, P)
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6) or np.any(P < 0):
        raise ValueError("each row of P must be a probability vector")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    x, it, ok, trace = _fit_mnl(Z, P, theta, reference_mode, tol=tol, max_iter=max_iter)
    # report KL = CE - entropy(P)
    ent = kl_shares(P, P) - cross_entropy(P, P)
    return PredictorModel(Head.JOINT_SHARES, x.beta, x.ints, float(theta),
                          reference_mode=reference_mode, n_iter=it, converged=ok,
                          trace=[f + ent for f in trace])


@dataclass
class ChoiceDesign:
    """Trip-level inputs: generic block ``G`` and alternative attributes."""

    G: np.ndarray          # N x D (alternative-specific coefficients)
    x_alt: np.ndarray      # N x K x A (shared coefficients)
    chosen: np.ndarray     # N
    blocks: dict           # name -> (start, stop) columns of G
    penalized: np.ndarray  # D bool

    def __len__(self):
        return len(self.chosen)

    def subset(self, idx):
        return ChoiceDesign(self.G[idx], self.x_alt[idx], self.chosen[idx], self.blocks,
                            self.penalized)

    @property
    def Y(self):
        return np.eye(self.x_alt.shape[1])[self.chosen]


def choice_design(trips, latents=None, include_sd=True, penalize_sd=True):
    """Stack ``[z_origin, z_destination, x_sd_trip]`` for each trip.

    ``latents`` is a region-latent matrix aligned with ``trips.region_ids``.
    """
    parts, blocks, pen, start = [], {}, [], 0
    if latents is not None:
        latents = np.asarray(latents, dtype=float)
        zt = np.hstack([latents[trips.origin], latents[trips.destination]])
        parts.append(zt)
        blocks["latent"] = (start, start + zt.shape[1])
        pen += [True] * zt.shape[1]
        start += zt.shape[1]
    if include_sd:
        parts.append(trips.x_sd)
        blocks["sd"] = (start, start + trips.x_sd.shape[1])
        pen += [penalize_sd] * trips.x_sd.shape[1]
        start += trips.x_sd.shape[1]
    n = len(trips)
    G = np.hstack(parts) if parts else np.zeros((n, 0))
    return ChoiceDesign(G, np.asarray(trips.x_alt, dtype=float), np.asarray(trips.chosen),
                        blocks, np.array(pen, bool))


def fit_choice(trips, latents=None, theta=0.0, reference_mode=len(MODES) - 1,
               penalize_alt=False, tol=1e-7, max_iter=20000, standardize_inputs=False):
    """Multinomial logit over trips with L1 on latent / sociodemographic blocks.

    ``trips`` is a TripTable (combined with region ``latents``) or a
    prepared :class:`ChoiceDesign`. Intercepts and the shared
    alternative-attribute coefficients are unpenalized unless
    ``penalize_alt``. A mode never chosen is pinned to a large negative
    intercept with a warning.
    """
    design = trips if isinstance(trips, ChoiceDesign) else choice_design(trips, latents)
    _check_finite(design.G, design.x_alt)
    if theta < 0:
        raise ValueError("theta must be non-negative")
    k = design.x_alt.shape[1]
    counts = np.bincount(design.chosen, minlength=k)
    free = counts > 0
    if not np.all(free):
        missing = [MODES[i] if k == len(MODES) else i for i in np.flatnonzero(~free)]
        warnings.warn(f"modes never chosen, pinned: {missing}", RuntimeWarning)
    stats = None
    G = design.G
    if standardize_inputs and G.shape[1]:
        G, stats = standardize(G)
    x, it, ok, trace = _fit_mnl(G, design.Y, theta, reference_mode, x_alt=design.x_alt,
                                penalty_mask=design.penalized, penalize_alt=penalize_alt,
                                tol=tol, max_iter=max_iter, free_modes=free)
    return PredictorModel(Head.DISCRETE_CHOICE, x.beta, x.ints, float(theta),
                          reference_mode=reference_mode, beta_alt=x.alt,
                          blocks=dict(design.blocks), stats=stats, n_iter=it, converged=ok,
                          trace=trace)


# --------------------------------------------------------------------------
# prediction and evaluation

def predict(model, Z, x_alt=None):
    """Linear head: fitted values (N x M). Softmax heads: probabilities (N x K)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if model.stats is not None:
        Z, _ = standardize(Z, model.stats)
    if model.head is Head.LINEAR_SHARES:
        return model.intercepts + Z @ model.beta.T
    if x_alt is not None:
        x_alt = np.asarray(x_alt, dtype=float)
        if x_alt.ndim == 2:
            x_alt = x_alt[None]
    return softmax(utilities(model.beta, model.intercepts, Z, model.beta_alt, x_alt))


def predict_labels(model, Z, x_alt=None):
    return np.argmax(predict(model, Z, x_alt), axis=1)


def r2_score(y, y_hat):
    """1 - SSE/SST with SST taken around the mean of ``y`` itself."""
    y = np.asarray(y, dtype=float)
    sst = np.sum((y - y.mean()) ** 2)
    sse = np.sum((y - y_hat) ** 2)
    return float(1.0 - sse / sst) if sst > 0 else float("nan")


@dataclass
class Metrics:
    """Each entry is a ``(train, test)`` pair averaged over folds."""

    r2: dict = field(default_factory=dict)
    kl_loss: tuple = None
    ce_loss: tuple = None
    accuracy: tuple = None
    per_fold: list = field(default_factory=list)

    def __post_init__(self):
        if self.accuracy is not None and not all(0 <= a <= 1 for a in self.accuracy):
            raise ValueError("accuracy outside [0, 1]")

    def rows(self):
        out = [(f"r2_{m}", v) for m, v in self.r2.items()]
        for name in ("kl_loss", "ce_loss", "accuracy"):
            v = getattr(self, name)
            if v is not None:
                out.append((name, v))
        return out

    @property
    def mean_r2(self):
        """Mean test R^2 over the reported modes."""
        return float(np.mean([v[1] for v in self.r2.values()]))


R2_MODES = (0, 1, 2)  # auto, active, pt


def aggregate_scores(model, Z, P):
    """R^2 per mode (and KL for the joint head) of one fitted model."""
    out = {}
    pred = predict(model, Z)
    if model.head is Head.LINEAR_SHARES:
        for j, mode in enumerate(model.modes):
            out[f"r2_{MODES[mode]}"] = r2_score(P[:, mode], pred[:, j])
    else:
        for mode in R2_MODES:
            out[f"r2_{MODES[mode]}"] = r2_score(P[:, mode], pred[:, mode])
        out["kl_loss"] = kl_shares(P, pred)
    return out


def choice_scores(model, design):
    G = design.G
    P = predict(model, G, design.x_alt)
    return {"ce_loss": cross_entropy(design.Y, P),
            "accuracy": float(np.mean(np.argmax(P, axis=1) == design.chosen))}


def _collect(per_fold):
    keys = per_fold[0][0].keys()
    m = Metrics(per_fold=per_fold)
    for key in keys:
        pair = (float(np.mean([tr[key] for tr, _ in per_fold])),
                float(np.mean([te[key] for _, te in per_fold])))
        if key.startswith("r2_"):
            m.r2[key[3:]] = pair
        else:
            setattr(m, key, pair)
    return m


def evaluate(fit, data, folds, ids=None):
    """Cross-validated train/test metrics averaged over folds.

    ``fit(train_data) -> PredictorModel``. ``data`` is either a tuple
    ``(Z, P)`` of region latents and shares or a :class:`ChoiceDesign`.
    Inputs are standardized with statistics of each training fold.
    ``folds`` is a FoldSplit over ``ids`` (defaults to ``range(N)``).
    """
    choice = isinstance(data, ChoiceDesign)
    n = len(data) if choice else len(data[0])
    ids = list(range(n)) if ids is None else list(ids)
    per_fold = []
    for f in range(folds.fold_count):
        tr, te = folds.train_test(f, ids)
        if choice:
            dtr, dte = data.subset(tr), data.subset(te)
            Gtr, stats = standardize(dtr.G) if dtr.G.shape[1] else (dtr.G, None)
            dtr_s = ChoiceDesign(Gtr, dtr.x_alt, dtr.chosen, dtr.blocks, dtr.penalized)
            model = fit(dtr_s)
            model.stats = stats
            per_fold.append((choice_scores(model, dtr), choice_scores(model, dte)))
        else:
            Z, P = data
            Ztr, stats = standardize(Z[tr])
            model = fit(Ztr, P[tr])
            model.stats = stats
            per_fold.append((aggregate_scores(model, Z[tr], P[tr]),
                             aggregate_scores(model, Z[te], P[te])))
    return _collect(per_fold)


def linear_fit(theta, modes=R2_MODES):
    def fit(Z, P):
        return fit_linear(Z, P[:, list(modes)], theta, modes=modes)
    return fit


def joint_fit(theta):
    def fit(Z, P):
        return fit_joint_shares(Z, P, theta)
    return fit


def choice_fit(theta, **kw):
    def fit(design):
        return fit_choice(design, theta=theta, **kw)
    return fit


def test_score(metrics):
    """Scalar test score where larger is better (R^2 mean, -KL or -CE)."""
    if metrics.ce_loss is not None:
        return -metrics.ce_loss[1]
    if metrics.kl_loss is not None and not metrics.r2:
        return -metrics.kl_loss[1]
    return metrics.mean_r2


def sparsity_path(make_fit, data, theta_grid, folds, blocks=None, ids=None):
    """Non-zero counts and test metric along a grid of theta.

    ``make_fit(theta)`` returns a fit callable as used by :func:`evaluate`.
    Counts come from a fit on all of ``data`` (standardized) and are split
    by ``blocks`` (name -> column range) when given.
    """
    rows = []
    for theta in theta_grid:
        fit = make_fit(theta)
        metrics = evaluate(fit, data, folds, ids)
        if isinstance(data, ChoiceDesign):
            Gs, _ = standardize(data.G) if data.G.shape[1] else (data.G, None)
            full = fit(ChoiceDesign(Gs, data.x_alt, data.chosen, data.blocks, data.penalized))
        else:
            Zs, _ = standardize(data[0])
            full = fit(Zs, data[1])
        if blocks:
            full.blocks = dict(blocks)
        rows.append({"theta": float(theta), "nonzero": full.nonzero(),
                     "test_metric": test_score(metrics), "metrics": metrics})
    return rows
