"""Economic readouts of latents and generated imagery.

Market shares, logsum welfare, substitution ratios, closed-form probability
derivatives and linear moves through the latent space.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .dataio import standardize
from .predictor import Head, predict, softmax, utilities


# --------------------------------------------------------------------------
# identities on utilities / probabilities

def market_share(prob_matrix, normalized=True):
    """Per-mode market share: column means (or raw column sums)."""
    P = np.atleast_2d(np.asarray(prob_matrix, dtype=float))
    if P.size == 0 or P.shape[0] == 0:
        raise ValueError("empty probability matrix")
    s = P.sum(axis=0)
    return s / P.shape[0] if normalized else s


def welfare(V, alpha=1.0):
    """Logsum welfare (1/alpha) log sum_j exp(V_j), row-wise for matrices."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    V = np.asarray(V, dtype=float)
    vmax = V.max(axis=-1)
    out = vmax + np.log(np.exp(V - np.expand_dims(vmax, -1)).sum(axis=-1))
    return out / alpha


def substitution(V_j, V_k):
    """Ratio of choice probabilities P_j / P_k = exp(V_j - V_k)."""
    return np.exp(np.asarray(V_j, dtype=float) - np.asarray(V_k, dtype=float))


def substitution_matrix(V):
    V = np.asarray(V, dtype=float)
    return substitution(V[:, None], V[None, :])


# --------------------------------------------------------------------------
# derivatives

def _effective(model):
    """Slopes w.r.t. raw (unstandardized) inputs."""
    beta = model.beta
    if model.stats is not None:
        sd = model.stats.sd
        beta = np.where(sd > 0, beta / np.where(sd > 0, sd, 1.0), 0.0)
    return beta


def _probs(model, z, x_alt=None):
    if model.head is Head.LINEAR_SHARES:
        raise ValueError("probability derivatives need a softmax head")
    return predict(model, np.atleast_2d(z), x_alt)[0]


def _softmax_jacobian_dot(P, b):
    """d P_k along a utility change b_k: P_k (b_k - sum_k' b_k' P_k')."""
    return P * (b - b @ P)


def prob_grad_latent(model, z, u, x_alt=None):
    """Directional derivative u . grad_z P_k(z) for every mode k.

    Equivalent to u . (beta_k P_k (1 - P_k) - sum_{k' != k} beta_k' P_k P_k').
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    beta = _effective(model)
    if z.shape != (beta.shape[1],) or u.shape != z.shape:
        raise ValueError(f"z and u must have dimension {beta.shape[1]}")
    P = _probs(model, z, x_alt)
    return _softmax_jacobian_dot(P, beta @ u)


def prob_deriv_alt(model, g, x_alt, k, i):
    """dP_k / d x_alt[k, i] = beta_alt_i P_k (1 - P_k)."""
    if model.beta_alt is None:
        raise ValueError("model has no alternative-attribute coefficients")
    P = _probs(model, g, x_alt)
    return float(model.beta_alt[i] * P[k] * (1.0 - P[k]))


def prob_deriv_sd(model, g, x_alt, k, i, block="sd"):
    """dP_k / d x_sd[i] for a variable entering every utility.

    beta_ki P_k (1 - P_k) - sum_{k' != k} beta_k'i P_k P_k'; ``i`` indexes
    the named block of the model's inputs (whole input if no blocks).
    """
    start = model.blocks[block][0] if model.blocks and block in model.blocks else 0
    beta = _effective(model)[:, start + i]
    P = _probs(model, g, x_alt)
    return float(P[k] * (beta[k] - beta @ P))


# --------------------------------------------------------------------------
# latent moves

@dataclass
class LatentDirection:
    u: np.ndarray
    label: str = ""

    @classmethod
    def between(cls, z_from, z_to, label=""):
        return cls(np.asarray(z_to, dtype=float) - np.asarray(z_from, dtype=float), label)


def interpolate(z_src, directions, coeffs):
    """z_src + sum_i coeffs[i] * directions[i].u (any real coefficients)."""
    z = np.array(z_src, dtype=float)
    if len(directions) != len(coeffs):
        raise ValueError("need one coefficient per direction")
    for d, a in zip(directions, coeffs):
        u = np.asarray(getattr(d, "u", d), dtype=float)
        if u.shape != z.shape:
            raise ValueError("direction dimension does not match latent")
        z = z + a * u
    return z


# --------------------------------------------------------------------------
# reports

@dataclass
class EconReport:
    market_shares: np.ndarray
    welfare: float
    substitution: np.ndarray
    grad_directional: np.ndarray
    sociodemographic_readout: np.ndarray = None
    utilities: np.ndarray = None
    shares_raw: np.ndarray = None

    def __post_init__(self):
        s = self.market_shares
        if np.any(s < 0) or abs(s.sum() - 1.0) > 1e-9:
            raise ValueError("market shares must be non-negative and sum to one")


def _utilities(pred, z):
    zz = np.atleast_2d(z)
    if pred.stats is not None:
        zz, _ = standardize(zz, pred.stats)
    return utilities(pred.beta, pred.intercepts, zz)


def econ_report(pred, z, alpha=1.0, direction=None, readout=None):
    """Economic readout of latent ``z`` through a softmax predictor."""
    if pred is None or pred.head is Head.LINEAR_SHARES:
        raise ValueError("economic readouts need a fitted softmax predictor")
    z = np.asarray(z, dtype=float)
    V = _utilities(pred, z)
    P = softmax(V)
    u = np.zeros_like(z) if direction is None else np.asarray(getattr(direction, "u", direction))
    return EconReport(
        market_shares=market_share(P),
        welfare=float(welfare(V[0], alpha)),
        substitution=substitution_matrix(V[0]),
        grad_directional=prob_grad_latent(pred, z, u),
        sociodemographic_readout=readout,
        utilities=V[0],
        shares_raw=market_share(P, normalized=False),
    )


def econ_of_latent(mix, pred, z, alpha=1.0, direction=None):
    """Decode ``z`` to a tile and compute its EconReport.

    Returns ``(report, tile)``; the sociodemographic readout comes from the
    supervision head when the mixing model has one.
    """
    from .mixing import decode, supervise

    if mix is None or not mix.variant.has_networks or mix.steps_trained == 0:
        raise ValueError("econ_of_latent needs a trained mixing model with a decoder")
    readout = supervise(mix, z) if mix.supervision is not None else None
    report = econ_report(pred, z, alpha, direction, readout)
    return report, decode(mix, z)


@dataclass
class GridCell:
    a1: float
    a2: float
    z: np.ndarray
    report: EconReport
    tile: np.ndarray


def generation_grid(mix, pred, z_src, directions, coeffs1, coeffs2=(0.0,), alpha=1.0):
    """Reports and tiles over a one- or two-directional grid anchored at z_src.

    Rows follow ``coeffs1`` (first direction), columns ``coeffs2``. The
    directional gradient of each cell is taken along the first direction.
    """
    if len(directions) == 1:
        directions = list(directions) + [LatentDirection(np.zeros_like(np.asarray(z_src, float)))]
    cells = []
    for a1 in coeffs1:
        for a2 in coeffs2:
            z = interpolate(z_src, directions, [a1, a2])
            report, tile = econ_of_latent(mix, pred, z, alpha, directions[0])
            cells.append(GridCell(float(a1), float(a2), z, report, tile))
    return cells


def write_report_csv(cells, path, modes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n_sd = 0 if cells[0].report.sociodemographic_readout is None else len(
            cells[0].report.sociodemographic_readout)
        w.writerow(["a1", "a2"] + [f"share_{m}" for m in modes] + ["welfare"]
                   + [f"grad_{m}" for m in modes] + [f"sd_hat_{j}" for j in range(n_sd)])
        for c in cells:
            r = c.report
            sd = [] if r.sociodemographic_readout is None else list(r.sociodemographic_readout)
            w.writerow([repr(c.a1), repr(c.a2)] + [repr(float(x)) for x in r.market_shares]
                       + [repr(float(r.welfare))] + [repr(float(x)) for x in r.grad_directional]
                       + [repr(float(x)) for x in sd])
