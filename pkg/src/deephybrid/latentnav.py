"""Structure of the latent space: k-means clusters and 2-D embeddings."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import substream


@dataclass
class ClusterAssignment:
    k: int
    centroids: np.ndarray
    labels: dict            # region_id -> cluster index
    inertia: float
    inertia_trace: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def label_array(self):
        return np.array(list(self.labels.values()), dtype=int)

    def sizes(self):
        return np.bincount(self.label_array, minlength=self.k)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region_id", "label"])
            for rid, lab in self.labels.items():
                w.writerow([rid, lab])


@dataclass
class Embedding2D:
    coords: dict            # region_id -> (x, y)
    kl_trace: list = field(default_factory=list)
    method: str = "tsne"

    @property
    def array(self):
        return np.array(list(self.coords.values()), dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region_id", "x", "y"])
            for rid, (x, y) in self.coords.items():
                w.writerow([rid, repr(float(x)), repr(float(y))])


def _ids(n, ids):
    if ids is None:
        return list(range(n))
    ids = list(ids)
    if len(ids) != n:
        raise ValueError("one id per latent row required")
    return ids


def _sqdist(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(X, C):
    d = _sqdist(X, C)
    # argmin returns the first (lowest) index on ties
    lab = np.argmin(d, axis=1)
    return lab, float(d[np.arange(len(X)), lab].sum())


def kmeans_pp_init(X, k, rng):
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = _sqdist(X, X[centers])[:, 0]
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            # all remaining points coincide with a centre: take the first unused one
            nxt = next(i for i in range(n) if i not in centers)
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * tot, side="right"))
            nxt = min(nxt, n - 1)
        centers.append(nxt)
        d2 = np.minimum(d2, _sqdist(X, X[[nxt]])[:, 0])
    return X[centers].copy()


def _lloyd(X, k, rng, max_iter):
    C = kmeans_pp_init(X, k, rng)
    lab, inertia = _assign(X, C)
    trace = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = X[lab == j]
            if len(members):
                C[j] = members.mean(0)
        new_lab, inertia = _assign(X, C)
        trace.append(inertia)
        if np.array_equal(new_lab, lab):
            break
        lab = new_lab
    lab, inertia = _assign(X, C)
    return C, lab, inertia, trace, it


def kmeans(latents, k=5, seed=0, ids=None, max_iter=300, n_init=10):
    """k-means++ seeded Lloyd iterations until the assignment stops changing.

    ``n_init`` restarts draw their seeding from separate substreams of
    ``seed``; the run with the lowest inertia is kept (first one on ties).
    Empty clusters keep their previous centroid.
    """
    X = np.asarray(latents, dtype=float)
    n = len(X)
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    best = None
    for r in range(n_init):
        run = _lloyd(X, k, substream(seed, "kmeans", r), max_iter)
        if best is None or run[2] < best[2]:
            best = run
    C, lab, inertia, trace, it = best
    return ClusterAssignment(k, C, dict(zip(_ids(n, ids), lab.tolist())), inertia, trace, it)


# --------------------------------------------------------------------------
# embeddings

def pca2d(latents, ids=None):
    X = np.asarray(latents, dtype=float)
    Xc = X - X.mean(0)
    U, S, _ = np.linalg.svd(Xc, full_matrices=False)
    Y = U[:, :2] * S[:2]
    if Y.shape[1] < 2:
        Y = np.hstack([Y, np.zeros((len(Y), 2 - Y.shape[1]))])
    return Embedding2D(dict(zip(_ids(len(X), ids), map(tuple, Y))), method="pca")


def _conditional_p(D, perplexity, tol=1e-5, max_iter=100):
    """Row-wise Gaussian affinities matching the target perplexity by bisection."""
    n = len(D)
    P = np.zeros((n, n))
    target = np.log(perplexity)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_iter):
            p = np.exp(-d * beta)
            s = p.sum()
            H = np.log(s) + beta * (d * p).sum() / s
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        P[i, np.arange(n) != i] = p / s
    return P


def tsne_affinities(X, perplexity):
    X = np.asarray(X, dtype=float)
    P = _conditional_p(_sqdist(X, X), perplexity)
    P = (P + P.T) / (2 * len(X))
    return np.maximum(P, 1e-12)


def tsne_kl(P, Y):
    """KL(P || Q) of the Student-t similarities of embedding ``Y``."""
    num = 1.0 / (1.0 + _sqdist(Y, Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(len(Y), dtype=bool)
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


def embed2d(latents, perplexity=15.0, iters=500, seed=0, ids=None, method="tsne",
            exaggeration=4.0, exaggeration_iters=100, lr=None):
    """Exact tSNE (or PCA with ``method="pca"``); deterministic per seed.

    ``lr=None`` uses the step n / (4 exaggeration), which keeps the pull
    between near-duplicate points stable on small instances.
    """
    X = np.asarray(latents, dtype=float)
    n = len(X)
    if method == "pca":
        return pca2d(X, ids)
    if method != "tsne":
        raise ValueError(f"unknown embedding method {method!r}")
    if n < 10:
        raise ValueError("tSNE needs at least 10 points")
    if not (0 < perplexity < n / 3):
        raise ValueError(f"perplexity must be in (0, n/3) = (0, {n / 3:.3g})")
    if lr is None:
        lr = n / (4.0 * exaggeration)
    P = tsne_affinities(X, perplexity)
    Y = substream(seed, "tsne").normal(0.0, 1e-4, (n, 2))
    vel = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []
    for it in range(iters):
        ex = exaggeration if it < exaggeration_iters else 1.0
        mom = 0.5 if it < exaggeration_iters else 0.8
        num = 1.0 / (1.0 + _sqdist(Y, Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (ex * P - Q) * num
        grad = 4.0 * ((np.diag(W.sum(1)) - W) @ Y)
        same = np.sign(grad) == np.sign(vel)
        gains = np.where(same, gains * 0.8, gains + 0.2).clip(0.01)
        vel = mom * vel - lr * gains * grad
        Y = Y + vel
        Y = Y - Y.mean(0)
        if it % 10 == 0 or it == iters - 1:
            trace.append((it, tsne_kl(P, Y)))
    return Embedding2D(dict(zip(_ids(n, ids), map(tuple, Y))), trace, "tsne")


# --------------------------------------------------------------------------
# profiles

@dataclass
class ClusterProfile:
    cluster: int
    size: int
    sd_mean: np.ndarray
    share_mean: np.ndarray


def cluster_profile(assignment, regions):
    """Per-cluster means of sociodemographics and mode shares.

    ``regions`` is a sequence of RegionRecord (matched to labels by region_id).
    """
    by_id = {r.region_id: r for r in regions}
    out = []
    for c in range(assignment.k):
        members = [by_id[rid] for rid, lab in assignment.labels.items() if lab == c]
        if members:
            sd = np.mean([r.x_sd for r in members], axis=0)
            sh = np.mean([r.shares for r in members], axis=0)
        else:
            first = next(iter(by_id.values()))
            sd = np.full(len(first.x_sd), np.nan)
            sh = np.full(len(first.shares), np.nan)
        out.append(ClusterProfile(c, len(members), sd, sh))
    return out


def profile_to_csv(profiles, path, modes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n_sd = len(profiles[0].sd_mean)
        w.writerow(["cluster", "size"] + [f"sd_{j}" for j in range(n_sd)]
                   + [f"share_{m}" for m in modes])
        for p in profiles:
            w.writerow([p.cluster, p.size] + [repr(float(x)) for x in p.sd_mean]
                       + [repr(float(x)) for x in p.share_mean])


def best_permutation_agreement(labels, truth, k=None):
    """Fraction of matching labels under the best one-to-one relabelling."""
    from scipy.optimize import linear_sum_assignment

    labels = np.asarray(labels, int)
    truth = np.asarray(truth, int)
    k = k or int(max(labels.max(), truth.max()) + 1)
    C = np.zeros((k, k))
    np.add.at(C, (labels, truth), 1)
    r, c = linear_sum_assignment(-C)
    return float(C[r, c].sum() / len(labels))
