"""Procedural miniature city with a known multinomial-logit choice process.

Regions are drawn around five archetypes. Each archetype has four visual
features; three of them leak into the numeric sociodemographics through a
noisy affine map while ``building_scale`` is only visible in the imagery, so
the two data sources carry complementary information about mode shares.
"""
from dataclasses import dataclass, field

import numpy as np

from .records import (
    ARCHETYPE_FEATURES,
    HIDDEN_FEATURE,
    MODES,
    Archetype,
    ImageTile,
    RegionRecord,
    TripTable,
)
from .rng import substream

N_ARCHETYPES = 5
N_FEATURES = len(ARCHETYPE_FEATURES)
VISIBLE = [i for i, n in enumerate(ARCHETYPE_FEATURES) if n != HIDDEN_FEATURE]

# Region-level utility per archetype feature (grid, green, scale, curvature);
# the last mode ("other") is the all-zero reference alternative.
_SHARE_ASC = np.array([1.0, -0.2, 0.0, 0.0])
_SHARE_BETA = np.array([
    [-2.0, 0.5, 2.5, 1.5],
    [2.0, 1.5, -2.5, -0.5],
    [2.5, -1.0, -2.0, -1.0],
    [0.0, 0.0, 0.0, 0.0],
])
# Fraction of the region-level effect attached to the trip origin.
_ORIGIN_WEIGHT = 0.6
_BETA_ALT = np.array([-1.0, -0.6])


@dataclass
class GroundTruth:
    """Coefficients of the data-generating logit model.

    ``beta_im`` acts on ``[features(origin), features(destination)]``.
    """

    beta_im: np.ndarray     # K x 2F
    beta_sd: np.ndarray     # K x D_trip
    beta_alt: np.ndarray    # A
    asc: np.ndarray         # K
    alpha_income: float = 1.0
    reference_mode: int = len(MODES) - 1

    def __post_init__(self):
        if self.alpha_income <= 0:
            raise ValueError("alpha_income must be positive")
        r = self.reference_mode
        if np.any(self.beta_im[r]) or np.any(self.beta_sd[r]) or self.asc[r] != 0:
            raise ValueError("reference mode coefficients must be zero")

    @property
    def share_beta(self):
        """Slopes of region shares on region features (origin = destination)."""
        f = self.beta_im.shape[1] // 2
        return self.beta_im[:, :f] + self.beta_im[:, f:]

    def utilities(self, f_origin, f_dest, x_sd, x_alt):
        """Systematic utilities, shape N x K (inputs may be single rows)."""
        f_origin, f_dest, x_sd = (np.atleast_2d(a) for a in (f_origin, f_dest, x_sd))
        x_alt = np.asarray(x_alt, dtype=float)
        if x_alt.ndim == 2:
            x_alt = x_alt[None]
        z = np.hstack([f_origin, f_dest])
        return self.asc + z @ self.beta_im.T + x_sd @ self.beta_sd.T + x_alt @ self.beta_alt

    def region_utilities(self, features):
        return self.asc + np.atleast_2d(features) @ self.share_beta.T


@dataclass
class World:
    regions: list
    trips: TripTable
    tiles: np.ndarray            # T x H x W x C float32
    tile_region: np.ndarray      # T, region index per tile
    truth: GroundTruth
    seed: int
    archetypes: list = field(default_factory=list)
    region_archetype: np.ndarray = None
    region_features: np.ndarray = None
    true_shares: np.ndarray = None
    sd_map: dict = field(default_factory=dict)

    @property
    def region_ids(self):
        return [r.region_id for r in self.regions]

    @property
    def sd_matrix(self):
        return np.vstack([r.x_sd for r in self.regions])

    @property
    def share_matrix(self):
        return np.vstack([r.shares for r in self.regions])

    def tile(self, i):
        return ImageTile(self.tiles[i].astype(float), self.regions[self.tile_region[i]].region_id)


def softmax(v):
    v = np.asarray(v, dtype=float)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _smooth_field(rng, size, cells=6):
    """Bilinearly upsampled coarse noise, for organic green patches."""
    coarse = rng.random((cells + 1, cells + 1))
    t = np.linspace(0, cells, size)
    i0 = np.minimum(t.astype(int), cells - 1)
    w = t - i0
    rows = coarse[i0] * (1 - w)[:, None] + coarse[i0 + 1] * w[:, None]
    return rows[:, i0] * (1 - w)[None, :] + rows[:, i0 + 1] * w[None, :]


def render_tile(a, noise_seed, size=32):
    """Render a synthetic satellite tile for archetype-like features ``a``.

    Parameters
    ----------
    a : Archetype or array-like of 4 features in [0, 1]
        (street_grid_density, green_fraction, building_scale, curvature).
    noise_seed : int
        Seed for the stochastic layout; the render is a pure function of
        ``(a, noise_seed, size)``.

    Returns
    -------
    ImageTile with ``size x size x 3`` float pixels in [0, 1].
    """
    feats = a.features if isinstance(a, Archetype) else np.asarray(a, dtype=float)
    if feats.shape != (N_FEATURES,) or np.any(feats < 0) or np.any(feats > 1):
        raise ValueError("archetype features must be four values in [0, 1]")
    grid, green, scale, curve = feats
    rng = np.random.default_rng(noise_seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)

    # Building blocks: side length grows with building_scale, separated by
    # one-pixel light gaps. Small houses have dark warm roofs, large
    # buildings bright flat ones; each roof is jittered around that tone.
    block = 2 + int(round(scale * 6))
    pitch = block + 1
    oy, ox = rng.integers(0, pitch, size=2)
    by = ((yy + oy) // pitch).astype(int)
    bx = ((xx + ox) // pitch).astype(int)
    nb = size // pitch + 2
    hue = (1.0 - scale) * np.array([0.22, -0.04, -0.18]) + scale * np.array([-0.04, 0.0, 0.06])
    roof = (0.3 + 0.5 * scale) + rng.uniform(-0.06, 0.06, size=(nb, nb))
    tint = rng.uniform(-0.03, 0.03, size=(nb, nb, 3))
    img = roof[by, bx][..., None] * (1.0 + hue) + tint[by, bx]
    gap = (((yy + oy) % pitch) == block) | (((xx + ox) % pitch) == block)
    img[gap] = np.array([0.62, 0.6, 0.55])

    # Green patches: threshold a smooth field at its (1 - green) quantile.
    if green > 0:
        fld = _smooth_field(rng, size)
        thresh = np.quantile(fld, 1.0 - green) if green < 1 else -np.inf
        mask = fld >= thresh
        img[mask] = np.array([0.18, 0.5, 0.2]) + rng.normal(0, 0.03, size=(mask.sum(), 3))

    # Street lattice: spacing shrinks with density, lines bend with curvature.
    if grid > 0.05:
        spacing = int(round(4 + (1.0 - grid) * 12))
        amp = curve * spacing * 0.6
        ph = rng.uniform(0, 2 * np.pi, size=2)
        off = rng.integers(0, spacing, size=2)
        dy = (yy - amp * np.sin(2 * np.pi * xx / size + ph[0]) - off[0]) % spacing
        dx = (xx - amp * np.sin(2 * np.pi * yy / size + ph[1]) - off[1]) % spacing
        street = (np.minimum(dy, spacing - dy) < 0.5) | (np.minimum(dx, spacing - dx) < 0.5)
        img[street] = np.array([0.12, 0.12, 0.13])

    img = img + rng.normal(0, 0.015, size=img.shape)
    return ImageTile(np.clip(img, 0.0, 1.0))


def _sample_archetypes(rng, min_dist=0.45, max_tries=10000):
    for _ in range(max_tries):
        pts = rng.uniform(0.05, 0.95, size=(N_ARCHETYPES, N_FEATURES))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        if d[np.triu_indices(N_ARCHETYPES, 1)].min() >= min_dist:
            return [Archetype(i, *map(float, p)) for i, p in enumerate(pts)]
    raise RuntimeError("could not place separated archetypes")


def default_truth(seed, trip_sd_dim=42, n_alt_attrs=2):
    rng = substream(seed, "truth")
    k = len(MODES)
    beta_im = np.hstack([_ORIGIN_WEIGHT * _SHARE_BETA, (1 - _ORIGIN_WEIGHT) * _SHARE_BETA])
    beta_sd = np.zeros((k, trip_sd_dim))
    active = min(6, trip_sd_dim)
    beta_sd[: k - 1, :active] = rng.normal(0, 0.5, size=(k - 1, active))
    beta_alt = np.resize(_BETA_ALT, n_alt_attrs).astype(float)
    return GroundTruth(beta_im=beta_im, beta_sd=beta_sd, beta_alt=beta_alt, asc=_SHARE_ASC.copy())


def sample_choices(probs, rng):
    """Draw one mode per row of a probability matrix by inverse CDF."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] > cdf).sum(axis=1)


def gen_world(seed, n_regions, tiles_per_region=4, n_trips=1000, *, tile_size=32,
              sd_dim=10, trip_sd_dim=42, n_alt_attrs=2, feature_jitter=0.1,
              sd_noise=0.1, share_sample=0):
    """Generate a synthetic world; a pure function of its arguments.

    ``share_sample`` > 0 replaces each region's expected shares with the
    empirical shares of that many simulated residents; 0 keeps them exact.
    """
    for name, v, lo in (("n_regions", n_regions, 10), ("tiles_per_region", tiles_per_region, 1),
                        ("n_trips", n_trips, 100)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
        if v < lo:
            raise ValueError(f"{name} must be >= {lo}, got {v}")

    archetypes = _sample_archetypes(substream(seed, "archetypes"))
    truth = default_truth(seed, trip_sd_dim, n_alt_attrs)
    base = np.vstack([a.features for a in archetypes])

    rng = substream(seed, "regions")
    arch_of = rng.permutation(np.arange(n_regions) % N_ARCHETYPES)
    feats = np.clip(base[arch_of] + rng.normal(0, feature_jitter, size=(n_regions, N_FEATURES)), 0, 1)

    # sd = b + A f_visible + noise, noise of 0.1 feature units along each row of A.
    rng_sd = substream(seed, "sociodemographics")
    A = rng_sd.normal(0, 1, size=(sd_dim, len(VISIBLE)))
    b = rng_sd.normal(0, 1, size=sd_dim)
    noise = rng_sd.normal(0, 1, size=(n_regions, sd_dim)) * sd_noise * np.linalg.norm(A, axis=1)
    x_sd = b + feats[:, VISIBLE] @ A.T + noise

    true_shares = softmax(truth.region_utilities(feats))
    if share_sample > 0:
        rng_sh = substream(seed, "shares")
        counts = np.vstack([rng_sh.multinomial(share_sample, p) for p in true_shares])
        shares = counts / share_sample
    else:
        shares = true_shares
    region_ids = [f"r{i:04d}" for i in range(n_regions)]

    tiles = np.empty((n_regions * tiles_per_region, tile_size, tile_size, 3), dtype=np.float32)
    tile_region = np.repeat(np.arange(n_regions), tiles_per_region)
    rng_t = substream(seed, "tiles")
    tile_seeds = rng_t.integers(0, 2**63 - 1, size=len(tiles))
    for t in range(len(tiles)):
        tiles[t] = render_tile(feats[tile_region[t]], int(tile_seeds[t]), tile_size).pixels

    regions = [
        RegionRecord(region_ids[i], x_sd[i], shares[i],
                     list(range(i * tiles_per_region, (i + 1) * tiles_per_region)))
        for i in range(n_regions)
    ]

    rng_tr = substream(seed, "trips")
    origin = rng_tr.integers(0, n_regions, size=n_trips)
    dest = rng_tr.integers(0, n_regions, size=n_trips)
    x_trip = rng_tr.normal(0, 1, size=(n_trips, trip_sd_dim))
    x_alt = rng_tr.normal(0, 1, size=(n_trips, len(MODES), n_alt_attrs))
    probs = softmax(truth.utilities(feats[origin], feats[dest], x_trip, x_alt))
    chosen = sample_choices(probs, rng_tr)
    trips = TripTable(
        trip_ids=[f"t{i:06d}" for i in range(n_trips)],
        origin=origin, destination=dest, x_sd=x_trip, x_alt=x_alt,
        chosen=chosen, region_ids=region_ids,
    )
    return World(
        regions=regions, trips=trips, tiles=tiles, tile_region=tile_region, truth=truth,
        seed=int(seed), archetypes=archetypes, region_archetype=arch_of,
        region_features=feats, true_shares=true_shares,
        sd_map={"A": A, "b": b, "visible": VISIBLE},
    )


def ground_truth_probs(trip, world):
    """Choice probabilities of a TripRecord under the world's ground truth."""
    index = {rid: i for i, rid in enumerate(world.region_ids)}
    try:
        o, d = index[trip.origin], index[trip.destination]
    except KeyError as exc:
        raise ValueError(f"trip {trip.trip_id} references unknown region {exc}") from None
    f = world.region_features
    v = world.truth.utilities(f[o], f[d], trip.x_sd_trip, trip.x_alt)[0]
    return softmax(v)


def ground_truth_prob_matrix(world, trips=None):
    trips = world.trips if trips is None else trips
    f = world.region_features
    return softmax(world.truth.utilities(f[trips.origin], f[trips.destination], trips.x_sd, trips.x_alt))
