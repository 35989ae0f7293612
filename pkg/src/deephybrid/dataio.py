"""World persistence, feature standardization, latent averaging and CV folds.

File layout of a world directory::

    regions.csv   region_id, sd_0..sd_{d-1}, share_auto, share_active,
                  share_pt, share_other, tile_ids (semicolon list)
    trips.csv     trip_id, origin, destination, chosen, sd_0.., alt_{k}_{a}..
    tiles.bin     little-endian float32, count x height x width x channels
    tiles.json    {"height", "width", "channels", "count"}
    truth.json    ground truth (synthetic worlds only; optional on load)
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .records import MODES, Archetype, RegionRecord, TripTable
from .rng import substream


def _fmt(x):
    return repr(float(x))


# --------------------------------------------------------------------------
# latents, standardization, folds

def region_latent(tiles):
    """Average a list of tile latents into one region latent."""
    if len(tiles) == 0:
        raise ValueError("region_latent needs at least one tile latent")
    arr = [np.asarray(t, dtype=float) for t in tiles]
    dim = arr[0].shape
    if any(a.shape != dim for a in arr):
        raise ValueError("tile latents have mismatched dimensions")
    return np.mean(np.stack(arr), axis=0)


@dataclass
class StandardizeStats:
    mean: np.ndarray
    sd: np.ndarray

    def inverse(self, m):
        return np.asarray(m, dtype=float) * np.where(self.sd > 0, self.sd, 0.0) + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


def standardize(matrix, stats=None):
    """Column-wise z-scores (population sd); constant columns map to zero.

    Returns ``(standardized, stats)``; pass ``stats`` to reapply a fit.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("standardize expects a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("standardize: non-finite input")
    if stats is None:
        if m.shape[0] < 2:
            raise ValueError("need at least 2 rows to fit standardization stats")
        mean = m.mean(axis=0)
        sd = m.std(axis=0)
        # treat numerically constant columns as exactly constant
        sd = np.where(sd <= 1e-12 * np.maximum(1.0, np.abs(mean)), 0.0, sd)
        stats = StandardizeStats(mean, sd)
    safe = np.where(stats.sd > 0, stats.sd, 1.0)
    out = (m - stats.mean) / safe
    out[:, stats.sd == 0] = 0.0
    return out, stats


@dataclass
class FoldSplit:
    fold_count: int
    assignments: dict

    def folds(self):
        out = [[] for _ in range(self.fold_count)]
        for key, f in self.assignments.items():
            out[f].append(key)
        return out

    def train_test(self, fold, ids):
        """Boolean masks (train, test) over ``ids`` for one fold."""
        f = np.array([self.assignments[i] for i in ids])
        return f != fold, f == fold


def make_folds(ids, k=5, seed=0):
    """Deterministic shuffled partition of ``ids`` into ``k`` folds."""
    ids = list(ids)
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if k > len(ids):
        raise ValueError(f"cannot split {len(ids)} ids into {k} folds")
    order = substream(seed, "folds").permutation(len(ids))
    assignments = {ids[j]: pos % k for pos, j in enumerate(order)}
    return FoldSplit(k, assignments)


# --------------------------------------------------------------------------
# persistence

def _truth_to_json(world):
    t = world.truth
    return {
        "seed": world.seed,
        "modes": list(MODES),
        "beta_im": t.beta_im.tolist(),
        "beta_sd": t.beta_sd.tolist(),
        "beta_alt": t.beta_alt.tolist(),
        "asc": t.asc.tolist(),
        "alpha_income": t.alpha_income,
        "reference_mode": t.reference_mode,
        "archetypes": [
            {"id": a.id, "street_grid_density": a.street_grid_density,
             "green_fraction": a.green_fraction, "building_scale": a.building_scale,
             "curvature": a.curvature}
            for a in world.archetypes
        ],
        "region_archetype": [int(x) for x in world.region_archetype],
        "region_features": world.region_features.tolist(),
        "true_shares": world.true_shares.tolist(),
        "sd_map": {"A": np.asarray(world.sd_map["A"]).tolist(),
                   "b": np.asarray(world.sd_map["b"]).tolist(),
                   "visible": list(world.sd_map["visible"])},
    }


def save_world(world, out_dir):
    """Write a world to ``out_dir``; returns the list of written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = len(world.regions[0].x_sd)
    with open(out / "regions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id"] + [f"sd_{j}" for j in range(d)]
                   + [f"share_{m}" for m in MODES] + ["tile_ids"])
        for r in world.regions:
            w.writerow([r.region_id] + [_fmt(x) for x in r.x_sd] + [_fmt(x) for x in r.shares]
                       + [";".join(str(int(t)) for t in r.tile_ids)])

    trips = world.trips
    n, k, a = trips.x_alt.shape
    dt = trips.x_sd.shape[1]
    with open(out / "trips.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "origin", "destination", "chosen"]
                   + [f"sd_{j}" for j in range(dt)]
                   + [f"alt_{m}_{i}" for m in range(k) for i in range(a)])
        rid = trips.region_ids
        for i in range(n):
            w.writerow([trips.trip_ids[i], rid[trips.origin[i]], rid[trips.destination[i]],
                        int(trips.chosen[i])] + [_fmt(x) for x in trips.x_sd[i]]
                       + [_fmt(x) for x in trips.x_alt[i].ravel()])

    tiles = np.ascontiguousarray(world.tiles, dtype="<f4")
    (out / "tiles.bin").write_bytes(tiles.tobytes())
    count, h, wd, c = tiles.shape
    header = {"height": h, "width": wd, "channels": c, "count": count}
    (out / "tiles.json").write_text(json.dumps(header, indent=2) + "\n")
    paths = [out / "regions.csv", out / "trips.csv", out / "tiles.bin", out / "tiles.json"]
    if world.truth is not None:
        (out / "truth.json").write_text(json.dumps(_truth_to_json(world), indent=1) + "\n")
        paths.append(out / "truth.json")
    return paths


def load_tiles(directory):
    directory = Path(directory)
    header = json.loads((directory / "tiles.json").read_text())
    shape = (header["count"], header["height"], header["width"], header["channels"])
    raw = np.frombuffer((directory / "tiles.bin").read_bytes(), dtype="<f4")
    if raw.size != np.prod(shape):
        raise ValueError(f"tiles.bin holds {raw.size} floats, header says {shape}")
    tiles = raw.reshape(shape).astype(np.float32)
    if tiles.min() < 0 or tiles.max() > 1:
        raise ValueError("tile pixels outside [0, 1]")
    return tiles


def load_world(directory):
    """Load a world directory written by :func:`save_world` (truth optional)."""
    from .synthworld import GroundTruth, World

    directory = Path(directory)
    regions = []
    with open(directory / "regions.csv", newline="") as fh:
        rows = csv.reader(fh)
        head = next(rows)
        d = sum(1 for h in head if h.startswith("sd_"))
        for row in rows:
            tile_ids = [int(t) for t in row[-1].split(";") if t != ""]
            regions.append(RegionRecord(row[0], [float(x) for x in row[1:1 + d]],
                                        [float(x) for x in row[1 + d:1 + d + len(MODES)]],
                                        tile_ids))
    region_ids = [r.region_id for r in regions]
    index = {rid: i for i, rid in enumerate(region_ids)}

    with open(directory / "trips.csv", newline="") as fh:
        rows = csv.reader(fh)
        head = next(rows)
        dt = sum(1 for h in head if h.startswith("sd_"))
        alt_cols = [h for h in head if h.startswith("alt_")]
        k = 1 + max(int(h.split("_")[1]) for h in alt_cols)
        a = len(alt_cols) // k
        ids, origin, dest, chosen, xs, xa = [], [], [], [], [], []
        for row in rows:
            ids.append(row[0])
            try:
                origin.append(index[row[1]])
                dest.append(index[row[2]])
            except KeyError as exc:
                raise ValueError(f"trip {row[0]} references unknown region {exc}") from None
            chosen.append(int(row[3]))
            xs.append([float(x) for x in row[4:4 + dt]])
            xa.append([float(x) for x in row[4 + dt:]])
    trips = TripTable(
        trip_ids=ids, origin=np.array(origin, dtype=int), destination=np.array(dest, dtype=int),
        x_sd=np.array(xs, dtype=float).reshape(len(ids), dt),
        x_alt=np.array(xa, dtype=float).reshape(len(ids), k, a),
        chosen=np.array(chosen, dtype=int), region_ids=region_ids,
    )
    if np.any(trips.chosen < 0) or np.any(trips.chosen >= k):
        raise ValueError("chosen mode index out of range")

    tiles = load_tiles(directory)
    tile_region = np.full(len(tiles), -1, dtype=int)
    for i, r in enumerate(regions):
        if not r.tile_ids:
            raise ValueError(f"region {r.region_id} has no tiles")
        tile_region[r.tile_ids] = i

    truth = None
    extra = {}
    tpath = directory / "truth.json"
    if tpath.exists():
        tj = json.loads(tpath.read_text())
        truth = GroundTruth(
            beta_im=np.array(tj["beta_im"]), beta_sd=np.array(tj["beta_sd"]).reshape(len(MODES), -1),
            beta_alt=np.array(tj["beta_alt"]), asc=np.array(tj["asc"]),
            alpha_income=tj["alpha_income"], reference_mode=tj["reference_mode"],
        )
        extra = dict(
            seed=tj["seed"],
            archetypes=[Archetype(**a) for a in tj["archetypes"]],
            region_archetype=np.array(tj["region_archetype"], dtype=int),
            region_features=np.array(tj["region_features"]),
            true_shares=np.array(tj["true_shares"]),
            sd_map={"A": np.array(tj["sd_map"]["A"]), "b": np.array(tj["sd_map"]["b"]),
                    "visible": tj["sd_map"]["visible"]},
        )
    return World(regions=regions, trips=trips, tiles=tiles, tile_region=tile_region,
                 truth=truth, seed=extra.pop("seed", 0), **extra)
