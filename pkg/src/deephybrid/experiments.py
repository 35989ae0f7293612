"""End-to-end workflow pieces shared by the command line and the tests.

Every function here is deterministic given the config: all randomness is
drawn from named substreams of ``config.seed``.
"""
import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataio import load_world, make_folds, save_world, standardize
from .mixing import (
    DivergenceError,
    MixingModel,
    TrainConfig,
    Variant,
    build_latents,
    build_trained,
    encode,
    load_checkpoint,
    reconstruction_error,
    save_checkpoint,
    supervise,
)
from .predictor import (
    R2_MODES,
    choice_design,
    choice_fit,
    evaluate,
    fit_joint_shares,
    joint_fit,
    linear_fit,
    r2_score,
    test_score,
)
from .records import MODES
from .rng import subseed
from .synthworld import gen_world


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    # world
    n_regions: int = 200
    tiles_per_region: int = 4
    n_trips: int = 20000
    tile_size: int = 32
    sd_dim: int = 10
    share_sample: int = 0
    world: str = None            # load this world directory instead of generating
    # Stage I
    variants: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    latent_dim: int = None       # None = per-variant default
    lam: float = 0.5
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    # Stage II
    theta_grid: list = field(default_factory=lambda: [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    choice_theta_grid: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    lambda_grid: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    folds: int = 5
    panels: list = field(default_factory=lambda: [1, 2, 3])
    # sweeps / generation / analysis
    sweep_variant: int = 6
    generate_variant: int = 6
    generate_theta: float = 1e-3
    grid_steps: int = 6
    alpha_income: float = 1.0
    analyze_variant: int = 4
    k_clusters: int = 5
    perplexity: float = 15.0
    tsne_iters: int = 500
    embed_method: str = "tsne"
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        need(self.n_regions >= 10, "n_regions must be >= 10")
        need(self.tiles_per_region >= 1, "tiles_per_region must be >= 1")
        need(self.n_trips >= 100, "n_trips must be >= 100")
        need(self.tile_size in (16, 32, 64), "tile_size must be 16, 32 or 64")
        need(len(self.variants) > 0, "variants must not be empty")
        for v in list(self.variants) + [self.sweep_variant, self.generate_variant,
                                        self.analyze_variant]:
            need(v in range(1, 7), f"variant {v} is not in 1..6")
        need(Variant(self.sweep_variant).supervised, "sweep_variant must be supervised (4-6)")
        need(Variant(self.generate_variant).has_networks, "generate_variant needs a decoder")
        need(self.latent_dim is None or self.latent_dim > 0, "latent_dim must be positive")
        need(0.0 <= self.lam <= 1.0, "lambda must lie in [0, 1]")
        need(all(0.0 <= x <= 1.0 for x in self.lambda_grid) and self.lambda_grid,
             "lambda_grid values must lie in [0, 1]")
        need(self.steps >= 0 and self.batch_size >= 1 and self.lr > 0, "bad optimizer settings")
        need(self.theta_grid and all(t >= 0 for t in self.theta_grid), "bad theta_grid")
        need(self.choice_theta_grid and all(t >= 0 for t in self.choice_theta_grid),
             "bad choice_theta_grid")
        need(2 <= self.folds <= self.n_regions, "folds must be in [2, n_regions]")
        need(set(self.panels) <= {1, 2, 3} and self.panels, "panels must be a subset of 1, 2, 3")
        need(self.grid_steps >= 2, "grid_steps must be >= 2")
        need(self.alpha_income > 0, "alpha_income must be positive")
        need(self.k_clusters >= 1, "k_clusters must be >= 1")
        need(self.embed_method in ("tsne", "pca"), "embed_method must be tsne or pca")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path, overrides=None):
        d = {}
        if path is not None:
            try:
                d = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            if not isinstance(d, dict):
                raise ConfigError("config must be a JSON object")
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def train_config(self, seed=None):
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                           seed=self.seed if seed is None else seed)


# --------------------------------------------------------------------------
# worlds and models

def make_world(cfg):
    if cfg.world:
        if not (Path(cfg.world) / "regions.csv").exists():
            raise ConfigError(f"no world found in {cfg.world}")
        return load_world(cfg.world)
    return gen_world(cfg.seed, cfg.n_regions, cfg.tiles_per_region, cfg.n_trips,
                     tile_size=cfg.tile_size, sd_dim=cfg.sd_dim, share_sample=cfg.share_sample)


def _ckpt_path(ckpt_dir, variant):
    return Path(ckpt_dir) / f"model{int(variant)}"


def train_models(world, cfg, variants=None, lam=None, ckpt_dir=None, region_mask=None):
    """Stage I for each variant; returns ``(models, histories)`` keyed by variant.

    Model 3 reuses Model 2's autoencoder (trained on demand). Checkpoints
    found in ``ckpt_dir`` are loaded instead of retraining.
    """
    variants = [Variant(v) for v in (cfg.variants if variants is None else variants)]
    lam = cfg.lam if lam is None else lam
    sd_dim = world.sd_matrix.shape[1]
    models, hists = {}, {}

    def get(v):
        if v in models:
            return models[v]
        if v is Variant.SD_ONLY:
            models[v] = MixingModel(v, sd_dim=sd_dim)
        elif v is Variant.CONCAT:
            models[v] = MixingModel.concat_of(get(Variant.AE))
        else:
            p = _ckpt_path(ckpt_dir, v) if ckpt_dir else None
            if p is not None and p.with_suffix(".json").exists():
                models[v] = load_checkpoint(p)
            else:
                m, h, _ = build_trained(v, world, lam=lam, latent_dim=cfg.latent_dim,
                                        config=cfg.train_config(subseed(cfg.seed, "train", v.name)),
                                        region_mask=region_mask,
                                        seed=cfg.seed)
                models[v] = m
                hists[v] = h
        return models[v]

    for v in variants:
        get(v)
    return {v: models[v] for v in variants}, hists


# --------------------------------------------------------------------------
# Stage II panels

PANEL_NAMES = {1: "separate_shares", 2: "joint_shares", 3: "discrete_choice"}


def region_data(m, world):
    return build_latents(m, world), world.share_matrix


def best_over_grid(make_fit, data, grid, folds, ids=None):
    """Best (by test score) cross-validated metrics over a theta grid."""
    best = None
    for theta in grid:
        metrics = evaluate(make_fit(theta), data, folds, ids)
        score = test_score(metrics)
        if best is None or score > best[2]:
            best = (float(theta), metrics, score)
    return best


def panel_metrics(m, world, cfg, panels=None):
    """``{panel: (theta, Metrics)}`` at the best theta of each panel."""
    panels = cfg.panels if panels is None else panels
    ids = world.region_ids
    folds = make_folds(ids, cfg.folds, subseed(cfg.seed, "folds"))
    Z, P = region_data(m, world)
    out = {}
    if 1 in panels:
        theta, met, _ = best_over_grid(linear_fit, (Z, P), cfg.theta_grid, folds, ids)
        out[1] = (theta, met)
    if 2 in panels:
        theta, met, _ = best_over_grid(joint_fit, (Z, P), cfg.theta_grid, folds, ids)
        out[2] = (theta, met)
    if 3 in panels:
        design = choice_design(world.trips, Z)
        tids = list(world.trips.trip_ids)
        tfolds = make_folds(tids, cfg.folds, subseed(cfg.seed, "trip_folds"))
        theta, met, _ = best_over_grid(lambda t: choice_fit(t, tol=1e-6), design,
                                       cfg.choice_theta_grid, tfolds, tids)
        out[3] = (theta, met)
    return out


def metric_rows(label, panel_out):
    rows = []
    for panel, (theta, met) in sorted(panel_out.items()):
        for name, (tr, te) in met.rows():
            rows.append([label, panel, PANEL_NAMES[panel], repr(theta), name,
                         f"{tr:.10f}", f"{te:.10f}"])
        if met.r2:
            rows.append([label, panel, PANEL_NAMES[panel], repr(theta), "r2_mean",
                         f"{np.mean([v[0] for v in met.r2.values()]):.10f}",
                         f"{met.mean_r2:.10f}"])
    return rows


BENCH_HEADER = ["model", "panel", "panel_name", "theta", "metric", "train", "test"]


def ordering_checks(panel1_r2, margin=0.02):
    """Complementarity ordering of Panel-1 test R^2 (keys are variant ints)."""
    r = panel1_r2
    out = {}
    if all(k in r for k in (1, 2, 3)):
        out["m3_gt_max_m1_m2"] = r[3] - max(r[1], r[2]) >= margin
    if all(k in r for k in (3, 4)):
        out["m4_ge_m3"] = r[4] - r[3] >= margin
    return out


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# --------------------------------------------------------------------------
# lambda effects

def sd_prediction_r2(m, world, region_mask, sd_stats):
    """R^2 of the supervision head's sociodemographic readout on masked regions.

    Tile readouts are averaged per region and compared with standardized
    sociodemographics; R^2 is averaged over columns.
    """
    idx = np.flatnonzero(region_mask)
    target, _ = standardize(world.sd_matrix[idx], sd_stats)
    z = encode(m, world.tiles).z
    readout = supervise(m, z)
    pred = np.vstack([readout[world.tile_region == r].mean(0) for r in idx])
    return float(np.mean([r2_score(target[:, j], pred[:, j]) for j in range(target.shape[1])]))


def lambda_effects(world, cfg, variant=None, lambdas=None, test_fraction=0.2):
    """Per-lambda sociodemographic readout R^2 (train/test) and test reconstruction loss.

    Stage I is fitted on a random 80% of regions; the rest are held out.
    """
    variant = Variant(cfg.sweep_variant if variant is None else variant)
    lambdas = cfg.lambda_grid if lambdas is None else lambdas
    n = len(world.regions)
    rng = np.random.default_rng(subseed(cfg.seed, "lambda_split"))
    test = np.zeros(n, bool)
    test[rng.permutation(n)[:max(1, int(round(test_fraction * n)))]] = True
    rows = []
    models = {}
    for lam in lambdas:
        m, _, data = build_trained(variant, world, lam=lam, latent_dim=cfg.latent_dim,
                                   config=cfg.train_config(subseed(cfg.seed, "train", variant.name)),
                                   region_mask=~test, seed=cfg.seed)
        rec = reconstruction_error(m, world.tiles[test[world.tile_region]])
        rows.append({"lambda": float(lam),
                     "sd_r2_train": sd_prediction_r2(m, world, ~test, data.sd_stats),
                     "sd_r2_test": sd_prediction_r2(m, world, test, data.sd_stats),
                     "rec_loss_test": rec})
        models[lam] = m
    return rows, models


def sweep_table(world, models, cfg):
    """Panel-1 train/test mean R^2 for every (lambda, theta) cell."""
    ids = world.region_ids
    folds = make_folds(ids, cfg.folds, subseed(cfg.seed, "folds"))
    cells = []
    for lam, m in models.items():
        Z, P = region_data(m, world)
        for theta in cfg.theta_grid:
            met = evaluate(linear_fit(theta), (Z, P), folds, ids)
            tr = float(np.mean([v[0] for v in met.r2.values()]))
            cells.append({"lambda": float(lam), "theta": float(theta), "train": tr,
                          "test": met.mean_r2})
    best = int(np.argmax([c["test"] for c in cells]))
    for i, c in enumerate(cells):
        c["best"] = int(i == best)
    return cells


# --------------------------------------------------------------------------
# economic generation

def fit_generation_predictor(m, world, theta):
    """Joint-share predictor on standardized region latents (stats kept)."""
    Z = build_latents(m, world)
    Zs, stats = standardize(Z)
    pred = fit_joint_shares(Zs, world.share_matrix, theta)
    pred.stats = stats
    return pred, Z


__all__ = [
    "BENCH_HEADER", "ConfigError", "DivergenceError", "ExperimentConfig", "MODES",
    "PANEL_NAMES", "R2_MODES", "best_over_grid", "fit_generation_predictor", "lambda_effects",
    "make_world", "metric_rows", "ordering_checks", "panel_metrics", "save_world",
    "sd_prediction_r2", "sweep_table", "train_models", "write_csv",
]
