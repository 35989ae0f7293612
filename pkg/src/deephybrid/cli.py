"""Command-line runner: ``deephybrid {synth,train,sweep,benchmark,generate,analyze}``.

Configuration is one JSON file (``--config``) with long-flag overrides.
Outputs go under ``--out`` together with ``manifest.json`` listing every
artifact and its SHA-256. Exit codes: 0 success, 2 configuration error,
3 numeric divergence.
"""
import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import econ, latentnav, plots
from .dataio import make_folds, save_world, standardize
from .experiments import (
    BENCH_HEADER,
    ConfigError,
    ExperimentConfig,
    fit_generation_predictor,
    lambda_effects,
    make_world,
    metric_rows,
    ordering_checks,
    panel_metrics,
    sweep_table,
    train_models,
    write_csv,
)
from .mixing import DivergenceError, Variant, build_latents, latent_blocks, save_checkpoint
from .predictor import linear_fit, predict, sparsity_path
from .records import MODES
from .rng import subseed

log = logging.getLogger("deephybrid")


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"output directory {cfg.out} is not writable: {e}") from e
        self.artifacts = []

    def path(self, name):
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(p)
        return p

    def add(self, *paths):
        self.artifacts.extend(Path(p) for p in paths)

    def write_manifest(self, extra=None):
        entries = []
        for p in sorted(set(self.artifacts)):
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            entries.append({"path": str(p.relative_to(self.out)), "sha256": digest})
        manifest = {"command": self.command, "config": self.cfg.to_dict(), "artifacts": entries}
        if extra:
            manifest.update(extra)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True)
                                                + "\n")
        return manifest


def _ckpt_dir(args):
    return getattr(args, "checkpoints", None)


# --------------------------------------------------------------------------
# commands

def cmd_synth(cfg, args=None):
    run = Run(cfg, "synth")
    world = make_world(cfg)
    run.add(*save_world(world, run.out / "world"))
    run.write_manifest({"n_regions": len(world.regions), "n_trips": len(world.trips)})
    return run


def cmd_train(cfg, args=None):
    run = Run(cfg, "train")
    world = make_world(cfg)
    models, hists = train_models(world, cfg)
    for v, m in models.items():
        if v.has_networks:
            run.add(*save_checkpoint(m, run.out / "checkpoints" / f"model{int(v)}"))
        Z = build_latents(m, world)
        write_csv(run.path(f"latents/model{int(v)}.csv"),
                  ["region_id"] + [f"z_{j}" for j in range(Z.shape[1])],
                  [[rid] + [repr(float(x)) for x in row] for rid, row in zip(world.region_ids, Z)])
        if v in hists:
            h = hists[v]
            h.to_csv(run.path(f"losses/model{int(v)}.csv"))
            terms = h.terms()
            steps = sorted({s for s, _, _ in h})
            table = {(s, t): val for s, t, val in h}
            write_csv(run.path(f"losses/model{int(v)}_wide.csv"), ["step"] + terms,
                      [[s] + [repr(float(table[(s, t)])) if (s, t) in table else ""
                              for t in terms] for s in steps])
            plots.loss_curves(h, run.path(f"losses/model{int(v)}.svg"))
    run.write_manifest()
    return run


def cmd_sweep(cfg, args=None):
    run = Run(cfg, "sweep")
    world = make_world(cfg)
    effects, models = lambda_effects(world, cfg)
    write_csv(run.path("lambda_effects.csv"),
              ["lambda", "sd_r2_train", "sd_r2_test", "rec_loss_test"],
              [[repr(r["lambda"]), f"{r['sd_r2_train']:.10f}", f"{r['sd_r2_test']:.10f}",
                f"{r['rec_loss_test']:.10f}"] for r in effects])
    cells = sweep_table(world, models, cfg)
    write_csv(run.path("sweep.csv"), ["lambda", "theta", "train", "test", "best"],
              [[repr(c["lambda"]), repr(c["theta"]), f"{c['train']:.10f}",
                f"{c['test']:.10f}", c["best"]] for c in cells])
    run.write_manifest()
    return run


def cmd_benchmark(cfg, args=None):
    run = Run(cfg, "benchmark")
    world = make_world(cfg)
    models, _ = train_models(world, cfg, ckpt_dir=_ckpt_dir(args) if args else None)
    rows, panel1 = [], {}
    for v, m in models.items():
        out = panel_metrics(m, world, cfg)
        rows += metric_rows(f"model{int(v)}", out)
        if 1 in out:
            panel1[int(v)] = out[1][1].mean_r2
    write_csv(run.path("benchmark.csv"), BENCH_HEADER, rows)
    checks = ordering_checks(panel1)
    write_csv(run.path("ordering.csv"), ["check", "holds"],
              [[k, int(v)] for k, v in sorted(checks.items())])
    run.write_manifest()
    return run


def cmd_generate(cfg, args=None):
    """Economic generation along one or two latent directions from a source region."""
    run = Run(cfg, "generate")
    world = make_world(cfg)
    variant = Variant(cfg.generate_variant)
    if variant is Variant.CONCAT:
        raise ConfigError("generation needs an image-only latent (variants 2, 4, 5, 6)")
    models, _ = train_models(world, cfg, variants=[variant], ckpt_dir=_ckpt_dir(args))
    m = models[variant]
    pred, Z = fit_generation_predictor(m, world, cfg.generate_theta)
    ids = world.region_ids
    source = getattr(args, "source", None) or ids[0]
    targets = getattr(args, "targets", None) or ids[1:3]
    missing = [r for r in [source, *targets] if r not in ids]
    if missing or not 1 <= len(targets) <= 2:
        raise ConfigError(f"need a source and one or two target regions; unknown: {missing}")
    idx = {rid: i for i, rid in enumerate(ids)}
    z_s = Z[idx[source]]
    dirs = [econ.LatentDirection.between(z_s, Z[idx[t]], f"{source}->{t}") for t in targets]
    coeffs = np.linspace(0.0, 1.0, cfg.grid_steps)
    coeffs2 = coeffs if len(dirs) == 2 else (0.0,)
    cells = econ.generation_grid(m, pred, z_s, dirs, coeffs, coeffs2, cfg.alpha_income)
    econ.write_report_csv(cells, run.path("report.csv"), MODES)
    n_rows, n_cols = len(coeffs), len(coeffs2)
    titles = [f"{c.a1:.1f},{c.a2:.1f}" for c in cells]
    plots.montage([c.tile for c in cells], n_rows, n_cols, run.path("montage.png"), titles)
    plots.montage([c.tile for c in cells], n_rows, n_cols, run.path("montage.svg"), titles)
    plots.share_heatmaps([c.report.market_shares for c in cells], n_rows, n_cols, MODES,
                         run.path("share_heatmaps.svg"), coeffs, coeffs2)
    # anchors: cells that coincide with real regions
    anchors = {source: (0.0, 0.0)}
    anchors[targets[0]] = (1.0, 0.0)
    if len(targets) == 2:
        anchors[targets[1]] = (0.0, 1.0)
    by_coord = {(c.a1, c.a2): c for c in cells}
    check = {}
    for rid, coord in anchors.items():
        direct = predict(pred, Z[idx[rid]])[0]
        check[rid] = float(np.max(np.abs(by_coord[coord].report.market_shares - direct)))
    run.path("anchors.json").write_text(json.dumps(check, indent=1, sort_keys=True) + "\n")
    run.write_manifest()
    return run


def cmd_analyze(cfg, args=None):
    run = Run(cfg, "analyze")
    world = make_world(cfg)
    variant = Variant(cfg.analyze_variant)
    models, _ = train_models(world, cfg, variants=[variant], ckpt_dir=_ckpt_dir(args))
    m = models[variant]
    Z = build_latents(m, world)
    Zs, _ = standardize(Z)
    ids = world.region_ids
    assignment = latentnav.kmeans(Zs, cfg.k_clusters, subseed(cfg.seed, "kmeans"), ids)
    assignment.to_csv(run.path("clusters.csv"))
    emb = latentnav.embed2d(Zs, cfg.perplexity, cfg.tsne_iters, subseed(cfg.seed, "embed"), ids,
                            method=cfg.embed_method)
    emb.to_csv(run.path("embedding.csv"))
    latentnav.profile_to_csv(latentnav.cluster_profile(assignment, world.regions),
                             run.path("profile.csv"), MODES)
    sd = world.sd_matrix
    for j in range(min(2, sd.shape[1])):
        plots.scatter(emb.array, sd[:, j], run.path(f"embedding_sd_{j}.svg"), f"sd_{j}")
    plots.scatter(emb.array, assignment.label_array, run.path("embedding_clusters.svg"),
                  "cluster")
    folds = make_folds(ids, cfg.folds, subseed(cfg.seed, "folds"))
    blocks = latent_blocks(m, sd.shape[1])
    path = sparsity_path(linear_fit, (Z, world.share_matrix), cfg.theta_grid, folds, blocks, ids)
    totals = [sum(r["nonzero"].values()) for r in path]
    write_csv(run.path("sparsity_path.csv"),
              ["theta"] + [f"nonzero_{b}" for b in blocks] + ["nonzero", "test_r2"],
              [[repr(r["theta"])] + [r["nonzero"][b] for b in blocks]
               + [t, f"{r['test_metric']:.10f}"] for r, t in zip(path, totals)])
    plots.sparsity_path([r["theta"] for r in path], totals,
                        [r["test_metric"] for r in path], run.path("sparsity_path.svg"))
    run.write_manifest()
    return run


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "benchmark": cmd_benchmark,
    "generate": cmd_generate,
    "analyze": cmd_analyze,
}

_VARIANT_FIELD = {"sweep": "sweep_variant", "generate": "generate_variant",
                  "analyze": "analyze_variant"}


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser():
    p = argparse.ArgumentParser(prog="deephybrid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--variant", help="model variant(s) 1-6, comma separated")
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--theta-grid", type=_floats)
        s.add_argument("--steps", type=int)
        s.add_argument("--world", help="load an existing world directory")
        s.add_argument("--n-regions", type=int)
        s.add_argument("--n-trips", type=int)
        s.add_argument("--checkpoints", help="directory of saved mixing checkpoints")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "generate":
            s.add_argument("--source", help="source region id")
            s.add_argument("--targets", type=lambda t: t.split(","),
                           help="one or two target region ids, comma separated")
            s.add_argument("--grid", type=int, dest="grid_steps", help="steps per direction")
    return p


def config_from_args(args):
    overrides = {"out": args.out, "seed": args.seed, "lam": args.lam,
                 "theta_grid": args.theta_grid, "steps": args.steps, "world": args.world,
                 "n_regions": args.n_regions, "n_trips": args.n_trips,
                 "grid_steps": getattr(args, "grid_steps", None)}
    if args.variant:
        try:
            vs = [int(v) for v in args.variant.split(",")]
        except ValueError as e:
            raise ConfigError(f"bad --variant {args.variant!r}") from e
        field_name = _VARIANT_FIELD.get(args.command)
        if field_name:
            overrides[field_name] = vs[0]
        else:
            overrides["variants"] = vs
    return ExperimentConfig.load(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
