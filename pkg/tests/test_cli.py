import csv
import hashlib
import json
import time

import numpy as np
import pytest

from deephybrid.cli import main
from deephybrid.experiments import ConfigError, ExperimentConfig

TINY = {"n_regions": 10, "tiles_per_region": 2, "n_trips": 200, "tile_size": 16, "steps": 20,
        "theta_grid": [1e-3, 1e-1], "choice_theta_grid": [1e-2], "lambda_grid": [0.5],
        "folds": 2, "perplexity": 3.0, "tsne_iters": 100, "k_clusters": 5}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def _run(cfg_file, out, *extra):
    return main([extra[0], "--config", str(cfg_file), "--out", str(out), *extra[1:]])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_files_and_determinism(cfg_file, tmp_path):
    assert _run(cfg_file, tmp_path / "a", "synth") == 0
    assert _run(cfg_file, tmp_path / "b", "synth") == 0
    regions = _rows(tmp_path / "a/world/regions.csv")
    assert len(regions) - 1 == 10
    assert len(_rows(tmp_path / "a/world/trips.csv")) - 1 == 200
    for name in ("regions.csv", "trips.csv", "tiles.bin"):
        assert (tmp_path / "a/world" / name).read_bytes() == (tmp_path / "b/world" / name).read_bytes()
    man = json.loads((tmp_path / "a/manifest.json").read_text())
    for entry in man["artifacts"]:
        data = (tmp_path / "a" / entry["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]


def test_train_outputs(cfg_file, tmp_path):
    t = time.time()
    assert _run(cfg_file, tmp_path, "train", "--variant", "1,2,4") == 0
    assert time.time() - t < 300
    assert not (tmp_path / "checkpoints/model1.bin").exists()
    assert (tmp_path / "checkpoints/model4.bin").exists()
    assert len(_rows(tmp_path / "latents/model1.csv")) == 11
    w2 = _rows(tmp_path / "losses/model2_wide.csv")[0]
    w4 = _rows(tmp_path / "losses/model4_wide.csv")[0]
    assert len(w4) > len(w2) and "sup" in w4
    assert _rows(tmp_path / "losses/model4.csv")[0] == ["step", "term", "value"]


def test_sweep_table(cfg_file, tmp_path):
    assert _run(cfg_file, tmp_path, "sweep") == 0
    rows = _rows(tmp_path / "sweep.csv")
    head, body = rows[0], rows[1:]
    assert len(body) == len(TINY["lambda_grid"]) * len(TINY["theta_grid"])
    test = [float(r[head.index("test")]) for r in body]
    flags = [r[head.index("best")] for r in body]
    assert flags[int(np.argmax(test))] == "1" and flags.count("1") == 1
    assert len(_rows(tmp_path / "lambda_effects.csv")) == 2


def test_sweep_single_cell(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(dict(TINY, theta_grid=[1e-2])))
    assert _run(p, tmp_path / "o", "sweep") == 0
    assert len(_rows(tmp_path / "o/sweep.csv")) == 2


def test_benchmark_composes_with_synth_and_is_deterministic(cfg_file, tmp_path):
    assert _run(cfg_file, tmp_path / "s", "synth") == 0
    world = str(tmp_path / "s/world")
    args = ("benchmark", "--world", world, "--variant", "1,2,3,4")
    assert _run(cfg_file, tmp_path / "a", *args) == 0
    assert _run(cfg_file, tmp_path / "b", *args) == 0
    a = (tmp_path / "a/benchmark.csv").read_bytes()
    assert a == (tmp_path / "b/benchmark.csv").read_bytes()
    models = {r[0] for r in _rows(tmp_path / "a/benchmark.csv")[1:]}
    assert models == {"model1", "model2", "model3", "model4"}


def test_generate_grids(cfg_file, tmp_path):
    assert _run(cfg_file, tmp_path / "one", "generate", "--variant", "4",
                "--targets", "r0003") == 0
    assert len(_rows(tmp_path / "one/report.csv")) == 1 + 6
    assert _run(cfg_file, tmp_path / "two", "generate", "--variant", "4", "--source", "r0001",
                "--targets", "r0002,r0005") == 0
    assert len(_rows(tmp_path / "two/report.csv")) == 1 + 36
    anchors = json.loads((tmp_path / "two/anchors.json").read_text())
    assert set(anchors) == {"r0001", "r0002", "r0005"}
    assert max(anchors.values()) < 1e-9
    assert (tmp_path / "two/montage.png").stat().st_size > 0


def test_analyze_outputs(cfg_file, tmp_path):
    assert _run(cfg_file, tmp_path, "analyze", "--variant", "2") == 0
    csvs = [p.name for p in tmp_path.glob("*.csv")]
    svgs = [p.name for p in tmp_path.glob("*.svg")]
    assert {"clusters.csv", "embedding.csv", "profile.csv"} <= set(csvs) and len(svgs) >= 2
    clusters = _rows(tmp_path / "clusters.csv")[1:]
    assert {r[1] for r in clusters} == {str(k) for k in range(5)}
    # profile means against a group-by over the synthesized regions
    main(["synth", "--config", str(cfg_file), "--out", str(tmp_path / "w")])
    regions = _rows(tmp_path / "w/world/regions.csv")
    sd = {r[0]: np.array(r[1:11], float) for r in regions[1:]}
    lab = {r[0]: int(r[1]) for r in clusters}
    prof = _rows(tmp_path / "profile.csv")[1:]
    for row in prof:
        members = [sd[k] for k, v in lab.items() if v == int(row[0])]
        assert int(row[1]) == len(members)
        assert np.allclose(np.array(row[2:12], float), np.mean(members, 0), atol=1e-12)


def test_exit_codes(tmp_path, cfg_file):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_regions": 3}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["synth", "--config", str(tmp_path / "missing.json")]) == 2
    assert _run(cfg_file, tmp_path / "y", "benchmark", "--world", str(tmp_path / "nowhere")) == 2
    assert _run(cfg_file, tmp_path / "z", "train", "--variant", "9") == 2
    assert _run(cfg_file, tmp_path / "z", "train", "--lambda", "1.5") == 2
    (tmp_path / "file").write_text("")
    assert _run(cfg_file, tmp_path / "file" / "sub", "synth") == 2


def test_divergence_exit_code(cfg_file, tmp_path):
    assert _run(cfg_file, tmp_path, "train", "--variant", "2") == 0
    p = tmp_path / "huge.json"
    p.write_text(json.dumps(dict(TINY, lr=1e30)))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "d"), "--variant", "4"]) == 3


def test_config_roundtrip_and_validation():
    c = ExperimentConfig.from_dict(TINY)
    assert ExperimentConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError):
        ExperimentConfig(sweep_variant=2)
    with pytest.raises(ConfigError):
        ExperimentConfig(folds=1)
