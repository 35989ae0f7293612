import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deephybrid.dataio import load_world, make_folds, region_latent, save_world, standardize

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_region_latent_examples(rng):
    assert np.array_equal(region_latent([np.array([1.0, 2.0])]), [1.0, 2.0])
    assert np.array_equal(region_latent([np.zeros(2), np.array([2.0, 4.0])]), [1.0, 2.0])
    vs = [rng.normal(size=5) for _ in range(7)]
    oracle = [sum(v[j] for v in vs) / 7 for j in range(5)]
    assert np.allclose(region_latent(vs), oracle, atol=1e-14)


def test_region_latent_errors():
    with pytest.raises(ValueError):
        region_latent([])
    with pytest.raises(ValueError):
        region_latent([np.zeros(2), np.zeros(3)])


@given(arrays(float, (6, 3), elements=finite), st.randoms())
def test_region_latent_permutation_invariant(m, r):
    rows = list(m)
    shuffled = rows[:]
    r.shuffle(shuffled)
    assert np.allclose(region_latent(rows), region_latent(shuffled), atol=1e-9)


def test_standardize_examples(rng):
    out, stats = standardize(np.array([[1.0], [3.0]]))
    assert np.array_equal(out[:, 0], [-1.0, 1.0])
    assert stats.mean[0] == 2.0 and stats.sd[0] == 1.0
    out, _ = standardize(np.array([[5.0], [5.0], [5.0]]))
    assert np.array_equal(out[:, 0], [0.0, 0.0, 0.0])
    m = rng.normal(3, 2, size=(50, 4))
    out, _ = standardize(m)
    assert np.all(np.abs(out.mean(0)) < 1e-12)


def test_standardize_errors():
    with pytest.raises(ValueError):
        standardize(np.array([[np.inf, 1.0], [1.0, 2.0]]))
    with pytest.raises(ValueError):
        standardize(np.ones((1, 3)))


@given(arrays(float, (8, 3), elements=st.floats(-50, 50)))
def test_standardize_inverse_roundtrip(m):
    out, stats = standardize(m)
    back = stats.inverse(out)
    keep = stats.sd > 0
    assert np.allclose(back[:, keep], m[:, keep], atol=1e-9)


def test_standardize_reapplies_stats(rng):
    tr, te = rng.normal(size=(10, 2)), rng.normal(size=(4, 2))
    _, stats = standardize(tr)
    out, _ = standardize(te, stats)
    assert np.allclose(out, (te - tr.mean(0)) / tr.std(0))


def test_make_folds_examples():
    ids = [f"r{i}" for i in range(10)]
    f = make_folds(ids, 5, 0)
    assert sorted(len(x) for x in f.folds()) == [2] * 5
    assert make_folds(ids, 5, 0).assignments == f.assignments
    big = make_folds(range(1571), 5, 1)
    assert sorted(len(x) for x in big.folds()) == [314, 314, 314, 314, 315]
    with pytest.raises(ValueError):
        make_folds(ids[:3], 5)
    with pytest.raises(ValueError):
        make_folds(ids, 1)


@given(st.integers(2, 60), st.integers(2, 7), st.integers(0, 10**6))
def test_folds_partition(n, k, seed):
    if k > n:
        return
    f = make_folds(range(n), k, seed)
    parts = f.folds()
    assert sorted(x for p in parts for x in p) == list(range(n))
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1


def test_world_roundtrip_is_byte_identical(small_world, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    save_world(small_world, a)
    w2 = load_world(a)
    save_world(w2, b)
    for name in ("regions.csv", "trips.csv", "tiles.bin", "tiles.json", "truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert np.array_equal(w2.tiles, small_world.tiles)
    assert np.array_equal(w2.tile_region, small_world.tile_region)


def test_load_world_without_truth(small_world, tmp_path):
    save_world(small_world, tmp_path)
    (tmp_path / "truth.json").unlink()
    w = load_world(tmp_path)
    assert w.truth is None and len(w.regions) == 20
