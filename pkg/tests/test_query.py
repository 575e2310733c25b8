import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcpart.core import Dataset, InputError, generate, normalize
from sfcpart.kdtree import SplitterKind, SplitterStrategy, TreeParams, build_static_tree
from sfcpart.query import (KnnParams, PointIndex, brute_force_knn, knn_recall, read_queries,
                           read_results, write_results)
from sfcpart.sfc import HILBERT, MORTON, order_points


def scan_oracle(coords, ids, q):
    hit = [i for c, i in zip(coords.tolist(), ids.tolist()) if c == list(q)]
    return min(hit) if hit else -1


def window_oracle(idx, q, params):
    """Brute force over exactly the buckets inside the reported window."""
    res = idx.knn(q, params)
    lo, hi = res.window
    rows = idx.window_rows(lo, hi)
    return brute_force_knn(idx.tree.store.coords[rows], idx.tree.store.ids[rows], q, params.k), res


def _mixed_queries(ds, n, rng):
    present = ds.coords[rng.choice(len(ds), n // 2, replace=False)]
    absent = rng.random((n - n // 2, ds.dim))
    return np.vstack([present, absent])


@pytest.fixture(scope="module")
def regular_index():
    ds = normalize(generate("clustered", 5000, 2, seed=8))
    tree = build_static_tree(ds, TreeParams(bucket_size=16, regular=True))
    return ds, PointIndex.build(tree, order_points(tree, MORTON))


def test_fast_path_flag(regular_index, unit2d):
    _, idx = regular_index
    assert idx.fast_path
    assert not PointIndex.from_dataset(unit2d).fast_path
    assert not PointIndex.from_dataset(unit2d, curve=HILBERT).fast_path


def test_locate_stored_and_empty(regular_index):
    ds, idx = regular_index
    loc = idx.locate(ds.coords[17])
    assert loc.found and loc.id == ds.ids[17]
    assert not idx.locate([0.999, 0.001]).found
    assert not idx.locate([2.0, 0.5]).found


def test_locate_dimension_mismatch(regular_index):
    _, idx = regular_index
    with pytest.raises(InputError):
        idx.locate([0.5, 0.5, 0.5])
    with pytest.raises(InputError):
        idx.knn([0.5], KnnParams())


@pytest.mark.parametrize("path", ["fast", "tree"])
def test_locate_matches_scan(regular_index, path, rng):
    ds, idx = regular_index
    for q in _mixed_queries(ds, 400, rng):
        loc = idx.locate(q, path=path)
        assert (loc.id if loc.found else -1) == scan_oracle(ds.coords, ds.ids, q)


def test_fast_path_refused_when_invalid(unit2d):
    with pytest.raises(InputError):
        PointIndex.from_dataset(unit2d).locate([0.5, 0.5], path="fast")


@pytest.mark.parametrize("kind", list(SplitterKind))
def test_general_path_any_splitter(kind, rng):
    ds = normalize(generate("uniform", 2000, 3, seed=4))
    idx = PointIndex.from_dataset(ds, TreeParams(bucket_size=8, splitter=SplitterStrategy(kind, 64)),
                                  curve=HILBERT)
    for q in _mixed_queries(ds, 100, rng):
        loc = idx.locate(q)
        assert (loc.id if loc.found else -1) == scan_oracle(ds.coords, ds.ids, q)


def test_duplicates_report_lowest_id():
    coords = np.array([[0.5, 0.5]] * 5 + [[0.1, 0.9]])
    ds = Dataset(np.array([9, 4, 7, 5, 8, 1]), np.ones(6), coords)
    idx = PointIndex.from_dataset(ds, TreeParams(bucket_size=2))
    assert idx.locate([0.5, 0.5]).id == 4


def test_knn_self_is_nearest(unit2d):
    idx = PointIndex.from_dataset(unit2d, TreeParams(bucket_size=16))
    res = idx.knn(unit2d.coords[3], KnnParams(k=1, cutoff=1))
    assert list(res) == [(int(unit2d.ids[3]), 0.0)]


def test_knn_collinear():
    ds = Dataset(np.array([0, 1, 2]), np.ones(3), np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]))
    idx = PointIndex.from_dataset(ds, TreeParams(bucket_size=1))
    res = idx.knn([0.5, 0.0], KnnParams(k=3, cutoff=10))
    assert res.ids == (1, 0, 2)
    res = idx.knn([0.5, 0.0], KnnParams(k=2, cutoff=10))
    assert res.ids[0] == 1 and res.ids[1] == 0  # tie at distance 0.5 goes to the lower id


def test_knn_short_flag():
    ds = Dataset(np.array([0, 1]), np.ones(2), np.array([[0.0], [1.0]]))
    res = PointIndex.from_dataset(ds).knn([0.2], KnnParams(k=5, cutoff=0))
    assert res.short and len(res) == 2


@pytest.mark.parametrize("curve", [MORTON, HILBERT])
def test_knn_matches_window_oracle(curve, rng):
    ds = normalize(generate("uniform", 10_000, 2, seed=6))
    idx = PointIndex.from_dataset(ds, TreeParams(bucket_size=32), curve=curve)
    params = KnnParams(k=3, cutoff=1)
    for q in rng.random((100, 2)):
        want, got = window_oracle(idx, q, params)
        assert list(got) == want
        assert list(got.dists) == sorted(got.dists)


def test_recall_is_a_fraction(unit2d, rng):
    idx = PointIndex.from_dataset(unit2d, TreeParams(bucket_size=16))
    r = knn_recall(idx, rng.random((30, 2)), KnnParams(3, 1))
    assert 0.0 < r <= 1.0
    assert knn_recall(idx, rng.random((10, 2)), KnnParams(3, 10_000)) == 1.0


def test_params():
    with pytest.raises(InputError):
        KnnParams(k=0)
    with pytest.raises(InputError):
        KnnParams(cutoff=-1)
    assert KnnParams.cutoff_from_points(500_000, 32) == 15625


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 200), k=st.integers(1, 6), cutoff=st.integers(0, 4), seed=st.integers(0, 999))
def test_knn_window_property(n, k, cutoff, seed):
    rng = np.random.default_rng(seed)
    ds = normalize(Dataset(np.arange(n), np.ones(n), np.round(rng.random((n, 2)) * 8) / 8))
    idx = PointIndex.from_dataset(ds, TreeParams(bucket_size=4, seed=seed))
    q = rng.random(2)
    want, got = window_oracle(idx, q, KnnParams(k, cutoff))
    assert list(got) == want
    lo, hi = got.window
    inside = set(idx.tree.store.ids[idx.window_rows(lo, hi)].tolist())
    assert set(got.ids) <= inside


def test_query_and_result_files(tmp_path):
    (tmp_path / "q.txt").write_text("0.5 0.25\n# note\n\n1 0\n")
    q = read_queries(tmp_path / "q.txt", 2)
    assert q.tolist() == [[0.5, 0.25], [1.0, 0.0]]
    (tmp_path / "bad.txt").write_text("0.5\n")
    with pytest.raises(InputError, match="bad.txt:1"):
        read_queries(tmp_path / "bad.txt", 2)
    rows = [(0, 3, 0.125), (1, -1, float("inf"))]
    write_results(tmp_path / "r.txt", rows)
    assert read_results(tmp_path / "r.txt") == rows
