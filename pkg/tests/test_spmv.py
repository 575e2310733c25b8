import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcpart.core import InputError
from sfcpart.spmv import (Method, SparseMatrixCoo, comm_metrics, grid_graph, load_matrix,
                          partition_nnz_sfc, partition_rowwise, powerlaw_matrix, random_sparse,
                          relative_error, spmv_sim, vector_plan, write_matrix_market)


def identity(n):
    return SparseMatrixCoo(n, n, np.arange(n), np.arange(n), np.ones(n))


def dense(n, m=None):
    m = m or n
    r, c = np.divmod(np.arange(n * m), m)
    return SparseMatrixCoo(n, m, r, c, np.ones(n * m))


def metrics_oracle(m, owner, P):
    """Refinement and cut counting with plain Python sets."""
    square = m.n_rows == m.n_cols
    n = m.n_cols
    touched = [set() for _ in range(P)]
    for i, j, r in zip(m.rows.tolist(), m.cols.tolist(), owner.tolist()):
        touched[r].add(j)
        if square:
            touched[r].add(i)
    bounds = [-(-s * n // P) for s in range(P + 1)]
    slice_owner = []
    for s in range(P):
        span = set(range(bounds[s], bounds[s + 1]))
        ov = [len(span & touched[r]) for r in range(P)]
        best = max(ov)
        slice_owner.append(ov.index(best) if best > 0 else s)

    def owner_of(i):
        s = max(k for k in range(P) if bounds[k] <= i)
        return slice_owner[s]

    cut = [0] * P
    peers = [set() for _ in range(P)]
    for r in range(P):
        for i in touched[r]:
            o = owner_of(i)
            if o != r:
                cut[r] += 1
                peers[r].add(o)
                peers[o].add(r)
    return max(cut), max(len(p) for p in peers)


def test_load_identity_mm(tmp_path):
    p = tmp_path / "i.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1.0\n2 2 1.0\n")
    m = load_matrix(p, "mm")
    assert m.shape == (2, 2)
    assert sorted(zip(m.rows.tolist(), m.cols.tolist())) == [(0, 0), (1, 1)]


def test_load_symmetric_mm(tmp_path):
    p = tmp_path / "s.mtx"
    p.write_text("%%MatrixMarket matrix coordinate pattern symmetric\n3 3 2\n2 1\n3 3\n")
    m = load_matrix(p)
    assert sorted(zip(m.rows.tolist(), m.cols.tolist())) == [(0, 1), (1, 0), (2, 2)]


def test_load_edge_list(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("# comment\n0 1\n1 0\n0 1\n")
    m = load_matrix(p, "edgelist")
    assert m.shape == (2, 2) and m.nnz == 2


@pytest.mark.parametrize("text,line", [
    ("%%MatrixMarket matrix array real general\n2 2\n", 1),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", None),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1.0\n", 3),
])
def test_mm_errors(tmp_path, text, line):
    p = tmp_path / "bad.mtx"
    p.write_text(text)
    with pytest.raises(InputError) as exc:
        load_matrix(p)
    if line is not None:
        assert f"bad.mtx:{line}" in str(exc.value)


def test_mm_round_trip(tmp_path):
    m = random_sparse(20, 30, 0.2, seed=1)
    write_matrix_market(tmp_path / "m.mtx", m)
    back = load_matrix(tmp_path / "m.mtx")
    assert back.shape == m.shape
    assert np.array_equal(back.to_dense(), m.to_dense())


def test_duplicates_rejected():
    with pytest.raises(InputError):
        SparseMatrixCoo(2, 2, [0, 0], [1, 1], [1.0, 2.0])
    m = SparseMatrixCoo.from_triples(2, 2, [0, 0], [1, 1], [1.0, 2.0])
    assert m.nnz == 1 and m.vals[0] == 1.0


def test_sfc_identity_balance():
    part = partition_nnz_sfc(identity(4), 2)
    assert part.loads().tolist() == [2, 2]
    assert part.method is Method.SFC


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 999), P=st.integers(1, 16))
def test_sfc_unit_load_bound(seed, P):
    m = random_sparse(60, 40, 0.1, seed=seed)
    loads = partition_nnz_sfc(m, P, seed=seed).loads()
    assert loads.max() - loads.min() <= 1
    assert loads.max() - m.nnz // P <= 1


def test_rowwise_blocks():
    part = partition_rowwise(identity(4), 2)
    assert part.owner.tolist() == [0, 0, 1, 1]
    m = SparseMatrixCoo(6, 6, [0, 0, 5], [1, 2, 3], None)
    assert partition_rowwise(m, 3).loads().tolist() == [2, 0, 1]


def test_plan_single_rank():
    m = random_sparse(10, 10, 0.3, seed=2)
    plan = vector_plan(m, partition_rowwise(m, 1))
    assert all(d.size == 0 for d in plan.dependent)
    assert plan.spanning_owner.tolist() == [0]


def test_plan_diagonal_rowwise():
    m = identity(8)
    plan = vector_plan(m, partition_rowwise(m, 2), axis="col")
    assert all(d.size == 0 for d in plan.dependent)


def test_plan_dense_depends_on_other_half():
    m = dense(4)
    part = partition_rowwise(m, 2)
    plan = vector_plan(m, part, axis="col")
    assert [d.tolist() for d in plan.dependent] == [[[2, 4]], [[0, 2]]]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 9999), P=st.integers(1, 8), square=st.booleans(),
       method=st.sampled_from(["sfc", "rowwise"]))
def test_plan_coverage_and_refinement(seed, P, square, method):
    m = random_sparse(30, 30 if square else 17, 0.15, seed=seed)
    if m.nnz == 0:
        return
    part = partition_nnz_sfc(m, P) if method == "sfc" else partition_rowwise(m, P)
    plan = vector_plan(m, part)
    b = plan.bounds
    assert b[0] == 0 and b[-1] == plan.n and np.all(np.diff(b) >= 0)
    covered = np.zeros(plan.n, dtype=int)
    for r in range(P):
        for lo, hi in plan.owned_intervals(r):
            covered[lo:hi] += 1
    assert np.all(covered == 1)
    assert plan.dependent_length(True).sum() <= plan.dependent_length(False).sum()


def test_identity_product_no_reduce_traffic():
    m = identity(6)
    part = partition_rowwise(m, 2)
    x = np.arange(6.0)
    y, rep = spmv_sim(m, x, part)
    assert np.array_equal(y, x)
    assert rep.total_messages == 0


def test_ones_product():
    m = dense(3)
    y, _ = spmv_sim(m, np.ones(3), partition_nnz_sfc(m, 2))
    assert y.tolist() == [3.0, 3.0, 3.0]


def test_dimension_mismatch():
    m = dense(3, 4)
    with pytest.raises(InputError):
        spmv_sim(m, np.ones(3), partition_rowwise(m, 2))


@pytest.mark.parametrize("P", [2, 4, 8])
@pytest.mark.parametrize("method", ["sfc", "rowwise"])
def test_random_product_matches(P, method):
    rng = np.random.default_rng(P)
    for seed in range(5):
        m = random_sparse(50, 50, 0.1, seed=seed)
        part = partition_nnz_sfc(m, P) if method == "sfc" else partition_rowwise(m, P)
        x = rng.standard_normal(50)
        y, rep = spmv_sim(m, x, part)
        assert relative_error(y, m.matvec(x)) <= 1e-12
        assert relative_error(y, m.to_dense() @ x) <= 1e-12
        assert rep.total_messages == rep.messages.sum()


def test_metrics_single_rank():
    m = grid_graph(4)
    q = comm_metrics(m, partition_nnz_sfc(m, 1))
    assert (q.max_degree, q.max_edge_cut) == (0, 0)


def test_small_grid_sfc_beats_rowwise():
    m = grid_graph(8)
    sfc = comm_metrics(m, partition_nnz_sfc(m, 4))
    row = comm_metrics(m, partition_rowwise(m, 4))
    assert sfc.max_edge_cut <= row.max_edge_cut


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 9999), P=st.integers(1, 6), square=st.booleans(),
       method=st.sampled_from(["sfc", "rowwise"]))
def test_metrics_match_oracle(seed, P, square, method):
    m = random_sparse(25, 25 if square else 19, 0.12, seed=seed)
    if m.nnz == 0:
        return
    part = partition_nnz_sfc(m, P) if method == "sfc" else partition_rowwise(m, P)
    if square:
        q = comm_metrics(m, part)
        assert (q.max_edge_cut, q.max_degree) == metrics_oracle(m, part.owner, P)
    assert comm_metrics(m, part).max_load == part.loads().max()


def test_powerlaw_generator():
    m = powerlaw_matrix(1000, 5000, seed=3)
    assert m.nnz == 5000 and m.shape == (1000, 1000)
    deg = np.bincount(m.rows, minlength=1000)
    assert deg.max() > 5 * deg.mean()
