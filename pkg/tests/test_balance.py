import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcpart.balance import (QualityMetrics, greedy_knapsack, incremental_rebalance,
                             parse_metrics, partition_quality, plan_migration, read_ownership,
                             write_metrics, write_ownership)
from sfcpart.core import InputError


def metrics_oracle(owner, edges, nparts):
    """Per-edge tally written independently of the vectorized version."""
    cut = [0.0] * nparts
    peers = [set() for _ in range(nparts)]
    for u, v, w in edges:
        a, b = owner[u], owner[v]
        if a != b:
            cut[a] += w
            cut[b] += w
            peers[a].add(b)
            peers[b].add(a)
    return max(cut), max(len(p) for p in peers)


def test_even_split():
    part = greedy_knapsack([1, 1, 1, 1], 2)
    assert part.loads.tolist() == [2, 2]


def test_more_ranks_than_points():
    part = greedy_knapsack([1, 1, 1], 5)
    loads = part.loads
    assert np.count_nonzero(loads) == 3
    assert loads.max() - loads.min() <= 1


def test_random_bound(rng):
    w = 1.0 - rng.random(10_000)
    part = greedy_knapsack(w, 16)
    assert part.loads.max() - part.loads.min() <= w.max()


def test_zero_total_load():
    with pytest.raises(InputError, match="zero total load"):
        greedy_knapsack([0, 0, 0], 3)


@pytest.mark.parametrize("bad", [[1, -1], [1, np.nan], []])
def test_invalid_weights(bad):
    with pytest.raises(InputError):
        greedy_knapsack(bad, 2)


@settings(max_examples=300, deadline=None)
@given(w=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=60),
       nparts=st.integers(1, 12))
def test_knapsack_bound_and_order(w, nparts):
    if sum(w) == 0:
        return
    part = greedy_knapsack(w, nparts)
    loads = part.loads
    assert loads.max() - loads.min() <= max(w) + 1e-9 * sum(w)
    ranks = part.ranks()
    assert ranks.shape[0] == len(w)
    assert np.all(np.diff(ranks) >= 0)
    assert np.isclose(loads.sum(), sum(w))


def test_unchanged_weights_fixed_point(rng):
    w = rng.random(500)
    old = greedy_knapsack(w, 4)
    new, plan = incremental_rebalance(old, w)
    assert new == old and plan.num_rounds == 0


def test_doubled_weight_moves_one_segment():
    w = np.ones(100)
    old = greedy_knapsack(w, 2)
    w2 = w.copy()
    w2[old.cuts[1] - 1] = 2.0
    new, plan = incremental_rebalance(old, w2)
    msgs = list(plan.messages())
    assert len(msgs) <= 1
    assert all({m.src, m.dst} == {0, 1} for m in msgs)


def test_small_perturbation_moves_between_neighbors(rng):
    w = 0.5 + rng.random(10_000)
    old = greedy_knapsack(w, 8)
    w2 = w * (1 + rng.uniform(-0.01, 0.01, w.shape[0]))
    _, plan = incremental_rebalance(old, w2)
    assert plan.num_moved > 0
    assert all(abs(m.src - m.dst) == 1 for m in plan.messages())


def test_plan_identity():
    assert plan_migration([0, 1, 2], [0, 1, 2], 4).num_rounds == 0


def test_plan_cap_rounds():
    plan = plan_migration([0] * 5, [1] * 5, 2)
    assert [[len(m.ids) for m in r] for r in plan.rounds] == [[2], [2], [1]]


def test_plan_shuffle_replay(rng):
    old = {int(i): int(r) for i, r in zip(rng.permutation(1000)[:100], rng.integers(0, 4, 100))}
    new = {i: int(rng.integers(0, 4)) for i in old}
    plan = plan_migration(old, new, 10)
    assert plan.apply(old) == new
    assert plan.num_moved == sum(old[i] != new[i] for i in old)


def test_plan_rejects_mismatched_ids():
    with pytest.raises(InputError):
        plan_migration({1: 0}, {2: 0}, 3)
    with pytest.raises(InputError):
        plan_migration([0], [0], 0)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(0, 80), nparts=st.integers(1, 6), cap=st.integers(1, 9), seed=st.integers(0, 999))
def test_plan_soundness(n, nparts, cap, seed):
    rng = np.random.default_rng(seed)
    old = rng.integers(0, nparts, n)
    new = rng.integers(0, nparts, n)
    plan = plan_migration(old, new, cap)
    assert np.array_equal(plan.apply(old), new)
    assert plan.num_moved == int(np.count_nonzero(old != new))
    for rnd in plan.rounds:
        pairs = [(m.src, m.dst) for m in rnd]
        assert len(pairs) == len(set(pairs))
        assert all(1 <= len(m.ids) <= cap for m in rnd)


def test_four_cycle():
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    m = partition_quality([0, 0, 1, 1], edges, nparts=2)
    assert (m.max_edge_cut, m.max_degree, m.avg_load, m.max_load) == (2, 1, 2, 2)


def test_single_rank_has_no_cut():
    m = partition_quality([0, 0, 0], [(0, 1), (1, 2)], nparts=1)
    assert (m.max_edge_cut, m.max_degree) == (0, 0)


def test_dangling_endpoint():
    with pytest.raises(InputError):
        partition_quality([0, 1], [(0, 5)], nparts=2)
    with pytest.raises(InputError):
        partition_quality({10: 0, 11: 1}, [(10, 12)], nparts=2)


def test_integer_avg_load_floor():
    m = partition_quality(np.zeros(5_105_039, dtype=np.int64) % 16, (), nparts=16)
    assert m.avg_load == 319064


@settings(max_examples=60, deadline=None)
@given(nv=st.integers(2, 50), ne=st.integers(0, 200), nparts=st.integers(1, 5), seed=st.integers(0, 9999))
def test_metrics_against_oracle(nv, ne, nparts, seed):
    rng = np.random.default_rng(seed)
    owner = rng.integers(0, nparts, nv).tolist()
    edges = [(int(rng.integers(nv)), int(rng.integers(nv)), float(rng.integers(1, 4))) for _ in range(ne)]
    m = partition_quality(owner, edges, nparts=nparts)
    cut, deg = metrics_oracle(owner, edges, nparts)
    assert m.max_edge_cut == cut
    assert m.max_degree == deg


def test_metrics_dict_owner_matches_array():
    owner = {10: 0, 20: 1, 30: 1}
    m = partition_quality(owner, [(10, 20, 1.0), (20, 30, 1.0)], {10: 1, 20: 2, 30: 3}, 2)
    assert (m.max_load, m.min_load, m.max_edge_cut) == (5, 1, 1)


def test_metric_line_round_trip(tmp_path):
    m = QualityMetrics(16, 319064, 319065, 3, 1815)
    write_metrics(tmp_path / "m.txt", m, 0.25)
    text = (tmp_path / "m.txt").read_text()
    assert text.startswith("procs=16 avg_load=319064 max_load=319065 max_degree=3 max_edge_cut=1815")
    vals = parse_metrics(text)
    assert vals["partition_time_s"] == 0.25
    assert np.isnan(parse_metrics(m.to_line(with_edges=False))["max_edge_cut"])


def test_ownership_round_trip(tmp_path):
    write_ownership(tmp_path / "o.txt", [5, 3, 9], [0, 1, 1])
    assert read_ownership(tmp_path / "o.txt") == {5: 0, 3: 1, 9: 1}
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(InputError, match="bad.txt:1"):
        read_ownership(tmp_path / "bad.txt")
