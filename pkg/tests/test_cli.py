import subprocess
import sys

import numpy as np
import pytest

from sfcpart.balance import parse_metrics, read_ownership
from sfcpart.cli import run
from sfcpart.core import read_points
from sfcpart.dynamic import random_workload, write_workload
from sfcpart.query import read_results
from sfcpart.sfc import read_permutation


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture
def points(tmp_path):
    out = tmp_path / "data"
    assert run(["generate", "--dist", "clustered", "--n", "3000", "--dim", "2",
                "--seed", "5", "--out", str(out)]) == 0
    return out / "points.txt"


def test_generate_round_trip(points):
    ds = read_points(points)
    assert len(ds) == 3000 and ds.dim == 2


def test_partition_tiny(tmp_path, capsys):
    pts = tmp_path / "p.txt"
    pts.write_text("0 1.0 0.0 0.0\n1 2.0 1.0 0.0\n2 1.0 0.0 1.0\n3 1.5 1.0 1.0\n")
    assert run(["partition", str(pts), "--procs", "2", "--out", str(tmp_path / "o")]) == 0
    own = read_ownership(tmp_path / "o" / "ownership.txt")
    assert set(own) == {0, 1, 2, 3} and set(own.values()) == {0, 1}
    w = {0: 1.0, 1: 2.0, 2: 1.0, 3: 1.5}
    loads = [sum(w[i] for i, r in own.items() if r == k) for k in (0, 1)]
    assert abs(loads[0] - loads[1]) <= 2.0
    out = capsys.readouterr().out
    assert out.startswith("partition: procs=2") and "partition_time_s=" in out
    m = parse_metrics((tmp_path / "o" / "metrics.txt").read_text())
    assert m["procs"] == 2 and np.isnan(m["max_edge_cut"])


@pytest.mark.parametrize("splitter", ["midpoint", "median-select"])
@pytest.mark.parametrize("curve", ["morton", "hilbert"])
def test_partition_reproducible_across_workers(tmp_path, points, splitter, curve):
    outs = []
    for t in (1, 4):
        d = tmp_path / f"t{t}"
        assert run(["partition", str(points), "--procs", "8", "--workers", str(t),
                    "--splitter", splitter, "--curve", curve, "--seed", "3",
                    "--out", str(d)]) == 0
        outs.append(_files(d))
    assert outs[0] == outs[1]
    perm = read_permutation(tmp_path / "t1" / "permutation.txt")
    assert sorted(perm.tolist()) == sorted(read_points(points).ids.tolist())


def test_partition_graph_and_migration(tmp_path, points):
    ds = read_points(points)
    graph = tmp_path / "g.txt"
    graph.write_text("".join(f"{a} {b}\n" for a, b in zip(ds.ids[:-1].tolist(), ds.ids[1:].tolist())))
    first = tmp_path / "a"
    assert run(["partition", str(points), "--procs", "4", "--graph", str(graph),
                "--out", str(first)]) == 0
    m = parse_metrics((first / "metrics.txt").read_text())
    assert m["max_edge_cut"] >= 1 and m["max_degree"] >= 1
    second = tmp_path / "b"
    assert run(["partition", str(points), "--procs", "4", "--curve", "hilbert",
                "--previous", str(first / "ownership.txt"), "--max-msg-size", "50",
                "--out", str(second)]) == 0
    old = read_ownership(first / "ownership.txt")
    new = read_ownership(second / "ownership.txt")
    for line in (second / "migration.txt").read_text().splitlines():
        rnd, src, dst, *ids = map(int, line.split())
        assert len(ids) <= 50
        for i in ids:
            assert old[i] == src
            old[i] = dst
    assert old == new


def test_dynamic_synthetic_schedule(tmp_path, points):
    ds = read_points(points)
    wl = tmp_path / "w.txt"
    write_workload(wl, random_workload(ds, 500, seed=1))
    traces = []
    for t in (1, 4, 16):
        d = tmp_path / f"d{t}"
        assert run(["dynamic", str(points), str(wl), "--cost-clock", "synthetic",
                    "--lb-cost", "10", "--excess", "3", "--max-iter", "10",
                    "--procs", "4", "--workers", str(t), "--out", str(d)]) == 0
        traces.append((d / "trace.csv").read_bytes())
    assert traces[0] == traces[1] == traces[2]
    rows = [line.split(",") for line in traces[0].decode().splitlines()[1:]]
    assert [int(r[0]) for r in rows if r[3] == "1"] == [0, 5, 10]


def test_locate_and_knn(tmp_path, points):
    ds = read_points(points)
    q = tmp_path / "q.txt"
    lines = [" ".join(repr(v) for v in c) for c in ds.coords[:5].tolist()] + ["0.123 0.456"]
    q.write_text("\n".join(lines) + "\n")
    assert run(["locate", str(points), str(q), "--out", str(tmp_path)]) == 0
    res = read_results(tmp_path / "locate.txt")
    assert [r[1] for r in res[:5]] == ds.ids[:5].tolist()
    assert res[5][1] == -1 and res[5][2] == float("inf")
    assert run(["locate", str(points), str(q), "--curve", "hilbert", "--out", str(tmp_path / "h")]) == 0
    assert read_results(tmp_path / "h" / "locate.txt") == res

    assert run(["knn", str(points), str(q), "--k", "3", "--cutoff", "1", "--out", str(tmp_path)]) == 0
    res = read_results(tmp_path / "knn.txt")
    assert len(res) == 18
    assert res[0][1] == ds.ids[0] and res[0][2] == 0.0


def test_spmv_eval_identity(tmp_path):
    mtx = tmp_path / "i.mtx"
    mtx.write_text("%%MatrixMarket matrix coordinate real general\n4 4 4\n"
                   + "".join(f"{i} {i} 1.0\n" for i in range(1, 5)))
    assert run(["spmv-eval", str(mtx), "--procs", "2", "--out", str(tmp_path)]) == 0
    for name in ("sfc", "rowwise"):
        m = parse_metrics((tmp_path / f"metrics_{name}.txt").read_text())
        assert m["max_edge_cut"] == 0 and m["max_load"] == 2


def test_spmv_eval_edgelist(tmp_path):
    e = tmp_path / "e.txt"
    e.write_text("0 1\n1 2\n2 0\n")
    assert run(["spmv-eval", str(e), "--format", "edgelist", "--procs", "3",
                "--out", str(tmp_path)]) == 0
    assert parse_metrics((tmp_path / "metrics_sfc.txt").read_text())["max_load"] == 1


def test_runtime_error_exit_1(tmp_path, capsys):
    assert run(["partition", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1.0 0.5 0.5\n1 1.0 0.5\n")
    assert run(["partition", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.txt:2" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["partition"],
    ["partition", "x", "--curve", "peano"],
    ["partition", "x", "--bucket-size", "0"],
    ["generate", "--n", "ten"],
])
def test_usage_error_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        run(argv)
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sfcpart", "generate", "--n", "10",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "sfcpart", "bogus"], capture_output=True, text=True)
    assert r.returncode == 2
