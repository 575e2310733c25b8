"""Command-line entry point."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .balance import (QualityMetrics, greedy_knapsack, partition_quality, plan_migration,
                      read_ownership, write_metrics, write_ownership)
from .core import InputError, atomic_write_lines, generate, normalize, read_points, write_points
from .dynamic import ControllerState, CostClock, read_workload, run_dynamic, write_trace
from .kdtree import SplitterKind, SplitterStrategy, TreeParams, build_static_tree
from .query import KnnParams, PointIndex, read_queries, write_results
from .sfc import CURVES, MORTON, order_points, write_permutation
from .spmv import comm_metrics, load_matrix, partition_nnz_sfc, partition_rowwise

SPLITTERS = [k.value for k in SplitterKind]


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--splitter", choices=SPLITTERS, default="midpoint")
    common.add_argument("--curve", choices=CURVES, default=MORTON)
    common.add_argument("--bucket-size", type=_positive, default=32)
    common.add_argument("--procs", type=_positive, default=1, help="number of ranks P")
    common.add_argument("--workers", type=_positive, default=1, help="worker threads T")
    common.add_argument("--k1", type=_positive, default=None, help="top nodes (default 2*procs)")
    common.add_argument("--k2", type=_positive, default=None, help="sub-top nodes per top node (default 2*workers)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--bits", type=_positive, default=None, help="quantization bits per dimension")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    p = argparse.ArgumentParser(prog="sfcpart", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic point file")
    g.add_argument("--dist", choices=["uniform", "clustered"], default="uniform")
    g.add_argument("--n", type=_positive, required=True)
    g.add_argument("--dim", type=_positive, default=2)
    g.add_argument("--name", default="points.txt")

    pa = sub.add_parser("partition", parents=[common], help="points -> permutation, ownership, metrics")
    pa.add_argument("points", type=Path)
    pa.add_argument("--format", choices=["points"], default="points")
    pa.add_argument("--graph", type=Path, help="edge list 'id id [weight]' for edge metrics")
    pa.add_argument("--previous", type=Path, help="earlier ownership file; writes a migration plan")
    pa.add_argument("--max-msg-size", type=_positive, default=1024, help="points per migration message")

    d = sub.add_parser("dynamic", parents=[common], help="run the amortized balancing loop")
    d.add_argument("points", type=Path)
    d.add_argument("workload", type=Path)
    d.add_argument("--step-size", type=_positive, default=1)
    d.add_argument("--max-iter", type=_positive, default=10)
    d.add_argument("--cost-clock", choices=["wall", "synthetic"], default="wall")
    d.add_argument("--lb-cost", type=float, default=10.0, help="synthetic cost of a full balance")
    d.add_argument("--op-cost", type=float, default=1.0, help="synthetic baseline cost per op")
    d.add_argument("--excess", type=float, default=0.0, help="synthetic per-batch cost excess")

    for name, helptext in (("locate", "exact point location"), ("knn", "bucket-window k-NN")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("points", type=Path)
        q.add_argument("queries", type=Path)
        if name == "knn":
            q.add_argument("--k", type=_positive, default=3)
            q.add_argument("--cutoff", type=_nonneg, default=1, help="bucket window radius")

    s = sub.add_parser("spmv-eval", parents=[common], help="SFC vs row-wise metrics for a matrix")
    s.add_argument("matrix", type=Path)
    s.add_argument("--format", choices=["mm", "edgelist"], default="mm")
    return p


def _params(args, **kw) -> TreeParams:
    return TreeParams(bucket_size=args.bucket_size, splitter=SplitterStrategy(args.splitter),
                      k1=_k1(args), k2=_k2(args), workers=args.workers, seed=args.seed,
                      bits=args.bits, **kw)


def _k1(args) -> int:
    return args.k1 or 2 * args.procs


def _k2(args) -> int:
    return args.k2 or 2 * args.workers


def cmd_generate(args) -> str:
    ds = generate(args.dist, args.n, args.dim, args.seed)
    path = args.out / args.name
    write_points(path, ds)
    return f"generate: wrote {len(ds)} points to {path}"


def _read_edges(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split()
            if not s or s[0].startswith("#"):
                continue
            if len(s) not in (2, 3):
                raise InputError(f"{path}:{lineno}: expected 'id id [weight]'")
            rows.append([float(v) for v in s] + ([1.0] if len(s) == 2 else []))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def cmd_partition(args) -> str:
    ds = read_points(args.points)
    t0 = time.perf_counter()
    unit = normalize(ds)
    tree = build_static_tree(unit, _params(args))
    order = order_points(tree, args.curve)
    cuts = greedy_knapsack(tree.store.weights[order.rows], args.procs)
    elapsed = time.perf_counter() - t0

    ranks = cuts.ranks()
    write_permutation(args.out / "permutation.txt", order)
    write_ownership(args.out / "ownership.txt", order.permutation, ranks)
    owner = dict(zip(order.permutation.tolist(), ranks.tolist()))
    weights = dict(zip(ds.ids.tolist(), ds.weights.tolist()))
    edges = _read_edges(args.graph) if args.graph else ()
    m = partition_quality(owner, edges, weights, args.procs)
    # timings stay on stdout so output files are reproducible byte for byte
    write_metrics(args.out / "metrics.txt", m, with_edges=args.graph is not None)
    summary = "partition: " + m.to_line(elapsed, with_edges=args.graph is not None)
    if args.previous:
        plan = plan_migration(read_ownership(args.previous), owner, args.max_msg_size)
        atomic_write_lines(args.out / "migration.txt", (
            f"{r} {msg.src} {msg.dst} " + " ".join(map(str, msg.ids))
            for r, rnd in enumerate(plan.rounds) for msg in rnd))
        summary += f" migration_rounds={plan.num_rounds} moved={plan.num_moved}"
    return summary


def cmd_dynamic(args) -> str:
    ds = read_points(args.points)
    ops = read_workload(args.workload, ds.dim)
    if args.cost_clock == "synthetic":
        clock = CostClock.synthetic(args.lb_cost, args.op_cost, args.excess)
    else:
        clock = CostClock()
    ctrl = ControllerState(step_size=args.step_size, max_iter=args.max_iter)
    trace = run_dynamic(ds, ops, ctrl, clock, _params(args), args.procs, args.curve, args.workers)
    write_trace(args.out / "trace.csv", trace)
    for i, msg in trace.errors:
        print(f"warning: op {i}: {msg}", file=sys.stderr)
    return (f"dynamic: batches={len(trace.rows) - 1} balances={trace.num_balances} "
            f"errors={len(trace.errors)}")


def _index(args):
    ds = read_points(args.points)
    unit = normalize(ds)
    # Morton over midpoint splits gets the uniform decomposition and its key fast path
    regular = args.curve == MORTON and args.splitter == "midpoint"
    tree = build_static_tree(unit, _params(args, regular=regular))
    idx = PointIndex.build(tree, order_points(tree, args.curve))
    queries = read_queries(args.queries, ds.dim)
    return idx, unit.mapping.apply(queries) if len(queries) else queries


def cmd_locate(args) -> str:
    idx, queries = _index(args)
    rows = []
    found = 0
    for qi, q in enumerate(queries):
        loc = idx.locate(q)
        found += loc.found
        rows.append((qi, loc.id, 0.0 if loc.found else float("inf")))
    write_results(args.out / "locate.txt", rows)
    return f"locate: queries={len(queries)} found={found} fast_path={idx.fast_path}"


def cmd_knn(args) -> str:
    idx, queries = _index(args)
    params = KnnParams(args.k, args.cutoff)
    rows = []
    short = 0
    for qi, q in enumerate(queries):
        res = idx.knn(q, params)
        short += res.short
        rows.extend((qi, pid, dist) for pid, dist in res)
    write_results(args.out / "knn.txt", rows)
    return f"knn: queries={len(queries)} k={args.k} cutoff={args.cutoff} short={short}"


def cmd_spmv(args) -> str:
    m = load_matrix(args.matrix, args.format)
    lines = []
    for name in ("sfc", "rowwise"):
        t0 = time.perf_counter()
        if name == "sfc":
            part = partition_nnz_sfc(m, args.procs, args.curve, SplitterStrategy(args.splitter),
                                     args.bucket_size, args.workers, args.seed, _k1(args), _k2(args))
        else:
            part = partition_rowwise(m, args.procs)
        elapsed = time.perf_counter() - t0
        metrics: QualityMetrics = comm_metrics(m, part)
        write_metrics(args.out / f"metrics_{name}.txt", metrics)
        lines.append(f"spmv-eval {name}: " + metrics.to_line(elapsed))
    return "\n".join(lines)


COMMANDS = {
    "generate": cmd_generate,
    "partition": cmd_partition,
    "dynamic": cmd_dynamic,
    "locate": cmd_locate,
    "knn": cmd_knn,
    "spmv-eval": cmd_spmv,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        print(COMMANDS[args.command](args))
    except (InputError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
