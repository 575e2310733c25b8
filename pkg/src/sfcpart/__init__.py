"""Geometric partitioning with kd-trees, space-filling curves and greedy knapsack slicing."""

from .balance import (MigrationPlan, PartitionCuts, QualityMetrics, greedy_knapsack,
                      incremental_rebalance, partition_quality, plan_migration)
from .core import BoundingBox, Dataset, InputError, WeightedPoint, bbox, generate, normalize
from .dynamic import (ControllerState, CostClock, UpdateOp, adjustments, apply_updates,
                      full_load_balance, run_dynamic)
from .kdtree import KdTree, SplitterKind, SplitterStrategy, TreeParams, build_static_tree
from .kernels import BACKEND
from .query import KnnParams, PointIndex
from .sfc import HILBERT, MORTON, order_points, quantize_key
from .spmv import (SparseMatrixCoo, comm_metrics, load_matrix, partition_nnz_sfc,
                   partition_rowwise, spmv_sim, vector_plan)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BoundingBox", "ControllerState", "CostClock", "Dataset", "HILBERT", "InputError",
    "KdTree", "KnnParams", "MORTON", "MigrationPlan", "PartitionCuts", "PointIndex",
    "QualityMetrics", "SparseMatrixCoo", "SplitterKind", "SplitterStrategy", "TreeParams",
    "UpdateOp", "WeightedPoint", "adjustments", "apply_updates", "bbox", "build_static_tree",
    "comm_metrics", "full_load_balance", "generate", "greedy_knapsack", "incremental_rebalance",
    "load_matrix", "normalize", "order_points", "partition_nnz_sfc", "partition_quality",
    "partition_rowwise", "plan_migration", "quantize_key", "run_dynamic", "spmv_sim",
    "vector_plan",
]
