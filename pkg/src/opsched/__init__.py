"""Operator-level parallel schedule planning for computation DAGs.

The package models scheduling of a computation graph onto a device
cluster as a mixed-integer program, solves it with a built-in exact
branch-and-bound (or exports MPS/LP for external solvers), verifies
solutions with an independent discrete-event replay, and ships
benchmark scenario generators plus chrome-tracing export.
"""
from .coarsen import CoarsenConfig, MergeRecord, coarsen
from .graph import (Channel, ComputationGraph, DependencyEdge, GraphError,
                    HardwareCluster, Machine, Operation, WeightAsset,
                    dump_cluster, dump_computation_graph, load_cluster,
                    load_computation_graph)
from .model import (ModelError, ModelOptions, ScheduleModel,
                    build_model, clear_primal_bound, set_primal_bound)
from .mpswriter import export_lp, export_mps
from .scenarios import (DualPipeSpec, RandomDagSpec, dualpipe_bubble_target,
                        dualpipe_primal_bound, dualpipe_reference,
                        gen_dualpipe, gen_random_dag)
from .simulate import VerifyReport, expand_schedule, verify
from .solver import (Solution, SolveConfig, SolveError, refine_idle, solve,
                     warm_start)
from .trace import TraceEvent, export_trace
from .weights import extend_model

__all__ = [
    "Channel", "CoarsenConfig", "ComputationGraph", "DependencyEdge",
    "DualPipeSpec", "GraphError", "HardwareCluster", "Machine",
    "MergeRecord", "ModelError", "ModelOptions", "Operation",
    "RandomDagSpec", "ScheduleModel", "Solution", "SolveConfig",
    "SolveError", "TraceEvent", "VerifyReport", "WeightAsset",
    "build_model", "clear_primal_bound", "coarsen",
    "dualpipe_bubble_target", "dualpipe_primal_bound",
    "dualpipe_reference", "dump_cluster", "dump_computation_graph",
    "expand_schedule", "export_lp", "export_mps", "export_trace",
    "extend_model", "gen_dualpipe", "gen_random_dag", "load_cluster",
    "load_computation_graph", "refine_idle", "set_primal_bound", "solve",
    "verify", "warm_start",
]

__version__ = "0.1.0"
