"""Graph coarsening: iteratively merge operation pairs under a node budget.

Two kinds of merges are attempted in alternating passes until the node
budget is met or no candidate remains:

* edge merges — an edge (i1, i2) where i2 is i1's only consumer-side
  dependent with a single predecessor and i1 has a single successor;
  such merges never lengthen the critical path;
* non-edge merges — unrelated pairs whose merge cannot form a cycle,
  admitted under stricter size thresholds because they may lengthen the
  critical path.

Candidate selection ignores single-hop redundant edges so structurally
important edges are not hidden by shortcuts.
"""
from __future__ import annotations

from dataclasses import dataclass

from .graph import ComputationGraph, DependencyEdge, GraphError, Operation


@dataclass(frozen=True)
class CoarsenConfig:
    node_budget: int
    edge_merge_max_duration: float
    edge_merge_max_memory: float
    nonedge_merge_max_duration: float
    nonedge_merge_max_memory: float

    def __post_init__(self):
        if self.node_budget < 1:
            raise ValueError("node_budget must be >= 1")
        if self.nonedge_merge_max_duration > self.edge_merge_max_duration:
            raise ValueError("non-edge duration threshold must not exceed "
                             "the edge threshold")
        if self.nonedge_merge_max_memory > self.edge_merge_max_memory:
            raise ValueError("non-edge memory threshold must not exceed "
                             "the edge threshold")

    @classmethod
    def for_graph(cls, g: ComputationGraph, node_budget: int) -> "CoarsenConfig":
        """Default thresholds sized from the graph and the budget.

        Edge merges allow nodes up to twice the mean size; when the budget
        implies larger average nodes the thresholds scale with
        total/budget instead, so the budget stays reachable. Non-edge
        merges get half the edge allowance.
        """
        n = max(len(g), 1)
        mean_dur = g.total_duration() / n
        mean_mem = (sum(op.weight_mem for op in g.operations.values()) / n)
        edge_dur = max(2 * mean_dur, 2 * g.total_duration() / node_budget)
        edge_mem = max(2 * mean_mem, 2 * n * mean_mem / node_budget)
        return cls(
            node_budget=node_budget,
            edge_merge_max_duration=edge_dur,
            edge_merge_max_memory=edge_mem,
            nonedge_merge_max_duration=edge_dur / 2,
            nonedge_merge_max_memory=edge_mem / 2,
        )


@dataclass(frozen=True)
class MergeRecord:
    """Provenance of one coarse node: the original ids it absorbed."""

    new_id: str
    absorbed: tuple[str, ...]


def _within(g: ComputationGraph, a: str, b: str,
            max_duration: float, max_memory: float) -> bool:
    oa, ob = g.operations[a], g.operations[b]
    return (oa.duration + ob.duration <= max_duration
            and oa.weight_mem + ob.weight_mem <= max_memory)


def get_candidate_edge(g: ComputationGraph,
                       cfg: CoarsenConfig) -> tuple[str, str] | None:
    """Smallest qualifying adjacent pair, or None.

    Evaluated on the graph with single-hop redundant edges removed: the
    consumer must have exactly one predecessor and the producer exactly
    one successor there, and the merged node must respect the edge-merge
    thresholds.
    """
    redundant = g.redundant_edges()
    n_succ: dict[str, int] = {i: 0 for i in g.operations}
    n_pred: dict[str, int] = {i: 0 for i in g.operations}
    for key in g.edges:
        if key in redundant:
            continue
        n_succ[key[0]] += 1
        n_pred[key[1]] += 1
    for (a, b) in g.edges:
        if (a, b) in redundant:
            continue
        if n_succ[a] == 1 and n_pred[b] == 1 and _within(
                g, a, b, cfg.edge_merge_max_duration, cfg.edge_merge_max_memory):
            return (a, b)
    return None


def get_candidate_nonedge(g: ComputationGraph,
                          cfg: CoarsenConfig) -> tuple[str, str] | None:
    """Smallest qualifying unconnected pair, or None.

    The pair must have no edge in either direction and merging it must
    not create a cycle (no multi-hop path between the two in either
    direction); stricter non-edge thresholds apply.
    """
    ids = list(g.operations)
    reach: dict[str, set[str]] = {}

    def reachable(x: str) -> set[str]:
        if x not in reach:
            reach[x] = g.reachable_from(x)
        return reach[x]

    for idx, a in enumerate(ids):
        for b in ids[idx + 1:]:
            if (a, b) in g.edges or (b, a) in g.edges:
                continue
            if not _within(g, a, b, cfg.nonedge_merge_max_duration,
                           cfg.nonedge_merge_max_memory):
                continue
            if b in reachable(a) or a in reachable(b):
                continue
            return (a, b)
    return None


def merge_nodes(g: ComputationGraph, a: str, b: str,
                new_id: str | None = None
                ) -> tuple[ComputationGraph, MergeRecord]:
    """Merge operations `a` and `b` into one node.

    Attributes sum; incident edges are rewired to the merged node with
    parallel edges collapsed (communication durations summed); the direct
    edge between the pair, if any, disappears.
    """
    if a not in g.operations or b not in g.operations:
        raise GraphError(f"cannot merge unknown operations {a!r}, {b!r}")
    for x, y in ((a, b), (b, a)):
        if any(s != y and y in g.reachable_from(s) for s in g.successors(x)):
            raise GraphError(
                f"merging {a!r} and {b!r} would create a cycle")

    if new_id is None:
        new_id = f"{a}+{b}"
    if new_id in g.operations and new_id not in (a, b):
        raise GraphError(f"merged id {new_id!r} already in use")

    oa, ob = g.operations[a], g.operations[b]
    merged = Operation(
        id=new_id,
        duration=oa.duration + ob.duration,
        weight_mem=oa.weight_mem + ob.weight_mem,
        activation_delta=oa.activation_delta + ob.activation_delta,
        weight_refs=tuple(sorted(set(oa.weight_refs) | set(ob.weight_refs))),
    )
    ops = [op for i, op in g.operations.items() if i not in (a, b)]
    ops.append(merged)

    collapsed: dict[tuple[str, str], float] = {}
    for (p, c), e in g.edges.items():
        p2 = new_id if p in (a, b) else p
        c2 = new_id if c in (a, b) else c
        if p2 == c2:
            continue
        collapsed[(p2, c2)] = collapsed.get((p2, c2), 0) + e.comm_duration
    edges = [DependencyEdge(p, c, d) for (p, c), d in collapsed.items()]

    g2 = ComputationGraph(ops, edges, g.weights.values())
    return g2, MergeRecord(new_id=new_id, absorbed=(a, b))


def coarsen(g: ComputationGraph, cfg: CoarsenConfig
            ) -> tuple[ComputationGraph, list[MergeRecord]]:
    """Shrink `g` below `cfg.node_budget` by repeated pair merges.

    Returns the coarse graph and one provenance record per coarse node
    that absorbed anything, with absorbed ids in the original topological
    order. Total duration, weight memory, and activation delta are
    conserved. If the budget is unreachable, the fixed point is returned.
    """
    topo_index = {i: k for k, i in enumerate(g.topo_order())}
    origin: dict[str, list[str]] = {}
    counter = 0
    cur = g

    def fresh_id() -> str:
        nonlocal counter
        while True:
            counter += 1
            cand = f"m{counter:03d}"
            if cand not in cur.operations and cand not in g.operations:
                return cand

    def apply(pair: tuple[str, str]) -> None:
        nonlocal cur
        a, b = pair
        cur, rec = merge_nodes(cur, a, b, new_id=fresh_id())
        parts = origin.pop(a, [a]) + origin.pop(b, [b])
        origin[rec.new_id] = parts

    while len(cur) > cfg.node_budget:
        merged_any = False
        while len(cur) > cfg.node_budget:
            pair = get_candidate_edge(cur, cfg)
            if pair is None:
                break
            apply(pair)
            merged_any = True
        while len(cur) > cfg.node_budget:
            pair = get_candidate_nonedge(cur, cfg)
            if pair is None:
                break
            apply(pair)
            merged_any = True
        if not merged_any:
            break

    records = [
        MergeRecord(new_id=i,
                    absorbed=tuple(sorted(parts, key=topo_index.__getitem__)))
        for i, parts in sorted(origin.items())
    ]
    return cur, records
