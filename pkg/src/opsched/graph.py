"""Computation DAG and hardware cluster model, plus file ingestion.

The computation graph holds operations (durations, memory effects,
optional weight-asset references) connected by data-dependency edges.
The cluster holds machines with memory capacities and directed
communication channels. Both are immutable after construction and all
iteration is in id order so downstream model building is reproducible.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import IO, Any, Iterable, Mapping


class GraphError(ValueError):
    """Invalid graph or cluster document (cycle, dangling id, bad field)."""


def _check_number(value: Any, what: str, owner: str, allow_negative: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise GraphError(f"{what} of {owner!r} must be a number, got {value!r}")
    if not allow_negative and value < 0:
        raise GraphError(f"{what} of {owner!r} must be non-negative, got {value!r}")
    return value


@dataclass(frozen=True)
class Operation:
    """A single non-preemptive unit of work."""

    id: str
    duration: float
    weight_mem: float = 0
    activation_delta: float = 0
    weight_refs: tuple[str, ...] = ()

    def __post_init__(self):
        _check_number(self.duration, "duration", self.id)
        _check_number(self.weight_mem, "weight_mem", self.id)
        _check_number(self.activation_delta, "activation_delta", self.id,
                      allow_negative=True)


@dataclass(frozen=True)
class DependencyEdge:
    """Data dependency: `producer` output feeds `consumer`."""

    producer: str
    consumer: str
    comm_duration: float = 0

    def __post_init__(self):
        if self.producer == self.consumer:
            raise GraphError(f"self-dependency on {self.producer!r}")
        _check_number(self.comm_duration, "comm_duration",
                      f"{self.producer}->{self.consumer}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.producer, self.consumer)


@dataclass(frozen=True)
class WeightAsset:
    """A parameter block operations need resident in device memory."""

    id: str
    size: float
    load_cost: float = 0
    unload_cost: float = 0

    def __post_init__(self):
        _check_number(self.size, "size", self.id)
        _check_number(self.load_cost, "load_cost", self.id)
        _check_number(self.unload_cost, "unload_cost", self.id)


class ComputationGraph:
    """Immutable DAG of operations with dependency edges."""

    def __init__(self, operations: Iterable[Operation],
                 edges: Iterable[DependencyEdge] = (),
                 weights: Iterable[WeightAsset] = ()):
        ops: dict[str, Operation] = {}
        for op in operations:
            if op.id in ops:
                raise GraphError(f"duplicate operation id {op.id!r}")
            ops[op.id] = op
        self._ops = dict(sorted(ops.items()))

        wts: dict[str, WeightAsset] = {}
        for w in weights:
            if w.id in wts:
                raise GraphError(f"duplicate weight id {w.id!r}")
            wts[w.id] = w
        self._weights = dict(sorted(wts.items()))

        edge_map: dict[tuple[str, str], DependencyEdge] = {}
        for e in edges:
            for end in e.key:
                if end not in self._ops:
                    raise GraphError(
                        f"edge {e.producer!r}->{e.consumer!r} references "
                        f"unknown operation {end!r}")
            if e.key in edge_map:
                raise GraphError(
                    f"duplicate edge {e.producer!r}->{e.consumer!r}")
            edge_map[e.key] = e
        self._edges = dict(sorted(edge_map.items()))

        for op in self._ops.values():
            for ref in op.weight_refs:
                if ref not in self._weights:
                    raise GraphError(
                        f"operation {op.id!r} references unknown weight {ref!r}")

        self._succ: dict[str, tuple[str, ...]] = {}
        self._pred: dict[str, tuple[str, ...]] = {}
        succ: dict[str, list[str]] = {i: [] for i in self._ops}
        pred: dict[str, list[str]] = {i: [] for i in self._ops}
        for (a, b) in self._edges:
            succ[a].append(b)
            pred[b].append(a)
        self._succ = {i: tuple(v) for i, v in succ.items()}
        self._pred = {i: tuple(v) for i, v in pred.items()}

        self._topo = self._compute_topo()

    # -- accessors ---------------------------------------------------------

    @property
    def operations(self) -> Mapping[str, Operation]:
        return self._ops

    @property
    def edges(self) -> Mapping[tuple[str, str], DependencyEdge]:
        return self._edges

    @property
    def weights(self) -> Mapping[str, WeightAsset]:
        return self._weights

    def successors(self, op_id: str) -> tuple[str, ...]:
        return self._succ[op_id]

    def predecessors(self, op_id: str) -> tuple[str, ...]:
        return self._pred[op_id]

    def __len__(self) -> int:
        return len(self._ops)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ComputationGraph):
            return NotImplemented
        return (self._ops == other._ops and self._edges == other._edges
                and self._weights == other._weights)

    def total_duration(self) -> float:
        return sum(op.duration for op in self._ops.values())

    def total_comm_duration(self) -> float:
        return sum(e.comm_duration for e in self._edges.values())

    # -- DAG utilities -----------------------------------------------------

    def _compute_topo(self) -> tuple[str, ...]:
        # Kahn's algorithm with an id-sorted frontier for determinism.
        indeg = {i: len(self._pred[i]) for i in self._ops}
        frontier = sorted(i for i, d in indeg.items() if d == 0)
        order: list[str] = []
        heapq.heapify(frontier)
        while frontier:
            i = heapq.heappop(frontier)
            order.append(i)
            for s in self._succ[i]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(frontier, s)
        if len(order) != len(self._ops):
            stuck = sorted(i for i, d in indeg.items() if d > 0)
            raise GraphError(f"cycle detected involving {stuck}")
        return tuple(order)

    def topo_order(self) -> tuple[str, ...]:
        """Topological order of operation ids, ties broken by id."""
        return self._topo

    def redundant_edges(self) -> set[tuple[str, str]]:
        """Edges (i1,i2) bypassed by a single intermediate hop.

        Returns exactly the edges for which some i3 has both (i1,i3) and
        (i3,i2) in the edge set. Multi-hop bypasses are deliberately not
        flagged; use ``transitively_redundant_edges`` for the full
        reduction.
        """
        out = set()
        for (a, b) in self._edges:
            succ_a = set(self._succ[a])
            if any(m in succ_a for m in self._pred[b] if m != a):
                out.add((a, b))
        return out

    def transitively_redundant_edges(self) -> set[tuple[str, str]]:
        """Edges implied by any longer path (full transitive reduction)."""
        reach_cache: dict[str, set[str]] = {}
        for i in reversed(self._topo):
            r: set[str] = set()
            for s in self._succ[i]:
                r.add(s)
                r |= reach_cache[s]
            reach_cache[i] = r
        out = set()
        for (a, b) in self._edges:
            if any(m != b and b in reach_cache[m] for m in self._succ[a]):
                out.add((a, b))
        return out

    def reachable_from(self, op_id: str) -> set[str]:
        """All operations reachable from `op_id` via edges (excluding it)."""
        seen: set[str] = set()
        stack = list(self._succ[op_id])
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self._succ[n])
        return seen

    def critical_path_length(self) -> float:
        """Longest path measured in operation durations (comm ignored)."""
        dist: dict[str, float] = {}
        for i in self._topo:
            dist[i] = self._ops[i].duration + max(
                (dist[p] for p in self._pred[i]), default=0)
        return max(dist.values(), default=0)


@dataclass(frozen=True)
class Machine:
    id: str
    memory_capacity: float

    def __post_init__(self):
        _check_number(self.memory_capacity, "memory_capacity", self.id)
        if self.memory_capacity <= 0:
            raise GraphError(
                f"memory_capacity of {self.id!r} must be positive")


@dataclass(frozen=True)
class Channel:
    from_machine: str
    to_machine: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.from_machine, self.to_machine)


class HardwareCluster:
    """Machines plus directed channels; self-channels are implicit.

    Every machine gets an implicit (j, j) channel so dependent operations
    can share a device; transfers over a self-channel take zero time.
    """

    def __init__(self, machines: Iterable[Machine],
                 channels: Iterable[Channel] = ()):
        ms: dict[str, Machine] = {}
        for m in machines:
            if m.id in ms:
                raise GraphError(f"duplicate machine id {m.id!r}")
            ms[m.id] = m
        if not ms:
            raise GraphError("cluster has no machines")
        self._machines = dict(sorted(ms.items()))

        chans: dict[tuple[str, str], Channel] = {}
        for c in channels:
            for end in c.key:
                if end not in self._machines:
                    raise GraphError(
                        f"channel {c.from_machine!r}->{c.to_machine!r} "
                        f"references unknown machine {end!r}")
            if c.key in chans:
                raise GraphError(
                    f"duplicate channel {c.from_machine!r}->{c.to_machine!r}")
            chans[c.key] = c
        for mid in self._machines:
            chans.setdefault((mid, mid), Channel(mid, mid))
        self._channels = dict(sorted(chans.items()))

    @property
    def machines(self) -> Mapping[str, Machine]:
        return self._machines

    @property
    def channels(self) -> Mapping[tuple[str, str], Channel]:
        return self._channels

    def has_channel(self, j1: str, j2: str) -> bool:
        return (j1, j2) in self._channels

    def __eq__(self, other) -> bool:
        if not isinstance(other, HardwareCluster):
            return NotImplemented
        return (self._machines == other._machines
                and self._channels == other._channels)


# -- file ingestion ---------------------------------------------------------

_OP_FIELDS = {"id", "duration", "weight_mem", "activation_delta", "weight_refs"}
_EDGE_FIELDS = {"from", "to", "comm_duration"}
_WEIGHT_FIELDS = {"id", "size", "load_cost", "unload_cost"}
_MACHINE_FIELDS = {"id", "memory_capacity"}
_CHANNEL_FIELDS = {"from", "to"}


def _reject_unknown(entry: Mapping, allowed: set[str], what: str):
    unknown = set(entry) - allowed
    if unknown:
        raise GraphError(f"unknown fields {sorted(unknown)} in {what}: {entry}")


def _load_doc(source: str | IO[str] | Mapping) -> Mapping:
    if isinstance(source, Mapping):
        return source
    if isinstance(source, str):
        doc = json.loads(source)
    else:
        doc = json.load(source)
    if not isinstance(doc, Mapping):
        raise GraphError("document root must be an object")
    return doc


def load_computation_graph(source: str | IO[str] | Mapping) -> ComputationGraph:
    """Parse and validate a graph document (JSON text, stream, or mapping)."""
    doc = _load_doc(source)
    _reject_unknown(doc, {"operations", "edges", "weights"}, "graph document")
    ops = []
    for entry in doc.get("operations", []):
        _reject_unknown(entry, _OP_FIELDS, "operation")
        if "id" not in entry or "duration" not in entry:
            raise GraphError(f"operation missing id/duration: {entry}")
        ops.append(Operation(
            id=str(entry["id"]),
            duration=entry["duration"],
            weight_mem=entry.get("weight_mem", 0),
            activation_delta=entry.get("activation_delta", 0),
            weight_refs=tuple(entry.get("weight_refs", ())),
        ))
    edges = []
    for entry in doc.get("edges", []):
        _reject_unknown(entry, _EDGE_FIELDS, "edge")
        if "from" not in entry or "to" not in entry:
            raise GraphError(f"edge missing from/to: {entry}")
        edges.append(DependencyEdge(
            producer=str(entry["from"]),
            consumer=str(entry["to"]),
            comm_duration=entry.get("comm_duration", 0),
        ))
    weights = []
    for entry in doc.get("weights", []):
        _reject_unknown(entry, _WEIGHT_FIELDS, "weight")
        if "id" not in entry or "size" not in entry:
            raise GraphError(f"weight missing id/size: {entry}")
        weights.append(WeightAsset(
            id=str(entry["id"]),
            size=entry["size"],
            load_cost=entry.get("load_cost", 0),
            unload_cost=entry.get("unload_cost", 0),
        ))
    return ComputationGraph(ops, edges, weights)


def dump_computation_graph(g: ComputationGraph) -> dict:
    """Inverse of :func:`load_computation_graph` (stable key order)."""
    doc: dict[str, Any] = {
        "operations": [
            {
                "id": op.id,
                "duration": op.duration,
                "weight_mem": op.weight_mem,
                "activation_delta": op.activation_delta,
                **({"weight_refs": list(op.weight_refs)} if op.weight_refs else {}),
            }
            for op in g.operations.values()
        ],
        "edges": [
            {"from": e.producer, "to": e.consumer,
             "comm_duration": e.comm_duration}
            for e in g.edges.values()
        ],
    }
    if g.weights:
        doc["weights"] = [
            {"id": w.id, "size": w.size, "load_cost": w.load_cost,
             "unload_cost": w.unload_cost}
            for w in g.weights.values()
        ]
    return doc


def load_cluster(source: str | IO[str] | Mapping) -> HardwareCluster:
    """Parse and validate a cluster document."""
    doc = _load_doc(source)
    _reject_unknown(doc, {"machines", "channels"}, "cluster document")
    machines = []
    for entry in doc.get("machines", []):
        _reject_unknown(entry, _MACHINE_FIELDS, "machine")
        if "id" not in entry or "memory_capacity" not in entry:
            raise GraphError(f"machine missing id/memory_capacity: {entry}")
        machines.append(Machine(id=str(entry["id"]),
                                memory_capacity=entry["memory_capacity"]))
    channels = []
    for entry in doc.get("channels", []):
        _reject_unknown(entry, _CHANNEL_FIELDS, "channel")
        if "from" not in entry or "to" not in entry:
            raise GraphError(f"channel missing from/to: {entry}")
        channels.append(Channel(from_machine=str(entry["from"]),
                                to_machine=str(entry["to"])))
    return HardwareCluster(machines, channels)


def dump_cluster(h: HardwareCluster) -> dict:
    """Inverse of :func:`load_cluster`; implicit self-channels omitted."""
    return {
        "machines": [
            {"id": m.id, "memory_capacity": m.memory_capacity}
            for m in h.machines.values()
        ],
        "channels": [
            {"from": c.from_machine, "to": c.to_machine}
            for c in h.channels.values()
            if c.from_machine != c.to_machine
        ],
    }
