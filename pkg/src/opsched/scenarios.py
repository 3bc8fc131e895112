"""Benchmark instance generators.

Two families: bidirectional pipeline-parallel training pipelines
(forward / backward-input / backward-weight ops per micro-batch per
stage on a ring of devices) and seeded random DAGs with bounded
degrees.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Mapping

from .graph import (Channel, ComputationGraph, DependencyEdge,
                    HardwareCluster, Machine, Operation, WeightAsset)
from .model import ModelOptions

DUALPIPE = "dualpipe"
RELAXED = "relaxed"
UNCAPPED = "uncapped"


@dataclass(frozen=True)
class DualPipeSpec:
    pp: int
    micro_batches: int | None = None  # defaults to 2*pp
    t_f: float = 1
    t_i: float = 1
    t_w: float = 1
    memory_mode: str = DUALPIPE

    def __post_init__(self):
        if self.pp < 2 or self.pp % 2:
            raise ValueError(
                "pp must be even and >= 2 (bidirectional stage pairing)")
        if self.micro_batches is not None and self.micro_batches < 1:
            raise ValueError("micro_batches must be positive")
        if self.memory_mode not in (DUALPIPE, RELAXED, UNCAPPED):
            raise ValueError(f"unknown memory_mode {self.memory_mode!r}")

    @property
    def t_b(self) -> float:
        return self.t_i + self.t_w

    @property
    def n_micro_batches(self) -> int:
        return self.micro_batches if self.micro_batches is not None \
            else 2 * self.pp


@dataclass(frozen=True)
class RandomDagSpec:
    nodes: int
    max_in_degree: int = 3
    max_out_degree: int = 3
    duration_range: tuple[int, int] = (1, 10)
    memory_range: tuple[int, int] = (0, 4)
    seed: int = 0

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("nodes must be positive")
        if self.max_in_degree < 1 or self.max_out_degree < 1:
            raise ValueError("degree caps must be >= 1")


def _op_id(kind: str, mb: int, stage: int) -> str:
    return f"{kind}{mb:02d}s{stage:02d}"


def gen_dualpipe(spec: DualPipeSpec
                 ) -> tuple[ComputationGraph, HardwareCluster, ModelOptions]:
    """Pipeline-parallel training instance on a ring of `pp` devices.

    Per micro-batch and stage: a forward op (activation +1), a
    backward-input op, and a backward-weight op (activation -1), chained
    forward down the stages and backward up them. Each stage owns a
    unit-size shared weight asset. Device memory capacity depends on the
    mode: `dualpipe` grants two stage replicas of parameters plus pp+1
    activations, `relaxed` doubles the activation budget, `uncapped`
    disables the memory constraint.
    """
    pp, mb = spec.pp, spec.n_micro_batches
    weights = [WeightAsset(f"w_s{s:02d}", size=1, load_cost=1, unload_cost=1)
               for s in range(pp)]
    ops: list[Operation] = []
    edges: list[DependencyEdge] = []
    for m in range(1, mb + 1):
        for s in range(pp):
            ref = (f"w_s{s:02d}",)
            ops.append(Operation(_op_id("f", m, s), spec.t_f,
                                 activation_delta=1, weight_refs=ref))
            ops.append(Operation(_op_id("bi", m, s), spec.t_i,
                                 weight_refs=ref))
            ops.append(Operation(_op_id("bw", m, s), spec.t_w,
                                 activation_delta=-1, weight_refs=ref))
        for s in range(pp - 1):
            edges.append(DependencyEdge(_op_id("f", m, s),
                                        _op_id("f", m, s + 1)))
            edges.append(DependencyEdge(_op_id("bi", m, s + 1),
                                        _op_id("bi", m, s)))
        edges.append(DependencyEdge(_op_id("f", m, pp - 1),
                                    _op_id("bi", m, pp - 1)))
        for s in range(pp):
            edges.append(DependencyEdge(_op_id("bi", m, s),
                                        _op_id("bw", m, s)))
    graph = ComputationGraph(ops, edges, weights)

    if spec.memory_mode == DUALPIPE:
        cap = 2 + (pp + 1)
    elif spec.memory_mode == RELAXED:
        cap = 2 + 2 * (pp + 1)
    else:
        cap = pp + 3 * mb * pp * max(spec.t_f, spec.t_i, spec.t_w, 1)
    machines = [Machine(f"d{d:02d}", cap) for d in range(pp)]
    channels = []
    for d in range(pp):
        nxt = (d + 1) % pp
        if nxt == d:
            continue
        channels.append(Channel(f"d{d:02d}", f"d{nxt:02d}"))
        channels.append(Channel(f"d{nxt:02d}", f"d{d:02d}"))
    # pp == 2 wraps onto the same pair; drop duplicates
    seen = set()
    ring = []
    for c in channels:
        if c.key not in seen:
            seen.add(c.key)
            ring.append(c)
    cluster = HardwareCluster(machines, ring)

    options = ModelOptions(memory_capped=spec.memory_mode != UNCAPPED)
    return graph, cluster, options


def dualpipe_primal_bound(spec: DualPipeSpec) -> float:
    """Makespan target of the hand-designed bidirectional schedule:
    per-device busy time plus (pp/2 - 1) * (t_f + 2*t_b - 3*t_w)."""
    busy = spec.n_micro_batches * (spec.t_f + spec.t_i + spec.t_w)
    return busy + dualpipe_bubble_target(spec)


def dualpipe_bubble_target(spec: DualPipeSpec, improved: bool = False
                           ) -> float:
    """Interior bubble total of the reference schedule, or half of it
    for the improved schedule found by continued search."""
    bubble = (spec.pp // 2 - 1) * (spec.t_f + 2 * spec.t_b - 3 * spec.t_w)
    return bubble / 2 if improved else bubble


def micro_batch_groups(g: ComputationGraph) -> tuple[tuple[str, ...], ...]:
    """Operation groups per micro-batch, for solver symmetry breaking.

    Micro-batches are structurally identical and share all weights, so
    restricting the search to dispatch them in index order loses no
    solutions.
    """
    by_mb: dict[int, list[str]] = {}
    for i in g.operations:
        m = re.fullmatch(r"(?:f|bi|bw)(\d+)s\d+", i)
        if m:
            by_mb.setdefault(int(m.group(1)), []).append(i)
    return tuple(tuple(sorted(by_mb[m])) for m in sorted(by_mb))


def dualpipe_assignment(spec: DualPipeSpec) -> tuple[tuple[str, str], ...]:
    """Bidirectional stage placement: device d hosts stage d for the
    first half of the micro-batches (flowing down the ring) and stage
    pp-1-d for the second half (flowing up), so each device holds two
    stage replicas of the parameters."""
    pp, mb = spec.pp, spec.n_micro_batches
    down = (mb + 1) // 2
    pins = []
    for m in range(1, mb + 1):
        for s in range(pp):
            d = s if m <= down else pp - 1 - s
            dev = f"d{d:02d}"
            for kind in ("f", "bi", "bw"):
                pins.append((_op_id(kind, m, s), dev))
    return tuple(pins)


def dualpipe_symmetry(spec: DualPipeSpec) -> tuple:
    """Two symmetry chains (down-flowing and up-flowing micro-batches);
    within each direction, micro-batches are interchangeable."""
    pp, mb = spec.pp, spec.n_micro_batches
    down = (mb + 1) // 2

    def group(m: int) -> tuple[str, ...]:
        return tuple(sorted(_op_id(kind, m, s)
                            for kind in ("f", "bi", "bw")
                            for s in range(pp)))

    return (tuple(group(m) for m in range(1, down + 1)),
            tuple(group(m) for m in range(down + 1, mb + 1)))


def _rank_token_order(pp: int, half_batches: int, rank: int) -> list[tuple]:
    """Per-device token order of the hand-built bidirectional schedule.

    Each device interleaves the two directions in eight phases: extra
    warmup forwards, paired warmup forwards, a zig-zag segment that
    defers weight-gradient work, the steady window with one op of each
    kind, then the mirrored cooldown. Tokens are (kind, direction,
    index) with deferred weight-gradient slots resolved oldest-first.
    """
    half = pp // 2
    hr = min(rank, pp - 1 - rank)
    second = rank >= half
    toks: list[tuple] = []
    f_cnt = [0, 0]
    b_cnt = [0, 0]

    def fwd(p):
        d = p ^ second
        toks.append(("f", d, f_cnt[d]))
        f_cnt[d] += 1

    def bwd(p, defer=False):
        d = p ^ second
        toks.append(("bi", d, b_cnt[d]))
        if not defer:
            toks.append(("bw", d, b_cnt[d]))
        b_cnt[d] += 1

    def slot():
        toks.append(("slot",))

    for _ in range((half - hr - 1) * 2):
        fwd(0)
    for _ in range(hr + 1):
        fwd(0)
        fwd(1)
    for _ in range(half - hr - 1):
        bwd(1, defer=True)
        slot()
        fwd(1)
    for _ in range(half_batches - pp + hr + 1):
        fwd(0)
        bwd(1)
        fwd(1)
        bwd(0)
    for _ in range(half - hr - 1):
        bwd(1)
        fwd(1)
        bwd(0)
    defer = False
    for k in range(hr + 1):
        if k == (hr + 1) // 2 and hr % 2 == 1:
            defer = True
        bwd(1, defer=defer)
        if k == (hr + 1) // 2 and hr % 2 == 0:
            defer = True
        bwd(0, defer=defer)
    for _ in range(half - hr - 1):
        slot()
        bwd(0, defer=True)
    for _ in range(hr + 1):
        slot()

    out: list[tuple] = []
    pending: list[tuple] = []
    for t in toks:
        if t[0] == "bi":
            pending.append((t[1], t[2]))
            out.append(t)
        elif t[0] == "slot":
            d, m = pending.pop(0)
            out.append(("bw", d, m))
        else:
            if t[0] == "bw":
                pending.remove((t[1], t[2]))
            out.append(t)
    return out


def dualpipe_order(spec: DualPipeSpec) -> dict[str, list[str]]:
    """Hand-built bidirectional schedule: per-device operation order.

    Down-flowing micro-batches run stage s on device s, up-flowing ones
    on device pp-1-s, so each device serves one stage of each direction.
    """
    pp, mb = spec.pp, spec.n_micro_batches
    if mb % 2 or mb < 2 * pp:
        raise ValueError(
            "the bidirectional schedule needs an even micro-batch count "
            "of at least 2*pp")
    half_batches = mb // 2
    order = {}
    for rank in range(pp):
        seq = []
        for (kind, d, m) in _rank_token_order(pp, half_batches, rank):
            stage = rank if d == 0 else pp - 1 - rank
            mbid = m + 1 if d == 0 else half_batches + m + 1
            seq.append(_op_id(kind, mbid, stage))
        order[f"d{rank:02d}"] = seq
    return order


def _asap_times(g: ComputationGraph, order: Mapping[str, list[str]]
                ) -> dict[str, tuple[float, float]]:
    """Earliest start/end per op for fixed per-device sequences."""
    succ: dict[str, list[str]] = {i: [] for i in g.operations}
    indeg = {i: 0 for i in g.operations}
    for (a, b) in g.edges:
        succ[a].append(b)
        indeg[b] += 1
    for seq in order.values():
        for a, b in zip(seq, seq[1:]):
            succ[a].append(b)
            indeg[b] += 1
    start = {i: 0.0 for i in g.operations}
    heads = [i for i in sorted(g.operations) if indeg[i] == 0]
    done = 0
    while heads:
        i = heads.pop()
        done += 1
        end = start[i] + g.operations[i].duration
        for b in succ[i]:
            if end > start[b]:
                start[b] = end
            indeg[b] -= 1
            if indeg[b] == 0:
                heads.append(b)
    if done < len(g.operations):
        raise ValueError("operation order conflicts with dependencies")
    return {i: (start[i], start[i] + g.operations[i].duration)
            for i in g.operations}


_reference_cache: dict[tuple, "object"] = {}


def dualpipe_reference(spec: DualPipeSpec, improved: bool = False):
    """Feasible pipeline schedule matching the documented bubble counts.

    Returns a Solution whose verified interior bubble equals
    ``dualpipe_bubble_target(spec, improved)`` and whose makespan stays
    within ``dualpipe_primal_bound(spec)``. The base variant lays out
    the hand-built bidirectional order; the improved variant additionally
    reorders cooldown sequences to halve the bubble.
    """
    from .model import build_model
    from .solver import Solution, refine_idle

    key = (spec, improved)
    if key in _reference_cache:
        return _reference_cache[key]
    g, h, options = gen_dualpipe(spec)
    order = dualpipe_order(spec)
    op_times = _asap_times(g, order)
    assignment = {i: j for j, seq in order.items() for i in seq}
    comm = {}
    for (a, b) in g.edges:
        j1, j2 = assignment[a], assignment[b]
        if j1 != j2:
            t = op_times[a][1]
            comm[(a, b)] = ((j1, j2), t, t)
    sol = Solution(status="feasible",
                   objective=max(e for (_s, e) in op_times.values()),
                   assignment=assignment, op_times=op_times,
                   comm_times=comm)
    target = dualpipe_bubble_target(spec, improved=improved)
    interior = sum(
        op_times[seq[-1]][1] - op_times[seq[0]][0]
        - sum(g.operations[i].duration for i in seq)
        for seq in order.values())
    if interior != target:
        model = build_model(g, h, options)
        sol = refine_idle(model, sol, time_cap=dualpipe_primal_bound(spec),
                          target=target)
    _reference_cache[key] = sol
    return sol


def gen_random_dag(spec: RandomDagSpec) -> ComputationGraph:
    """Seeded random DAG with bounded in/out degrees.

    Nodes are created in index order; each samples up to max_in_degree
    predecessors among earlier nodes that still have spare out-degree.
    Durations and memory are drawn uniformly from the declared integer
    ranges. Identical specs produce identical graphs.
    """
    rng = random.Random(spec.seed)
    width = max(3, len(str(spec.nodes - 1)))
    ids = [f"n{i:0{width}d}" for i in range(spec.nodes)]
    out_deg = {i: 0 for i in ids}
    ops = []
    edges = []
    for idx, nid in enumerate(ids):
        dur = rng.randint(*spec.duration_range)
        mem = rng.randint(*spec.memory_range)
        ops.append(Operation(nid, dur, weight_mem=mem))
        if idx == 0:
            continue
        candidates = [p for p in ids[:idx]
                      if out_deg[p] < spec.max_out_degree]
        k = rng.randint(0, min(spec.max_in_degree, len(candidates)))
        for p in sorted(rng.sample(candidates, k)):
            out_deg[p] += 1
            edges.append(DependencyEdge(p, nid))
    return ComputationGraph(ops, edges)
