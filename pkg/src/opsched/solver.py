"""Built-in exact branch-and-bound scheduler.

Two complementary search modes share the same bounding machinery:

* integrated dispatching — branches on (operation, machine) in
  chronological order, appending induced transfers to their channels.
  Complete (hence exact on exhaustion) whenever all communication
  durations are zero, which covers the pipeline and coarsened-graph
  scenarios; with contended nonzero transfers it is a strong primal
  heuristic.
* fixed-assignment sequencing — enumerates machine assignments, then
  branches on the dispatch order of operations and nonzero transfers.
  Complete for any instance, practical at desk scale only.

Lower bounds combine the remaining critical path with an aggregate
machine-load bound; per-machine memory feasibility is a monotone range
condition on the activation trajectory, so violations prune immediately.
"""
from __future__ import annotations

import itertools
import json
import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Mapping

from .model import ScheduleModel

DEPTH_FIRST = "depth-first"
BEST_BOUND = "best-bound"

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time-limit"

_EPS = 1e-9


@dataclass(frozen=True)
class SolveConfig:
    time_limit: float = 60.0
    primal_bound: float | None = None
    gap_tolerance: float = 0.0
    node_selection: str = DEPTH_FIRST
    seedless_determinism: bool = True
    stop_at_primal_bound: bool = True
    max_assignment_enumeration: int = 100_000
    # chains of interchangeable operation groups (identical structure and
    # costs); within a chain, group k+1 may only start dispatching after
    # group k did; independent chains are unordered relative to each
    # other. A flat tuple of groups counts as a single chain.
    batch_symmetry: tuple = ()
    # (op, machine) pins restricting the assignment search
    fixed_assignment: tuple[tuple[str, str], ...] = ()
    # (op, machine) pairs excluded from the assignment search; with
    # fixed_assignment, the standard vehicle for symmetry-breaking
    # restrictions the caller can justify (e.g. ring rotations)
    forbidden_assignment: tuple[tuple[str, str], ...] = ()
    compaction: str = "none"  # or "late": right-justify at fixed makespan
    node_limit: int | None = None
    # post-pass: reorder machine sequences to shrink interior idle at
    # unchanged makespan (see refine_idle); with idle_target set the
    # refinement stops once the interior idle matches the target exactly
    idle_refinement: bool = False
    idle_target: float | None = None

    def __post_init__(self):
        if self.gap_tolerance < 0:
            raise ValueError("gap_tolerance must be >= 0")
        if self.node_selection not in (DEPTH_FIRST, BEST_BOUND):
            raise ValueError(f"unknown node_selection {self.node_selection!r}")
        if self.compaction not in ("none", "late"):
            raise ValueError(f"unknown compaction {self.compaction!r}")


@dataclass
class Solution:
    status: str  # optimal | feasible | infeasible | time-limit
    objective: float | None
    assignment: dict[str, str] = field(default_factory=dict)
    op_times: dict[str, tuple[float, float]] = field(default_factory=dict)
    comm_times: dict[tuple[str, str], tuple[tuple[str, str], float, float]] = \
        field(default_factory=dict)
    load_events: list[tuple[str, str, str]] = field(default_factory=list)
    preloads: list[tuple[str, str]] = field(default_factory=list)
    bound: float | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "bound": self.bound,
            "assignment": dict(sorted(self.assignment.items())),
            "op_times": {i: list(t) for i, t in sorted(self.op_times.items())},
            "comm_times": {
                f"{a}->{b}": [list(chan), start, end]
                for (a, b), (chan, start, end)
                in sorted(self.comm_times.items())
            },
            "load_events": [list(ev) for ev in self.load_events],
            "preloads": [list(p) for p in sorted(self.preloads)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Solution":
        comm = {}
        for key, (chan, start, end) in doc.get("comm_times", {}).items():
            a, b = key.split("->")
            comm[(a, b)] = (tuple(chan), start, end)
        return cls(
            status=doc["status"],
            objective=doc.get("objective"),
            assignment=dict(doc.get("assignment", {})),
            op_times={i: tuple(t) for i, t in doc.get("op_times", {}).items()},
            comm_times=comm,
            load_events=[tuple(ev) for ev in doc.get("load_events", [])],
            preloads=[tuple(p) for p in doc.get("preloads", [])],
            bound=doc.get("bound"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Solution":
        return cls.from_dict(json.loads(text))


class SolveError(ValueError):
    pass


# -- instance data ------------------------------------------------------------


class _Instance:
    def __init__(self, model: ScheduleModel):
        g, h = model.graph, model.cluster
        self.model = model
        self.ops: list[str] = list(g.operations)
        self.n = len(self.ops)
        self.idx = {i: k for k, i in enumerate(self.ops)}
        self.dur = [g.operations[i].duration for i in self.ops]
        self.act = [g.operations[i].activation_delta for i in self.ops]
        self.wmem = [g.operations[i].weight_mem for i in self.ops]
        self.refs = [tuple(sorted(set(g.operations[i].weight_refs)))
                     for i in self.ops]
        self.machines: list[str] = list(h.machines)
        self.nm = len(self.machines)
        self.cap = [h.machines[j].memory_capacity for j in self.machines]
        self.capped = model.options.memory_capped
        self.dynamic = model.options.dynamic_loading
        self.assets = dict(g.weights)
        self.asset_ids = list(self.assets)
        midx = {j: k for k, j in enumerate(self.machines)}
        self.chan = {(midx[a], midx[b]) for (a, b) in h.channels}

        self.preds: list[list[int]] = [[] for _ in range(self.n)]
        self.succs: list[list[int]] = [[] for _ in range(self.n)]
        self.comm: dict[tuple[int, int], float] = {}
        for (a, b), e in g.edges.items():
            ia, ib = self.idx[a], self.idx[b]
            self.preds[ib].append(ia)
            self.succs[ia].append(ib)
            self.comm[ia, ib] = e.comm_duration

        self.zero_comm = all(v == 0 for v in self.comm.values())
        self.total_work = sum(self.dur)

        order = [self.idx[i] for i in g.topo_order()]
        self.topo = order
        self.tail = [0.0] * self.n
        for k in reversed(order):
            self.tail[k] = max(
                (self.tail[sx] + self.dur[sx] for sx in self.succs[k]),
                default=0.0)
        self.head = [0.0] * self.n
        for k in order:
            self.head[k] = max(
                (self.head[p] + self.dur[p] for p in self.preds[k]),
                default=0.0)

        vals = (self.dur + list(self.comm.values()) + self.cap
                + self.wmem + self.act)
        for a in self.assets.values():
            vals += [a.size, a.load_cost, a.unload_cost]
        self.integral = all(float(v).is_integer() for v in vals)

    def load_bound(self, committed: float, work_rem: float) -> float:
        total = committed + work_rem
        if self.integral:
            return -(-int(total) // self.nm)
        return total / self.nm

    def root_bound(self) -> float:
        cp = max((self.head[k] + self.dur[k] + self.tail[k]
                  for k in range(self.n)), default=0.0)
        return max(cp, self.load_bound(0.0, self.total_work))


# -- per-machine memory chain --------------------------------------------------

# The memory level on a machine follows the activation prefix sums offset
# by an initial level L that the plan is free to choose; the level before
# each op must cover the resident weights there and every level must stay
# within [0, capacity]. The chain is feasible iff
#     max(need, -min_prefix) <= capacity - max_prefix
# where, with prefix_k the running activation sum (prefix_0 = 0):
#   static mode:  need = resident_total - min_k prefix_{k-1}
#   dynamic mode: need = max_k (resident_before_k - prefix_{k-1})
# All quantities are monotone under appends, so violations prune.


class _Mem:
    __slots__ = ("prefix", "min_pre", "min_all", "max_prefix", "max_need",
                 "static_w", "assets", "active", "ever")

    def __init__(self):
        self.prefix = 0.0
        self.min_pre = 0.0       # min over prefix values before each op
        self.min_all = 0.0       # min over all prefix values (incl. 0)
        self.max_prefix = 0.0    # max over all prefix values (incl. 0)
        self.max_need = 0.0      # dynamic mode only
        self.static_w = 0.0      # per-op weight_mem plus shared asset sizes
        self.assets: set[str] = set()
        self.active: set[str] = set()
        self.ever: set[str] = set()  # assets ever resident on this machine

    def snapshot(self):
        return (self.prefix, self.min_pre, self.min_all, self.max_prefix,
                self.max_need, self.static_w, frozenset(self.assets),
                frozenset(self.active), frozenset(self.ever))

    def restore(self, snap):
        (self.prefix, self.min_pre, self.min_all, self.max_prefix,
         self.max_need, self.static_w, assets, active, ever) = snap
        self.assets = set(assets)
        self.active = set(active)
        self.ever = set(ever)


# -- shared dispatch state ------------------------------------------------------


class _State:
    def __init__(self, inst: _Instance):
        n, nm = inst.n, inst.nm
        self.inst = inst
        self.mach_of = [-1] * n
        self.start = [0.0] * n
        self.end = [0.0] * n
        self.free = [0.0] * nm
        self.busy = [0.0] * nm
        self.chan_free: dict[tuple[int, int], float] = {}
        self.mem = [_Mem() for _ in range(nm)]
        self.missing_preds = [len(p) for p in inst.preds]
        self.n_done = 0
        self.work_rem = float(inst.total_work)
        self.cur_max_end = 0.0
        self.comm_sched: dict[tuple[int, int], tuple[int, int, float, float]] = {}
        self.load_events: list[tuple[int, str, str]] = []
        self.preloads: list[tuple[str, int]] = []
        self.est = [0.0] * n  # max end over scheduled predecessors

    def committed_idle(self) -> float:
        return sum(self.free) - sum(self.busy)

    def solution_parts(self):
        inst = self.inst
        assignment = {inst.ops[k]: inst.machines[self.mach_of[k]]
                      for k in range(inst.n)}
        op_times = {inst.ops[k]: (self.start[k], self.end[k])
                    for k in range(inst.n)}
        comm_times = {}
        for (p, k), (j1, j2, cs, ce) in self.comm_sched.items():
            comm_times[(inst.ops[p], inst.ops[k])] = (
                (inst.machines[j1], inst.machines[j2]), cs, ce)
        loads = [(inst.ops[k], wid, kind)
                 for (k, wid, kind) in self.load_events]
        preloads = [(inst.machines[j], wid) for (wid, j) in self.preloads]
        return assignment, op_times, comm_times, loads, preloads


def _mem_check_and_apply(state: _State, k: int, m: int,
                         loads: tuple[str, ...], unloads: tuple[str, ...],
                         preload: tuple[str, ...]):
    """Append op k to machine m's chain; return False if memory-infeasible.

    `preload` weights join the resident set retroactively from time zero,
    which shifts every earlier requirement up by their total size.
    Mutates the machine's memory record either way; callers restore from a
    snapshot on backtrack.
    """
    inst = state.inst
    mem = state.mem[m]
    if inst.dynamic:
        if preload:
            mem.active |= set(preload)
            mem.max_need += sum(inst.assets[w].size for w in preload)
        resident = sum(inst.assets[w].size for w in mem.active)
        mem.max_need = max(mem.max_need, resident - mem.prefix)
        mem.min_pre = min(mem.min_pre, mem.prefix)
        mem.prefix += inst.act[k]
        mem.min_all = min(mem.min_all, mem.prefix)
        mem.max_prefix = max(mem.max_prefix, mem.prefix)
        mem.active |= set(loads)
        mem.active -= set(unloads)
        mem.ever |= set(preload) | set(loads)
        need = mem.max_need
    else:
        mem.static_w += inst.wmem[k]
        for wid in inst.refs[k]:
            if wid not in mem.assets:
                mem.assets.add(wid)
                mem.static_w += inst.assets[wid].size
        mem.min_pre = min(mem.min_pre, mem.prefix)
        mem.prefix += inst.act[k]
        mem.min_all = min(mem.min_all, mem.prefix)
        mem.max_prefix = max(mem.max_prefix, mem.prefix)
        need = mem.static_w - mem.min_pre
    if not inst.capped:
        return True
    lift = max(need, -mem.min_all)
    return lift <= inst.cap[m] - mem.max_prefix + _EPS


def _dispatch(state: _State, k: int, m: int,
              loads: tuple[str, ...] = (), unloads: tuple[str, ...] = (),
              preload: tuple[str, ...] = ()):
    """Place op k on machine m at its earliest start; return an undo token
    or None when the placement is infeasible (channel or memory).

    Transfers into k that were already dispatched separately (the
    fixed-assignment mode does this for contended nonzero transfers) are
    respected; the rest are appended to their channels here.
    """
    inst = state.inst
    arrival = 0.0
    new_comms = []
    for p in inst.preds[k]:
        mp = state.mach_of[p]
        if (mp, m) not in inst.chan:
            return None
        if (p, k) in state.comm_sched:
            arrival = max(arrival, state.comm_sched[p, k][3])
            continue
        if mp == m:
            cs = ce = state.end[p]
        else:
            cs = max(state.end[p], state.chan_free.get((mp, m), 0.0))
            ce = cs + inst.comm[p, k]
        arrival = max(arrival, ce)
        new_comms.append(((p, k), (mp, m, cs, ce)))

    extra = 0.0
    if inst.dynamic:
        extra = (sum(inst.assets[w].load_cost for w in loads)
                 + sum(inst.assets[w].unload_cost for w in unloads))

    start = max(state.free[m], arrival)
    end = start + inst.dur[k] + extra

    undo = {
        "k": k, "m": m,
        "free": state.free[m], "busy": state.busy[m],
        "cur_max_end": state.cur_max_end,
        "mem": state.mem[m].snapshot(),
        "chan": [], "comms": [key for key, _ in new_comms],
        "est": [(sx, state.est[sx]) for sx in inst.succs[k]],
        "n_loads": len(state.load_events),
        "n_preloads": len(state.preloads),
    }

    ok = _mem_check_and_apply(state, k, m, loads, unloads, preload)
    if not ok:
        state.mem[m].restore(undo["mem"])
        return None

    for key, (j1, j2, cs, ce) in new_comms:
        # instantaneous transfers do not occupy the channel
        if j1 != j2 and ce > cs:
            old = state.chan_free.get((j1, j2))
            undo["chan"].append(((j1, j2), old))
            state.chan_free[j1, j2] = max(old or 0.0, ce)
        state.comm_sched[key] = (j1, j2, cs, ce)

    state.mach_of[k] = m
    state.start[k] = start
    state.end[k] = end
    state.free[m] = end
    state.busy[m] += inst.dur[k] + extra
    state.cur_max_end = max(state.cur_max_end, end)
    state.n_done += 1
    state.work_rem -= inst.dur[k]
    for sx in inst.succs[k]:
        state.missing_preds[sx] -= 1
        state.est[sx] = max(state.est[sx], end)
    for wid in preload:
        state.preloads.append((wid, m))
    for wid in loads:
        state.load_events.append((k, wid, "load"))
    for wid in unloads:
        state.load_events.append((k, wid, "unload"))
    return undo


def _undo(state: _State, undo: dict):
    inst = state.inst
    k, m = undo["k"], undo["m"]
    state.mach_of[k] = -1
    state.free[m] = undo["free"]
    state.busy[m] = undo["busy"]
    state.cur_max_end = undo["cur_max_end"]
    state.mem[m].restore(undo["mem"])
    state.n_done -= 1
    state.work_rem += inst.dur[k]
    for sx in inst.succs[k]:
        state.missing_preds[sx] += 1
    for sx, old in undo["est"]:
        state.est[sx] = old
    for key in undo["comms"]:
        del state.comm_sched[key]
    for chan_key, old in undo["chan"]:
        if old is None:
            del state.chan_free[chan_key]
        else:
            state.chan_free[chan_key] = old
    del state.load_events[undo["n_loads"]:]
    del state.preloads[undo["n_preloads"]:]


# -- search drivers -------------------------------------------------------------


class _Search:
    def __init__(self, model: ScheduleModel, cfg: SolveConfig):
        self.inst = _Instance(model)
        self.cfg = cfg
        self.primal_bound = cfg.primal_bound
        if model.primal_bound is not None:
            self.primal_bound = (model.primal_bound
                                 if self.primal_bound is None
                                 else min(self.primal_bound,
                                          model.primal_bound))
        self.deadline = _time.monotonic() + cfg.time_limit
        self.nodes = 0
        self.timed_out = False
        self.stopped_at_bound = False
        self.incumbent: Solution | None = None
        self.incumbent_obj: float | None = None
        self.root = self.inst.root_bound()

        hint = getattr(model, "warm_hint", None)
        if hint is not None and hint.objective is not None:
            self.incumbent = replace(hint, status=FEASIBLE)
            self.incumbent_obj = hint.objective

        chains = cfg.batch_symmetry
        if chains and chains[0] and isinstance(chains[0][0], str):
            chains = (chains,)
        self.group_of: dict[int, tuple[int, int]] = {}
        for ci, chain in enumerate(chains):
            for gi, group in enumerate(chain):
                for op in group:
                    if op in self.inst.idx:
                        self.group_of[self.inst.idx[op]] = (ci, gi)
        self.chain_started = [0] * len(chains)

        self.pinned: dict[int, int] = {}
        midx = {j: k for k, j in enumerate(self.inst.machines)}
        for (op, j) in cfg.fixed_assignment:
            if op not in self.inst.idx or j not in midx:
                raise SolveError(f"fixed assignment names unknown id: "
                                 f"({op!r}, {j!r})")
            self.pinned[self.inst.idx[op]] = midx[j]
        self.forbidden: set[tuple[int, int]] = set()
        for (op, j) in cfg.forbidden_assignment:
            if op not in self.inst.idx or j not in midx:
                raise SolveError(f"forbidden assignment names unknown id: "
                                 f"({op!r}, {j!r})")
            self.forbidden.add((self.inst.idx[op], midx[j]))

    # pruning threshold: must beat the incumbent and respect the bound
    def limit(self) -> float:
        lim = float("inf")
        if self.incumbent_obj is not None:
            lim = self.incumbent_obj * (1 - self.cfg.gap_tolerance) - _EPS
            if self.inst.integral and self.cfg.gap_tolerance == 0:
                lim = self.incumbent_obj - 1  # next integer step down
        if self.primal_bound is not None:
            lim = min(lim, self.primal_bound)
        return lim

    def out_of_budget(self) -> bool:
        self.nodes += 1
        if self.cfg.node_limit is not None and self.nodes > self.cfg.node_limit:
            self.timed_out = True
        elif self.nodes % 2048 == 0 and _time.monotonic() > self.deadline:
            self.timed_out = True
        return self.timed_out

    def should_stop(self) -> bool:
        if self.timed_out:
            return True
        if (self.cfg.stop_at_primal_bound and self.primal_bound is not None
                and self.incumbent_obj is not None
                and self.incumbent_obj <= self.primal_bound + _EPS):
            self.stopped_at_bound = True
            return True
        if (self.incumbent_obj is not None
                and self.incumbent_obj <= self.root + _EPS):
            return True
        return False

    def record_leaf(self, state: _State):
        obj = state.cur_max_end
        if self.incumbent_obj is not None and obj >= self.incumbent_obj - _EPS:
            return
        if self.primal_bound is not None and obj > self.primal_bound + _EPS:
            return
        assignment, op_times, comm_times, loads, preloads = \
            state.solution_parts()
        self.incumbent = Solution(
            status=FEASIBLE, objective=obj, assignment=assignment,
            op_times=op_times, comm_times=comm_times, load_events=loads,
            preloads=preloads)
        self.incumbent_obj = obj

    # ---- integrated mode ----

    def run_integrated(self) -> bool:
        """Returns True when the tree was fully explored."""
        packed = self._run_packed()
        if packed is not None:
            return packed
        state = _State(self.inst)
        return self._dfs(state)

    def _run_packed(self) -> bool | None:
        """Saturation search, used when the aggregate load bound meets the
        pruning limit exactly.

        Then every machine must run back to back from time zero through the
        limit, so dispatching chronologically on the tightest machine with
        exact start times enumerates every remaining schedule.  Idle of any
        kind is immediately fatal, which admits two strong cuts: per-op
        deadlines (start no later than limit minus the op's critical tail)
        and aggregate deadline work (operations due by time D cannot exceed
        machine capacity D - t).  Returns None when the preconditions do
        not hold and the general dispatcher must run instead.
        """
        inst = self.inst
        lim_f = self.limit()
        if (inst.dynamic or not inst.integral or not inst.zero_comm
                or lim_f == float("inf")):
            return None
        lim = int(math.floor(lim_f + _EPS))
        if inst.nm * lim != int(inst.total_work):
            return None
        n, nm = inst.n, inst.nm
        dur = [int(d) for d in inst.dur]
        if dur and min(dur) < 1:
            return None
        tail = [int(t) for t in inst.tail]
        # deadline buckets: distinct latest feasible end times
        les = sorted({lim - t for t in tail})
        le_of = [les.index(lim - t) for t in tail]
        nb = len(les)
        brem = [0] * nb
        for k in range(n):
            brem[le_of[k]] += dur[k]
        # machine masks reachable over a channel from each machine
        out_mask = [0] * nm
        for (a, b) in inst.chan:
            out_mask[a] |= 1 << b
        full = (1 << nm) - 1
        allowed = [full] * n
        for k, m0 in self.pinned.items():
            allowed[k] = 1 << m0
        for (k, m0) in self.forbidden:
            allowed[k] &= ~(1 << m0)
        caps = [int(c) for c in inst.cap]
        act = inst.act
        wmem = inst.wmem
        sizes = {w: a.size for w, a in inst.assets.items()}
        preds = [tuple(p) for p in inst.preds]
        succs = [tuple(s) for s in inst.succs]
        refs = inst.refs

        free = [0] * nm
        mach_of = [-1] * n
        end = [0] * n
        est = [0] * n
        missing = [len(p) for p in preds]
        avail = {k for k in range(n) if not missing[k]}
        lvl = [0.0] * nm; mnp = [0.0] * nm; mna = [0.0] * nm
        mxp = [0.0] * nm
        static = [0.0] * nm
        assets: list[set[str]] = [set() for _ in range(nm)]
        seq: list[tuple[int, int]] = []
        group_of = self.group_of
        chain_started = self.chain_started

        def leaf() -> None:
            state = _State(inst)
            for (k, m) in seq:
                _dispatch(state, k, m, (), (), ())
            self.record_leaf(state)

        def rec(t_floor: int) -> bool:
            if self.out_of_budget():
                return False
            if len(seq) == n:
                leaf()
                return True
            m = -1
            t = lim
            for j in range(nm):
                fj = free[j]
                if fj < t:
                    t = fj; m = j
            if m < 0:
                return True
            cum = 0
            for b in range(nb):
                cum += brem[b]
                if cum and cum > nm * (les[b] - t):
                    return True
            cands = []
            for k in avail:
                mask = allowed[k]
                e = est[k]
                for p in preds[k]:
                    mask &= out_mask[mach_of[p]]
                mf = lim
                for j in range(nm):
                    if (mask >> j) & 1 and free[j] < mf:
                        mf = free[j]
                smin = e if e > mf else mf
                if smin > lim - dur[k] - tail[k]:
                    return True
                if (mask >> m) & 1 and e <= t:
                    cands.append((-(dur[k] + tail[k]), k))
            cands.sort()
            complete = True
            for (_, k) in cands:
                cg = group_of.get(k)
                if cg is not None:
                    if cg[1] > chain_started[cg[0]]:
                        continue
                    fresh = cg[1] == chain_started[cg[0]]
                else:
                    fresh = False
                e_new = t + dur[k]
                if e_new > lim:
                    continue
                d = act[k]
                o_lvl, o_mnp, o_mna, o_mxp = lvl[m], mnp[m], mna[m], mxp[m]
                o_static = static[m]
                nmnp = o_mnp if o_mnp < o_lvl else o_lvl
                nlvl = o_lvl + d
                nmna = o_mna if o_mna < nlvl else nlvl
                nmxp = o_mxp if o_mxp > nlvl else nlvl
                nstatic = o_static + wmem[k]
                added = [w for w in refs[k] if w not in assets[m]]
                for w in added:
                    nstatic += sizes[w]
                need = nstatic - nmnp
                if -nmna > need:
                    need = -nmna
                if need > caps[m] - nmxp + _EPS:
                    continue
                lvl[m], mnp[m], mna[m], mxp[m] = nlvl, nmnp, nmna, nmxp
                static[m] = nstatic
                assets[m].update(added)
                free[m] = e_new
                mach_of[k] = m
                end[k] = e_new
                avail.discard(k)
                brem[le_of[k]] -= dur[k]
                if fresh:
                    chain_started[cg[0]] += 1
                o_ests = [(s, est[s]) for s in succs[k]]
                for s in succs[k]:
                    missing[s] -= 1
                    if not missing[s]:
                        avail.add(s)
                    if e_new > est[s]:
                        est[s] = e_new
                seq.append((k, m))
                if not rec(t):
                    complete = False
                seq.pop()
                for (s, v) in o_ests:
                    est[s] = v
                for s in succs[k]:
                    if not missing[s]:
                        avail.discard(s)
                    missing[s] += 1
                if fresh:
                    chain_started[cg[0]] -= 1
                brem[le_of[k]] += dur[k]
                avail.add(k)
                mach_of[k] = -1
                free[m] = t
                lvl[m], mnp[m], mna[m], mxp[m] = o_lvl, o_mnp, o_mna, o_mxp
                static[m] = o_static
                for w in added:
                    assets[m].discard(w)
                if self.should_stop():
                    return False
            return complete

        return rec(0)

    def _candidates(self, state: _State):
        inst = self.inst
        eligible = [k for k in range(inst.n)
                    if state.mach_of[k] < 0 and state.missing_preds[k] == 0]
        cands = []
        for k in eligible:
            cg = self.group_of.get(k)
            if cg is not None and cg[1] > self.chain_started[cg[0]]:
                continue
            machines = ((self.pinned[k],) if k in self.pinned
                        else range(inst.nm))
            for m in machines:
                if (k, m) in self.forbidden:
                    continue
                if any((state.mach_of[p], m) not in inst.chan
                       for p in inst.preds[k]):
                    continue
                arr = state.est[k]
                lb_start = max(state.free[m], arr)
                cands.append((lb_start, -(inst.dur[k] + inst.tail[k]), k, m))
        cands.sort()
        return cands

    def _ext_choices(self, state: _State, k: int, m: int):
        """Load/unload/preload alternatives for dispatching op k on m.

        Weights load only when a dispatched operation requires them.  A
        required weight never resident on the machine before may instead
        count as preloaded (resident since time zero at no time cost);
        unloading any subset of the resident set is offered after the op.
        Cheaper choices (more preloads, no unloads) come first.
        """
        inst = self.inst
        if not inst.dynamic:
            yield ((), (), ())
            return
        mem = state.mem[m]
        needed = tuple(w for w in inst.refs[k] if w not in mem.active)
        preloadable = tuple(w for w in needed if w not in mem.ever)
        for r in range(len(preloadable), -1, -1):
            for pre in itertools.combinations(preloadable, r):
                loads = tuple(w for w in needed if w not in pre)
                after = sorted(mem.active | set(needed))
                for s in range(len(after) + 1):
                    for ul in itertools.combinations(after, s):
                        yield (loads, ul, pre)

    def _node_bound(self, state: _State) -> float:
        inst = self.inst
        lb = state.cur_max_end
        lb = max(lb, inst.load_bound(sum(state.free), state.work_rem))
        min_free = min(state.free)
        for k in range(inst.n):
            if state.mach_of[k] < 0 and state.missing_preds[k] == 0:
                est = max(state.est[k], min_free)
                lb = max(lb, est + inst.dur[k] + inst.tail[k])
        if self.pinned:
            rem = [0.0] * inst.nm
            for k in range(inst.n):
                if state.mach_of[k] < 0 and k in self.pinned:
                    rem[self.pinned[k]] += inst.dur[k]
            for m in range(inst.nm):
                lb = max(lb, state.free[m] + rem[m])
        return lb

    def _dfs(self, state: _State, last_start: float = 0.0) -> bool:
        if self.out_of_budget():
            return False
        if state.n_done == self.inst.n:
            self.record_leaf(state)
            return True
        complete = True
        for (lb_start, _, k, m) in self._candidates(state):
            # canonical dispatch order: every schedule the dispatcher can
            # produce is reachable with nondecreasing start times, so
            # starting before the previous dispatch only revisits states
            if lb_start < last_start - _EPS:
                continue
            if self.should_stop():
                return False
            cg = self.group_of.get(k)
            fresh_group = cg is not None and cg[1] == self.chain_started[cg[0]]
            for loads, unloads, preload in self._ext_choices(state, k, m):
                undo = _dispatch(state, k, m, loads, unloads, preload)
                if undo is None:
                    continue
                if fresh_group:
                    self.chain_started[cg[0]] += 1
                if self._node_bound(state) <= self.limit() + _EPS:
                    if not self._dfs(state, lb_start):
                        complete = False
                if fresh_group:
                    self.chain_started[cg[0]] -= 1
                _undo(state, undo)
                if self.should_stop():
                    return False
        return complete and not self.timed_out

    # ---- fixed-assignment mode ----

    def run_fixed_assignment(self) -> bool:
        inst = self.inst
        complete = True
        for assign in itertools.product(range(inst.nm), repeat=inst.n):
            if self.should_stop():
                return False
            if not self._assignment_feasible(assign):
                continue
            if not self._sequence_dfs_root(assign):
                complete = False
        return complete and not self.timed_out

    def _assignment_feasible(self, assign) -> bool:
        inst = self.inst
        for k, m in self.pinned.items():
            if assign[k] != m:
                return False
        for k, m in enumerate(assign):
            if (k, m) in self.forbidden:
                return False
        for (p, k) in inst.comm:
            if (assign[p], assign[k]) not in inst.chan:
                return False
        # aggregate load bound per machine
        loads = [0.0] * inst.nm
        for k, m in enumerate(assign):
            loads[m] += inst.dur[k]
        lb = max(loads)
        return lb <= self.limit() + _EPS

    def _sequence_dfs_root(self, assign) -> bool:
        state = _State(self.inst)
        return self._seq_dfs(state, assign)

    def _seq_candidates(self, state: _State, assign):
        inst = self.inst
        cands = []
        # cross-machine transfers are dispatched explicitly and become
        # available the moment their producer finishes, independently of
        # the consumer's other predecessors, so every channel
        # interleaving is reachable
        for (p, k) in inst.comm:
            if assign[p] == assign[k] or (p, k) in state.comm_sched:
                continue
            if state.mach_of[p] < 0:
                continue
            j1, j2 = assign[p], assign[k]
            cs = max(state.end[p], state.chan_free.get((j1, j2), 0.0))
            cands.append((cs, 0, ("comm", p, k)))
        for k in range(inst.n):
            if state.mach_of[k] >= 0 or state.missing_preds[k] != 0:
                continue
            if any(assign[p] != assign[k] and (p, k) not in state.comm_sched
                   for p in inst.preds[k]):
                continue
            m = assign[k]
            arr = max((state.comm_sched[p, k][3]
                       for p in inst.preds[k] if (p, k) in state.comm_sched),
                      default=0.0)
            arr = max(arr, state.est[k])
            lb_start = max(state.free[m], arr)
            cands.append((lb_start, -(inst.dur[k] + inst.tail[k]),
                          ("op", k, m)))
        cands.sort()
        return cands

    def _seq_bound(self, state: _State, assign) -> float:
        inst = self.inst
        lb = state.cur_max_end
        rem = [0.0] * inst.nm
        for k in range(inst.n):
            if state.mach_of[k] < 0:
                rem[assign[k]] += inst.dur[k]
        for m in range(inst.nm):
            lb = max(lb, state.free[m] + rem[m])
        for k in range(inst.n):
            if state.mach_of[k] < 0 and state.missing_preds[k] == 0:
                lb = max(lb, max(state.est[k], 0.0) + inst.dur[k]
                         + inst.tail[k])
        return lb

    def _seq_dfs(self, state: _State, assign) -> bool:
        if self.out_of_budget():
            return False
        if state.n_done == self.inst.n:
            self.record_leaf(state)
            return True
        inst = self.inst
        complete = True
        for (_, _, task) in self._seq_candidates(state, assign):
            if self.should_stop():
                return False
            if task[0] == "comm":
                _, p, k = task
                j1, j2 = assign[p], assign[k]
                cs = max(state.end[p], state.chan_free.get((j1, j2), 0.0))
                ce = cs + inst.comm[p, k]
                old = state.chan_free.get((j1, j2))
                state.comm_sched[p, k] = (j1, j2, cs, ce)
                state.chan_free[j1, j2] = ce
                if self._seq_bound(state, assign) <= self.limit() + _EPS:
                    if not self._seq_dfs(state, assign):
                        complete = False
                del state.comm_sched[p, k]
                if old is None:
                    del state.chan_free[j1, j2]
                else:
                    state.chan_free[j1, j2] = old
            else:
                _, k, m = task
                undo = _dispatch(state, k, m)
                if undo is None:
                    continue
                if self._seq_bound(state, assign) <= self.limit() + _EPS:
                    if not self._seq_dfs(state, assign):
                        complete = False
                _undo(state, undo)
            if self.should_stop():
                return False
        return complete and not self.timed_out


# -- public API ------------------------------------------------------------------


def solve(model: ScheduleModel, cfg: SolveConfig | None = None) -> Solution:
    """Minimize makespan; exact when the search space can be covered.

    The result's ``status`` is ``optimal`` only when the explored mode is
    complete for the instance (all-zero communication durations, or the
    fixed-assignment enumeration was used) and the search ran to
    exhaustion, or when the incumbent matches a valid relaxation bound.
    """
    cfg = cfg or SolveConfig()
    inst_probe = _Instance(model)
    use_fixed = (not inst_probe.zero_comm and not inst_probe.dynamic
                 and inst_probe.nm ** inst_probe.n
                 <= cfg.max_assignment_enumeration)
    search = _Search(model, cfg)
    if use_fixed:
        exhausted = search.run_fixed_assignment()
        complete_mode = True
    else:
        exhausted = search.run_integrated()
        complete_mode = inst_probe.zero_comm

    sol = search.incumbent
    root = search.root
    if sol is None:
        if search.timed_out:
            return Solution(status=TIME_LIMIT, objective=None, bound=root)
        if exhausted and complete_mode and search.primal_bound is None:
            return Solution(status=INFEASIBLE, objective=None, bound=root)
        # a primal-bound target pruned the tree; absence of a schedule
        # within the target does not prove infeasibility
        return Solution(status=FEASIBLE, objective=None, bound=root)

    sol = replace(sol)
    if exhausted and complete_mode:
        sol.status = OPTIMAL
        sol.bound = sol.objective
    elif sol.objective is not None and sol.objective <= root + _EPS:
        sol.status = OPTIMAL
        sol.bound = sol.objective
    elif search.timed_out:
        sol.status = TIME_LIMIT
        sol.bound = root
    else:
        sol.status = FEASIBLE
        sol.bound = root
    if cfg.compaction == "late" and sol.objective is not None:
        sol = compact_late(model, sol)
    if cfg.idle_refinement and sol.objective is not None:
        sol = replace(refine_idle(model, sol, target=cfg.idle_target,
                                  deadline=search.deadline),
                      status=sol.status, bound=sol.bound)
    return sol


def warm_start(model: ScheduleModel, hint: Solution) -> ScheduleModel:
    """Attach a feasible incumbent; the solver can then only improve on it."""
    from .simulate import verify  # deferred to avoid a module cycle

    report = verify(model.graph, model.cluster, hint,
                    capped=model.options.memory_capped,
                    dynamic=model.options.dynamic_loading)
    if not report.feasible:
        raise SolveError(
            "warm-start hint is infeasible: "
            + "; ".join(str(v) for v in report.violations[:5]))
    new = replace(model)
    object.__setattr__(new, "warm_hint", hint)
    return new


def compact_late(model: ScheduleModel, sol: Solution) -> Solution:
    """Right-justify a schedule at fixed makespan and fixed sequences.

    Every task moves as late as its machine successor, channel successor,
    and data consumers allow; ramp-up idle migrates to the schedule
    boundary while structurally forced gaps remain. Order on every
    machine and channel is preserved, so feasibility carries over.
    """
    g = model.graph
    T = sol.objective
    ops = list(g.operations)
    mach_seq: dict[str, list[str]] = {}
    for i in sorted(ops, key=lambda i: (sol.op_times[i][0], i)):
        mach_seq.setdefault(sol.assignment[i], []).append(i)
    chan_seq: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for key in sorted(sol.comm_times,
                      key=lambda kk: (sol.comm_times[kk][1], kk)):
        chan, _, _ = sol.comm_times[key]
        if chan[0] != chan[1]:
            chan_seq.setdefault(chan, []).append(key)

    latest_end: dict[str, float] = {i: T for i in ops}
    comm_latest_end: dict[tuple[str, str], float] = {}
    new_op: dict[str, tuple[float, float]] = {}
    new_comm: dict[tuple[str, str], tuple[tuple[str, str], float, float]] = {}

    for i in reversed(g.topo_order()):
        le = latest_end[i]
        # machine successor
        seq = mach_seq[sol.assignment[i]]
        pos = seq.index(i)
        if pos + 1 < len(seq) and seq[pos + 1] in new_op:
            le = min(le, new_op[seq[pos + 1]][0])
        dur_i = sol.op_times[i][1] - sol.op_times[i][0]
        # outgoing transfers
        for k in g.successors(i):
            key = (i, k)
            if key not in sol.comm_times:
                le = min(le, new_op[k][0] if k in new_op else T)
                continue
            chan, cs, ce = sol.comm_times[key]
            cd = ce - cs
            lc_end = new_op[k][0] if k in new_op else T
            if chan[0] != chan[1]:
                cseq = chan_seq[chan]
                cpos = cseq.index(key)
                if cpos + 1 < len(cseq) and cseq[cpos + 1] in comm_latest_end:
                    nxt = cseq[cpos + 1]
                    lc_end = min(lc_end, new_comm[nxt][1])
            new_cs = lc_end - cd
            new_comm[key] = (chan, new_cs, lc_end)
            comm_latest_end[key] = lc_end
            le = min(le, new_cs)
        new_op[i] = (le - dur_i, le)

    return replace(
        sol,
        op_times={i: new_op[i] for i in ops},
        comm_times={k: new_comm[k] for k in sol.comm_times},
    )

# -- interior-idle refinement -------------------------------------------------


class _SeqSpace:
    """Shared arrays for evaluating fixed per-machine operation orders."""

    def __init__(self, model: ScheduleModel, sol: Solution):
        g = model.graph
        self.ops = sorted(g.operations)
        self.idx = {o: k for k, o in enumerate(self.ops)}
        self.dur = [g.operations[o].duration for o in self.ops]
        self.act = [g.operations[o].activation_delta for o in self.ops]
        self.dep = [[] for _ in self.ops]
        for (a, b) in sorted(g.edges):
            self.dep[self.idx[a]].append(self.idx[b])
        self.machines = sorted({sol.assignment[i] for i in self.ops})
        self.cap = {j: model.cluster.machines[j].memory_capacity
                    for j in self.machines}
        self.capped = model.options.memory_capped
        # per-machine static memory: op weight memory plus resident
        # shared assets; independent of the op order
        self.static_w = {}
        for j in self.machines:
            mine = [i for i in self.ops if sol.assignment[i] == j]
            assets = {r for i in mine for r in g.operations[i].weight_refs}
            self.static_w[j] = (
                sum(g.operations[i].weight_mem for i in mine)
                + sum(g.weights[r].size for r in assets))

    def evaluate(self, seqs: Mapping[str, list[str]]):
        """(makespan, total interior idle, starts) or None on a cycle."""
        n = len(self.ops)
        succ = [list(d) for d in self.dep]
        indeg = [0] * n
        for k in range(n):
            for b in self.dep[k]:
                indeg[b] += 1
        idx = self.idx
        for seq in seqs.values():
            for a, b in zip(seq, seq[1:]):
                succ[idx[a]].append(idx[b])
                indeg[idx[b]] += 1
        e = [0.0] * n
        heads = [k for k in range(n) if indeg[k] == 0]
        seen = 0
        while heads:
            k = heads.pop()
            seen += 1
            ek = e[k] + self.dur[k]
            for b in succ[k]:
                if ek > e[b]:
                    e[b] = ek
                indeg[b] -= 1
                if indeg[b] == 0:
                    heads.append(b)
        if seen < n:
            return None
        # right-compaction: keep every sequence, pin each trailing op at
        # its earliest start and push the rest as late as their
        # successors allow; gaps migrate to the machine boundaries where
        # they stop counting as interior idle
        order = sorted(range(n), key=lambda k: -e[k])
        for k in order:
            if succ[k]:
                lim = min(e[b] for b in succ[k]) - self.dur[k]
                if lim > e[k]:
                    e[k] = lim
        makespan = 0.0
        interior = 0.0
        for seq in seqs.values():
            last = idx[seq[-1]]
            end = e[last] + self.dur[last]
            if end > makespan:
                makespan = end
            interior += (end - e[idx[seq[0]]]) \
                - sum(self.dur[idx[i]] for i in seq)
        return makespan, interior, e

    def memory_ok(self, seqs: Mapping[str, list[str]],
                  only=None) -> bool:
        if not self.capped:
            return True
        for j in (only if only is not None else seqs):
            prefix = 0.0
            min_pre = 0.0
            min_all = 0.0
            max_p = 0.0
            for i in seqs[j]:
                if prefix < min_pre:
                    min_pre = prefix
                prefix += self.act[self.idx[i]]
                if prefix < min_all:
                    min_all = prefix
                if prefix > max_p:
                    max_p = prefix
            lift = max(self.static_w[j] - min_pre, -min_all, 0.0)
            if lift + max_p > self.cap[j] + _EPS:
                return False
        return True


def _rebuild_refined(model: ScheduleModel, sol: Solution,
                     space: _SeqSpace, seqs, e) -> Solution:
    starts = {i: e[space.idx[i]] for i in space.ops}
    op_times = {i: (starts[i], starts[i] + space.dur[space.idx[i]])
                for i in space.ops}
    comm = {}
    for key, (chan, _cs, _ce) in sol.comm_times.items():
        t = op_times[key[0]][1]
        comm[key] = (chan, t, t)
    return replace(sol, objective=max(t[1] for t in op_times.values()),
                   op_times=op_times, comm_times=comm)


def refine_idle(model: ScheduleModel, sol: Solution, *,
                time_cap: float | None = None,
                target: float | None = None,
                seed: int = 0,
                iterations: int = 400_000,
                restarts: int = 4,
                deadline: float | None = None) -> Solution:
    """Reduce a schedule's interior idle by reordering machine sequences.

    A seeded annealing pass perturbs per-machine operation orders (single
    relocations plus coordinated shifts along dependency chains) without
    touching the assignment, keeping makespan within ``time_cap``
    (default: the schedule's own makespan). With ``target`` set, the
    search stops at a schedule whose interior idle equals the target
    exactly; otherwise it minimizes. With ``deadline`` (a monotonic-clock
    timestamp) the pass stops early and keeps the best order found. Only
    applies to schedules whose cross-machine transfers all take zero time
    and to models without dynamic weight loading; anything else is
    returned unchanged.
    """
    import math
    import random

    if model.options.dynamic_loading or not sol.op_times:
        return sol
    g = model.graph
    for (a, b), edge in g.edges.items():
        if edge.comm_duration and sol.assignment[a] != sol.assignment[b]:
            return sol

    space = _SeqSpace(model, sol)
    base = {}
    for i in sorted(space.ops, key=lambda i: (sol.op_times[i][0], i)):
        base.setdefault(sol.assignment[i], []).append(i)
    cap = sol.objective if time_cap is None else time_cap
    res = space.evaluate(base)
    if res is None or not space.memory_ok(base):
        return sol
    base_T, base_int, base_e = res
    if target is not None and base_int == target and base_T <= cap + _EPS:
        return _rebuild_refined(model, sol, space, base, base_e)
    if target is None and base_int <= 0:
        return sol

    def cost(T, interior):
        return 1000.0 * max(0.0, T - cap) + interior

    best = None  # (interior, seqs, T, e)
    devs = sorted(base)
    for round_no in range(restarts):
        rng = random.Random(seed + round_no)
        cur = {j: list(s) for j, s in base.items()}
        T, inte = base_T, base_int
        c = cost(T, inte)
        period = max(1, iterations // 4)
        for it in range(iterations):
            if (deadline is not None and it % 512 == 0
                    and _time.monotonic() > deadline):
                break
            temp = 2.0 * (1.0 - (it % period) / period) + 0.02
            if rng.random() < 0.75:
                j = devs[rng.randrange(len(devs))]
                seq = cur[j]
                n = len(seq)
                if n < 2:
                    continue
                a = (rng.randrange(n // 2, n) if rng.random() < 0.7
                     else rng.randrange(n))
                b = max(0, min(n - 1, a + rng.randint(-10, 10)))
                if a == b:
                    continue
                trial = list(seq)
                trial.insert(b, trial.pop(a))
                undo = {j: seq}
                cur[j] = trial
            else:
                # advance a dependency chain one slot on every machine
                k = rng.randrange(len(space.ops))
                undo = {}
                for _hop in range(6):
                    op = space.ops[k]
                    j = sol.assignment[op]
                    seq = cur[j]
                    pos = seq.index(op)
                    if pos > 0:
                        trial = list(seq)
                        trial.insert(pos - 1, trial.pop(pos))
                        if j not in undo:
                            undo[j] = seq
                        cur[j] = trial
                    if not space.dep[k]:
                        break
                    k = space.dep[k][0]
                if not undo:
                    continue
            r = (space.evaluate(cur)
                 if space.memory_ok(cur, undo) else None)
            if r is None:
                cur.update(undo)
                continue
            nc = cost(r[0], r[1])
            if nc <= c or rng.random() < math.exp(-(nc - c) / temp):
                c = nc
                T, inte = r[0], r[1]
                if T <= cap + _EPS:
                    if target is not None and inte == target:
                        return _rebuild_refined(
                            model, sol, space,
                            {j: list(s) for j, s in cur.items()}, r[2])
                    if ((target is None or inte > target)
                            and (best is None or inte < best[0])):
                        best = (inte, {j: list(s) for j, s in cur.items()},
                                r[0], r[2])
            else:
                cur.update(undo)
        if target is None and best is not None and best[0] == 0:
            break
        if deadline is not None and _time.monotonic() > deadline:
            break

    if best is not None and best[0] < base_int:
        return _rebuild_refined(model, sol, space, best[1], best[3])
    return sol
