"""Dynamic weight loading/unloading extension.

Layers load/unload decision variables onto a schedule model: each
operation may load its required weight assets right before running (or
find them preloaded, or left resident by an earlier operation on the
same machine) and may unload assets afterwards to reclaim memory.
Loading and unloading serialize on the owning machine and extend the
operation's occupied interval; preloads are free in time but count
toward initial memory.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Mapping

from .graph import ComputationGraph, WeightAsset
from .model import ModelError, ModelOptions, ScheduleModel, build_model

__all__ = ["extend_model"]


def _normalize_use(use) -> dict[str, tuple[str, ...]]:
    if isinstance(use, Mapping):
        pairs = [(i, w) for i, ws in use.items() for w in ws]
    else:
        pairs = [(i, w) for (i, w) in use]
    by_op: dict[str, set[str]] = {}
    for i, w in pairs:
        by_op.setdefault(i, set()).add(w)
    return {i: tuple(sorted(ws)) for i, ws in by_op.items()}


def extend_model(model: ScheduleModel,
                 weights: Iterable[WeightAsset] | None = None,
                 use: Mapping[str, Iterable[str]] |
                 Iterable[tuple[str, str]] | None = None) -> ScheduleModel:
    """Return a copy of `model` with dynamic weight loading enabled.

    `weights` adds assets beyond those already on the graph; `use`
    declares extra op-to-weight requirements on top of each operation's
    `weight_refs`. The static resident-weight memory baseline is replaced
    by one driven by the load/unload decisions, and every operation's
    effective duration gains its chosen load and unload costs.
    """
    g = model.graph
    assets = dict(g.weights)
    for w in weights or ():
        if w.id in assets and assets[w.id] != w:
            raise ModelError(f"conflicting definitions for weight {w.id!r}")
        assets[w.id] = w

    extra = _normalize_use(use) if use is not None else {}
    for i in extra:
        if i not in g.operations:
            raise ModelError(f"use relation names unknown operation {i!r}")

    ops = []
    for i, op in g.operations.items():
        refs = set(op.weight_refs) | set(extra.get(i, ()))
        for w in refs:
            if w not in assets:
                raise ModelError(
                    f"operation {i!r} references unknown weight {w!r}")
        ops.append(replace(op, weight_refs=tuple(sorted(refs))))

    g2 = ComputationGraph(ops, g.edges.values(), assets.values())
    options = ModelOptions(memory_capped=model.options.memory_capped,
                           dynamic_loading=True)
    new = build_model(g2, model.cluster, options)
    if model.primal_bound is not None:
        new = replace(new, primal_bound=model.primal_bound)
    return new
