"""Export of schedule models to standard MIP interchange formats.

Writes fixed-format MPS and CPLEX-style LP text. Row and column names
are generated (R0000001, C0000001) because native variable names carry
parentheses and commas that neither format accepts; a comment header
maps generated column names back to model variables. Output is fully
deterministic: columns follow variable creation order, rows follow
constraint creation order.
"""
from __future__ import annotations

from typing import IO

from .model import BINARY, LinearConstraint, ScheduleModel, VarRef

__all__ = ["export_mps", "export_lp"]

_OBJ = "COST"


def _name_tables(model: ScheduleModel):
    cols = {}
    for ref in model.variables.values():
        cols[ref.name] = f"C{len(cols) + 1:07d}"
    rows = [f"R{k + 1:07d}" for k in range(len(model.constraints))]
    return cols, rows


def _merged_terms(con: LinearConstraint) -> list[tuple[str, float]]:
    acc: dict[str, float] = {}
    order: list[str] = []
    for coef, ref in con.terms:
        if ref.name not in acc:
            acc[ref.name] = 0.0
            order.append(ref.name)
        acc[ref.name] += coef
    return [(n, acc[n]) for n in order if acc[n] != 0.0]


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def export_mps(model: ScheduleModel, dest: IO[str]) -> None:
    """Write the model as a fixed-format MPS document.

    Binary columns sit inside INTORG/INTEND marker pairs and get
    explicit 0/1 bounds, so any standard reader recovers the same
    mixed-integer matrix.
    """
    cols, rows = _name_tables(model)
    w = dest.write
    w("* generated schedule model\n")
    for ref in model.variables.values():
        w(f"* {cols[ref.name]} = {ref.name}\n")
    w("NAME          SCHEDULE\n")
    w("ROWS\n")
    w(f" N  {_OBJ}\n")
    sense_code = {"<=": "L", ">=": "G", "==": "E"}
    for rname, con in zip(rows, model.constraints):
        w(f" {sense_code[con.sense]}  {rname}\n")

    # column-major entries: objective first, then rows in order
    entries: dict[str, list[tuple[str, float]]] = {
        cols[ref.name]: [] for ref in model.variables.values()}
    entries[cols[model.objective.name]].append((_OBJ, 1.0))
    for rname, con in zip(rows, model.constraints):
        for vname, coef in _merged_terms(con):
            entries[cols[vname]].append((rname, coef))

    w("COLUMNS\n")
    marker = 0
    in_int = False
    for ref in model.variables.values():
        binary = ref.domain == BINARY
        if binary != in_int:
            marker += 1
            kind = "'INTORG'" if binary else "'INTEND'"
            w(f"    MARKER{marker:04d}  'MARKER'                 {kind}\n")
            in_int = binary
        cname = cols[ref.name]
        for rname, coef in entries[cname]:
            w(f"    {cname:<10}{rname:<10}{_num(coef)}\n")
    if in_int:
        marker += 1
        w(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'\n")

    w("RHS\n")
    for rname, con in zip(rows, model.constraints):
        if con.rhs != 0.0:
            w(f"    RHS       {rname:<10}{_num(con.rhs)}\n")
    w("BOUNDS\n")
    for ref in model.variables.values():
        if ref.domain == BINARY:
            w(f" BV BND       {cols[ref.name]:<10}\n")
        else:
            w(f" PL BND       {cols[ref.name]:<10}\n")
    w("ENDATA\n")


def export_lp(model: ScheduleModel, dest: IO[str]) -> None:
    """Write the model in CPLEX LP format, as an MPS alternative."""
    cols, rows = _name_tables(model)
    w = dest.write
    for ref in model.variables.values():
        w(f"\\ {cols[ref.name]} = {ref.name}\n")
    w("Minimize\n")
    w(f" obj: {cols[model.objective.name]}\n")
    w("Subject To\n")
    sense_txt = {"<=": "<=", ">=": ">=", "==": "="}
    for rname, con in zip(rows, model.constraints):
        parts = []
        for vname, coef in _merged_terms(con):
            sign = "-" if coef < 0 else "+"
            mag = abs(coef)
            term = cols[vname] if mag == 1 else f"{_num(mag)} {cols[vname]}"
            parts.append(f"{sign} {term}")
        body = " ".join(parts)
        if body.startswith("+ "):
            body = body[2:]
        w(f" {rname}: {body} {sense_txt[con.sense]} {_num(con.rhs)}\n")
    binaries = [cols[r.name] for r in model.variables.values()
                if r.domain == BINARY]
    if binaries:
        w("Binary\n")
        for name in binaries:
            w(f" {name}\n")
    w("End\n")
