"""Exports are checked by re-parsing the files with a small independent
reader and comparing the recovered matrix against the model's own
constraint store."""
import io

from opsched.graph import WeightAsset
from opsched.model import ModelOptions, build_model, set_primal_bound
from opsched.mpswriter import export_lp, export_mps

from conftest import cluster, edge, graph, op


def tiny_model(**kw):
    g = graph([op("a", 2, act=1, refs=("w",)), op("b", 3)],
              [edge("a", "b", comm=1)],
              [WeightAsset("w", 2, load_cost=1)])
    return build_model(g, cluster(2, channels=[("m0", "m1")]),
                       ModelOptions(**kw))


def parse_mps(text):
    """Minimal fixed-format MPS reader returning the mixed-integer matrix."""
    aliases = {}
    rows = {}
    row_order = []
    cols = {}
    integer_cols = set()
    rhs = {}
    bounds = {}
    section = None
    in_int = False
    for line in text.splitlines():
        if line.startswith("*"):
            parts = line[1:].split("=", 1)
            if len(parts) == 2:
                aliases[parts[0].strip()] = parts[1].strip()
            continue
        if not line.startswith(" "):
            section = line.split()[0]
            continue
        fields = line.split()
        if section == "ROWS":
            sense, name = fields
            if sense != "N":
                rows[name] = sense
                row_order.append(name)
        elif section == "COLUMNS":
            if "MARKER" in line:
                in_int = "'INTORG'" in line
                continue
            cname, rname, coef = fields
            if in_int:
                integer_cols.add(cname)
            cols.setdefault(cname, {})[rname] = float(coef)
        elif section == "RHS":
            _, rname, value = fields
            rhs[rname] = float(value)
        elif section == "BOUNDS":
            kind = fields[0]
            bounds[fields[-1]] = kind
    return {"aliases": aliases, "rows": rows, "row_order": row_order,
            "cols": cols, "integer": integer_cols, "rhs": rhs,
            "bounds": bounds}


def merged(con):
    acc = {}
    for coef, ref in con.terms:
        acc[ref.name] = acc.get(ref.name, 0.0) + coef
    return {n: c for n, c in acc.items() if c != 0.0}


def render(model):
    buf = io.StringIO()
    export_mps(model, buf)
    return buf.getvalue()


class TestMpsRoundTrip:
    def test_matrix_matches_constraint_store(self):
        model = tiny_model(memory_capped=True)
        doc = parse_mps(render(model))
        assert len(doc["row_order"]) == len(model.constraints)
        sense_code = {"<=": "L", ">=": "G", "==": "E"}
        # invert: generated column name -> native variable name
        for rname, con in zip(doc["row_order"], model.constraints):
            assert doc["rows"][rname] == sense_code[con.sense]
            assert doc["rhs"].get(rname, 0.0) == con.rhs
            got = {doc["aliases"][c]: entries[rname]
                   for c, entries in doc["cols"].items()
                   if rname in entries}
            assert got == merged(con)

    def test_objective_column(self):
        model = tiny_model()
        doc = parse_mps(render(model))
        obj_cols = [c for c, entries in doc["cols"].items()
                    if "COST" in entries]
        assert len(obj_cols) == 1
        assert doc["aliases"][obj_cols[0]] == "makespan"

    def test_binary_columns_marked_and_bounded(self):
        model = tiny_model()
        doc = parse_mps(render(model))
        binaries = {name for (_, name), ref in
                    zip(model.variables, model.variables.values())
                    if ref.domain == "binary"}
        recovered = {doc["aliases"][c] for c in doc["integer"]}
        assert recovered == {ref.name for ref in model.variables.values()
                             if ref.domain == "binary"}
        for c in doc["integer"]:
            assert doc["bounds"][c] == "BV"
        del binaries

    def test_continuous_columns_unbounded_above(self):
        model = tiny_model()
        doc = parse_mps(render(model))
        cont = {c for c in doc["cols"] if c not in doc["integer"]}
        for c in cont:
            assert doc["bounds"][c] == "PL"

    def test_every_variable_has_a_column(self):
        model = tiny_model()
        doc = parse_mps(render(model))
        assert set(doc["aliases"].values()) == \
               {ref.name for ref in model.variables.values()}

    def test_primal_bound_appears_as_row(self):
        model = set_primal_bound(tiny_model(), 7)
        doc = parse_mps(render(model))
        last = doc["row_order"][-1]
        assert doc["rows"][last] == "L"
        assert doc["rhs"][last] == 7

    def test_deterministic_bytes(self):
        assert render(tiny_model()) == render(tiny_model())

    def test_ends_with_endata(self):
        assert render(tiny_model()).rstrip().endswith("ENDATA")


class TestLpFormat:
    def render_lp(self, model):
        buf = io.StringIO()
        export_lp(model, buf)
        return buf.getvalue()

    def test_structure_and_row_count(self):
        model = tiny_model()
        text = self.render_lp(model)
        for marker in ("Minimize", "Subject To", "Binary", "End"):
            assert marker in text
        body = text.split("Subject To", 1)[1].split("Binary", 1)[0]
        rows = [ln for ln in body.splitlines() if ":" in ln]
        assert len(rows) == len(model.constraints)

    def test_senses_rendered(self):
        text = self.render_lp(tiny_model())
        assert " <= " in text and " >= " in text and " = " in text

    def test_binary_section_lists_all_binaries(self):
        model = tiny_model()
        text = self.render_lp(model)
        listed = text.split("Binary", 1)[1].split("End", 1)[0].split()
        n_binary = sum(1 for ref in model.variables.values()
                       if ref.domain == "binary")
        assert len(listed) == n_binary

    def test_deterministic_bytes(self):
        assert self.render_lp(tiny_model()) == self.render_lp(tiny_model())
