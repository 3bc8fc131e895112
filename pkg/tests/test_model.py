import pytest

from opsched.graph import WeightAsset
from opsched.model import (CAPACITY_TAG, CORE_TAGS, EXTENSION_TAGS,
                           PRIMAL_BOUND_TAG, ModelError, ModelOptions,
                           build_model, clear_primal_bound, compute_horizon,
                           set_primal_bound)

from conftest import cluster, edge, graph, op


def small_graph():
    return graph([op("a", 2, act=1, refs=("w",)), op("b", 3, mem=1),
                  op("c", 1, act=-1)],
                 [edge("a", "b", comm=2), edge("b", "c")],
                 [WeightAsset("w", 2, load_cost=1, unload_cost=1)])


class TestHorizon:
    def test_horizon_sums_durations_comm_and_load_costs(self):
        g = small_graph()
        # durations 6 + comm 2 + (load 1 + unload 1) for the one reference
        assert compute_horizon(g) == 10

    def test_big_m_is_horizon(self):
        g = small_graph()
        assert build_model(g, cluster(2)).big_M == compute_horizon(g)


class TestBuildValidation:
    def test_capped_infeasible_operation_rejected(self):
        g = graph([op("a", 1, mem=5, act=2)])
        h = cluster(1, cap=6)
        with pytest.raises(ModelError, match="memory"):
            build_model(g, h, ModelOptions(memory_capped=True))

    def test_capped_feasible_on_one_machine_accepted(self):
        g = graph([op("a", 1, mem=5, act=2)])
        h = cluster(2, cap=7)
        build_model(g, h, ModelOptions(memory_capped=True))

    def test_dynamic_requires_weights(self):
        g = graph([op("a", 1)])
        with pytest.raises(ModelError, match="weight"):
            build_model(g, cluster(1), ModelOptions(dynamic_loading=True))

    def test_dynamic_ignores_ref_sizes_in_fit_check(self):
        # with loading, the asset need not be resident alongside the
        # activation peak of a single op, so a tight cap is buildable
        g = graph([op("a", 1, act=2, refs=("w",))],
                  weights=[WeightAsset("w", 10)])
        build_model(g, cluster(1, cap=3),
                    ModelOptions(memory_capped=True, dynamic_loading=True))


class TestConstraintStore:
    def test_core_tags_all_present(self):
        # a fully connected cluster never emits comm-forbidden rows; the
        # restricted-channel case is covered separately below
        m = build_model(small_graph(), cluster(2))
        tags = {c.tag for c in m.constraints}
        assert set(CORE_TAGS) - {"comm-forbidden"} <= tags

    def test_capacity_only_when_capped(self):
        g = small_graph()
        plain = build_model(g, cluster(2))
        capped = build_model(g, cluster(2),
                             ModelOptions(memory_capped=True))
        assert CAPACITY_TAG not in {c.tag for c in plain.constraints}
        assert CAPACITY_TAG in {c.tag for c in capped.constraints}

    def test_extension_tags_only_when_dynamic(self):
        g = small_graph()
        plain = build_model(g, cluster(2))
        dyn = build_model(g, cluster(2), ModelOptions(dynamic_loading=True))
        assert not set(EXTENSION_TAGS) & {c.tag for c in plain.constraints}
        assert set(EXTENSION_TAGS) <= {c.tag for c in dyn.constraints}

    def test_assignment_constraints_one_per_op(self):
        m = build_model(small_graph(), cluster(2))
        assigns = [c for c in m.constraints if c.tag == "assign"]
        assert len(assigns) == 3
        for c in assigns:
            assert c.sense == "==" and c.rhs == 1
            assert all(coef == 1 for coef, _ in c.terms)

    def test_order_complement_counts(self):
        m = build_model(small_graph(), cluster(2))
        comp = [c for c in m.constraints if c.tag == "order-complement"]
        assert len(comp) == 3  # unordered op pairs

    def test_objective_is_makespan_variable(self):
        m = build_model(small_graph(), cluster(2))
        assert m.objective.name == "makespan"
        assert ("makespan", ()) in m.variables

    def test_duration_constraints_static(self):
        m = build_model(small_graph(), cluster(2))
        durs = {c.rhs for c in m.constraints if c.tag == "duration"}
        assert durs == {2, 3, 1}

    def test_comm_forbidden_for_missing_channels(self):
        h = cluster(2, channels=[("m0", "m1")])  # no m1->m0 channel
        m = build_model(small_graph(), h)
        assert any(c.tag == "comm-forbidden" for c in m.constraints)

    def test_binary_variables_marked(self):
        m = build_model(small_graph(), cluster(2))
        kinds = {}
        for (kind, _), ref in m.variables.items():
            kinds.setdefault(kind, set()).add(ref.domain)
        assert kinds["x"] == {"binary"}
        assert kinds["y"] == {"binary"}
        assert kinds["s"] == {"continuous"}

    def test_store_is_deterministic(self):
        g = small_graph()
        m1 = build_model(g, cluster(2))
        m2 = build_model(g, cluster(2))
        assert [v.name for v in m1.variables.values()] == \
               [v.name for v in m2.variables.values()]
        assert m1.constraints == m2.constraints


class TestPrimalBound:
    def test_set_and_clear(self):
        m = build_model(small_graph(), cluster(2))
        b = set_primal_bound(m, 9)
        assert b.primal_bound == 9
        assert any(c.tag == PRIMAL_BOUND_TAG for c in b.constraints)
        c = clear_primal_bound(b)
        assert c.primal_bound is None
        assert not any(x.tag == PRIMAL_BOUND_TAG for x in c.constraints)

    def test_non_positive_bound_rejected(self):
        m = build_model(small_graph(), cluster(2))
        with pytest.raises(ModelError):
            set_primal_bound(m, 0)
