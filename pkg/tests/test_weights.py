import pytest

from opsched.graph import WeightAsset
from opsched.model import ModelError, ModelOptions, build_model
from opsched.weights import extend_model

from conftest import cluster, edge, graph, op


def base_model(**kw):
    g = graph([op("a", 2, refs=("w0",)), op("b", 3)],
              [edge("a", "b")],
              [WeightAsset("w0", 1, load_cost=2, unload_cost=1)])
    return build_model(g, cluster(2), ModelOptions(**kw))


class TestExtendModel:
    def test_enables_dynamic_loading(self):
        m2 = extend_model(base_model())
        assert m2.options.dynamic_loading

    def test_preserves_memory_capping(self):
        m2 = extend_model(base_model(memory_capped=True))
        assert m2.options.memory_capped

    def test_adds_new_weights(self):
        m2 = extend_model(base_model(),
                          weights=[WeightAsset("w1", 2)])
        assert set(m2.graph.weights) == {"w0", "w1"}

    def test_conflicting_weight_definition_rejected(self):
        with pytest.raises(ModelError, match="conflicting"):
            extend_model(base_model(), weights=[WeightAsset("w0", 9)])

    def test_identical_redefinition_accepted(self):
        extend_model(base_model(),
                     weights=[WeightAsset("w0", 1, load_cost=2,
                                          unload_cost=1)])

    def test_use_mapping_adds_refs(self):
        m2 = extend_model(base_model(),
                          weights=[WeightAsset("w1", 2)],
                          use={"b": ["w1", "w0"]})
        assert m2.graph.operations["b"].weight_refs == ("w0", "w1")

    def test_use_pairs_form(self):
        m2 = extend_model(base_model(), use=[("b", "w0")])
        assert m2.graph.operations["b"].weight_refs == ("w0",)

    def test_use_unknown_operation_rejected(self):
        with pytest.raises(ModelError, match="unknown operation"):
            extend_model(base_model(), use={"zz": ["w0"]})

    def test_use_unknown_weight_rejected(self):
        with pytest.raises(ModelError, match="unknown weight"):
            extend_model(base_model(), use={"b": ["nope"]})

    def test_primal_bound_carried_over(self):
        from opsched.model import set_primal_bound
        m = set_primal_bound(base_model(), 11)
        assert extend_model(m).primal_bound == 11

    def test_duration_constraints_gain_load_terms(self):
        m2 = extend_model(base_model())
        dur_a = next(c for c in m2.constraints
                     if c.tag == "duration"
                     and any(v.indices[:1] == ("a",) for _, v in c.terms
                             if v.kind == "e"))
        kinds = {v.kind for _, v in dur_a.terms}
        assert "l" in kinds  # load decision enters the occupied interval

    def test_presence_rule_generated_for_refs(self):
        m2 = extend_model(base_model())
        presence = [c for c in m2.constraints if c.tag == "weight-presence"]
        assert len(presence) == 1  # only op a references w0
