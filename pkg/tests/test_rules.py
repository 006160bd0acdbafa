import pytest

from leapjoin.errors import UserError
from leapjoin.parser import parse_rule
from leapjoin.rules import (
    Disj,
    classify_variables,
    default_key_order,
    is_projection_free,
    validate_key_order,
)

CATALOG = {
    "A": (1, False), "B": (1, False),
    "A2": (2, False), "B2": (2, False),
    "G": (2, False), "H": (2, False), "I": (3, False), "R": (1, False),
    "R3": (3, False),
    "F1": (1, True), "G1": (1, True), "E2": (2, True),
}


class TestClassify:
    def test_function_keys_and_values(self):
        r = parse_rule("S(x,y) <- F1[x]=a, G1[y]=b, add[a,b]=r.", CATALOG)
        kinds = classify_variables(r)
        assert {v for v, k in kinds.items() if k == "KEY"} == {"x", "y"}
        assert {v for v, k in kinds.items() if k == "VALUE"} == {"a", "b", "r"}

    def test_single_relation(self):
        r = parse_rule("C(x) <- A(x).", CATALOG)
        assert classify_variables(r) == {"x": "KEY"}

    def test_primitive_contributes_no_key_positions(self):
        r = parse_rule("S(x,y) <- A2(x,y), add[x,y]=z.", CATALOG)
        kinds = classify_variables(r)
        assert kinds == {"x": "KEY", "y": "KEY", "z": "VALUE"}

    def test_order_independent(self):
        r1 = parse_rule("S(x,y) <- A2(x,y), B2(y,z).", CATALOG)
        r2 = parse_rule("S(x,y) <- B2(y,z), A2(x,y).", CATALOG)
        assert classify_variables(r1) == classify_variables(r2)


class TestProjectionFree:
    def test_full_head(self):
        r = parse_rule("T(x,y,z) <- A2(x,y), B2(y,z).", CATALOG)
        assert is_projection_free(r)

    def test_projected_head(self):
        r = parse_rule("S(x,y) <- A2(x,y), B2(y,z).", CATALOG)
        assert not is_projection_free(r)

    def test_same_atom_both_sides(self):
        r = parse_rule("C(x) <- A(x).", CATALOG)
        assert is_projection_free(r)


class TestKeyOrder:
    def test_four_atom_rule_index_elision(self):
        r = parse_rule(
            "F(x,y) <- G(x,z), H(y,z), I(x,y,z), R(z). @order(x,y,z)", CATALOG
        )
        plan = validate_key_order(r)
        bp = plan.branches[0]
        by_name = {ap.name: i for i, ap in enumerate(bp.atoms)}

        def needed(pred):
            i = by_name[pred]
            return [
                lvl
                for lvl in range(1, len(bp.atoms[i].depths) + 1)
                if (0, i, lvl) in plan.index_specs
            ]

        assert needed("G") == [2]
        assert needed("H") == [1, 2]
        assert needed("I") == []
        assert needed("R") == [1]
        assert len(plan.index_specs) == 4
        # index record shapes: prefix/context lengths per the SensIndex layout
        assert plan.index_specs[(0, by_name["R"], 1)] == (0, 2)
        assert plan.index_specs[(0, by_name["H"], 2)] == (1, 1)

    def test_sub_join_structure(self):
        r = parse_rule(
            "F(x,y) <- G(x,z), H(y,z), I(x,y,z), R(z). @order(x,y,z)", CATALOG
        )
        bp = validate_key_order(r).branches[0]
        parts = [
            [(bp.atoms[p].name, lvl) for p, lvl in bp.participants[d]]
            for d in (1, 2, 3)
        ]
        assert parts[0] == [("G", 1), ("I", 1)]
        assert parts[1] == [("H", 1), ("I", 2)]
        assert parts[2] == [("G", 2), ("H", 2), ("I", 3), ("R", 1)]

    def test_single_atom_rule_needs_no_indices(self):
        r = parse_rule("C(x) <- A(x).", CATALOG)
        assert validate_key_order(r).index_specs == {}

    def test_force_sens_builds_indices_for_exempt_atoms(self):
        r = parse_rule("C(x) <- A(x), B(x). @force_sens", CATALOG)
        plan = validate_key_order(r)
        assert len(plan.index_specs) == 2
        r2 = parse_rule("C(x) <- A(x), B(x).", CATALOG)
        assert validate_key_order(r2).index_specs == {}

    def test_default_order_is_first_occurrence(self):
        r = parse_rule("S(x,y) <- B2(y,z), A2(x,y).", CATALOG)
        assert default_key_order(r) == ("y", "z", "x")

    def test_order_missing_variable_rejected(self):
        r = parse_rule("F(x,y) <- G(x,z), H(y,z). @order(x,y)", CATALOG)
        with pytest.raises(UserError):
            validate_key_order(r)

    def test_order_with_value_variable_rejected(self):
        r = parse_rule("S(x) <- F1[x]=a. @order(x,a)", CATALOG)
        with pytest.raises(UserError):
            validate_key_order(r)

    def test_atom_args_must_follow_order(self):
        r = parse_rule("T(x,y,z) <- R3(z,x,y). @order(x,y,z)", CATALOG)
        with pytest.raises(UserError):
            validate_key_order(r)

    def test_min_max_head_keys_must_prefix_order(self):
        r = parse_rule(
            "M[y]=m <- agg<< m=max(v) >> E2[x,y]=v. @order(x,y)", CATALOG
        )
        with pytest.raises(UserError):
            validate_key_order(r)
        ok = parse_rule("M[x]=m <- agg<< m=max(v) >> E2[x,y]=v.", CATALOG)
        assert validate_key_order(ok).heads[0].kind == "MAX"


class TestHeadKinds:
    def test_projection_free_head_is_direct(self):
        r = parse_rule("T(x,y,z) <- A2(x,y), B2(y,z).", CATALOG)
        assert validate_key_order(r).heads[0].kind == "DIRECT"

    def test_projected_head_is_counted(self):
        r = parse_rule("S(x,y) <- A2(x,y), B2(y,z).", CATALOG)
        assert validate_key_order(r).heads[0].kind == "COUNTED"

    def test_agg_kinds(self):
        cases = {
            "D[x]=c <- agg<< c=count() >> A2(x,y).": "COUNT",
            "T[x]=s <- agg<< s=sum(v) >> E2[x,y]=v.": "GROUP_SUM",
            "T[x]=s <- agg<< s=min(v) >> E2[x,y]=v.": "MIN",
            "T[x]=s <- agg<< s=total(v) >> E2[x,y]=v.": "FLOAT_TOTAL",
        }
        for text, kind in cases.items():
            assert validate_key_order(parse_rule(text, CATALOG)).heads[0].kind == kind

    def test_mixed_heads_classified_independently(self):
        r = parse_rule("T(x,y,z), S(x) <- A2(x,y), B2(y,z).", CATALOG)
        plan = validate_key_order(r)
        assert [hp.kind for hp in plan.heads] == ["DIRECT", "COUNTED"]


class TestParser:
    def test_unknown_predicate(self):
        with pytest.raises(UserError, match="unknown predicate"):
            parse_rule("C(x) <- Zap(x).", CATALOG)

    def test_negation_parses_but_planning_rejects(self):
        r = parse_rule("C(x) <- A(x), !B(x).", CATALOG)
        with pytest.raises(UserError, match="negation"):
            validate_key_order(r)

    def test_disjunction_parses_to_branches(self):
        r = parse_rule("C(x) <- (A(x) ; B(x)).", CATALOG)
        plan = validate_key_order(r)
        assert len(plan.branches) == 2

    def test_nested_disjunction_expands(self):
        r = parse_rule("C(x) <- ((A(x) ; B(x)) ; A(x)).", CATALOG)
        assert len(validate_key_order(r).branches) == 3

    def test_disjunction_with_uneven_variables_rejected(self):
        r = parse_rule("C(x) <- A(x), (B(x) ; A2(x,y)).", CATALOG)
        with pytest.raises(UserError, match="branches"):
            validate_key_order(r)

    def test_arity_mismatch(self):
        with pytest.raises(UserError, match="arity"):
            parse_rule("C(x) <- A2(x).", CATALOG)

    def test_existentials_inferred_at_top_conjunction(self):
        r = parse_rule("S(x) <- A2(x,y).", CATALOG)
        assert r.universals == ("x",)
        assert r.body.existentials == ("y",)

    def test_existentials_inferred_inside_disjunction_branch(self):
        r = parse_rule("S(x) <- A(x), (A2(x,y) ; B(x), B2(x,z)).", CATALOG)
        disj = next(f for f in r.body.forms if isinstance(f, Disj))
        assert disj.branches[0].existentials == ("y",)
        assert disj.branches[1].existentials == ("z",)
        assert r.body.existentials == ()

    def test_annotations(self):
        r = parse_rule("C(x) <- A(x), B(x). @order(x) @force_sens", CATALOG)
        assert r.key_order == ("x",)
        assert r.force_sens

    def test_agg_argument_arity(self):
        with pytest.raises(UserError):
            parse_rule("D[x]=c <- agg<< c=count(v) >> A2(x,y).", CATALOG)
        with pytest.raises(UserError):
            parse_rule("D[x]=c <- agg<< c=sum() >> A2(x,y).", CATALOG)
