import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshchaos.callgraph import CallGraph
from meshchaos.errors import InputError
from meshchaos.faults import (
    Always,
    Break,
    Delay,
    FaultPlan,
    FaultRule,
    HttpError,
    NthCall,
    WithProbability,
    merge_plans,
    single_rule,
    validate_plan,
)

G = CallGraph(["f0", "f1", "f2"], [("f0", "f1"), ("f1", "f2")])
EDGES = sorted(G.edges)


def test_valid_plan_has_no_errors():
    assert validate_plan(single_rule(("f0", "f1"), Break()), G) == []


def test_absent_edge_is_named():
    errs = validate_plan(single_rule(("f9", "f0"), Break()), G)
    assert len(errs) == 1 and "f9" in str(errs[0])


@pytest.mark.parametrize(
    "rule",
    [
        FaultRule(Always(), Delay(0)),
        FaultRule(Always(), HttpError(302)),
        FaultRule(NthCall(0), Break()),
        FaultRule(WithProbability(0.0, 1), Break()),
        FaultRule(WithProbability(1.5, 1), Break()),
    ],
)
def test_bound_violations(rule):
    errs = validate_plan(FaultPlan({("f0", "f1"): (rule,)}), G)
    assert len(errs) == 1 and errs[0].rule_index == 0


def test_two_breaks_on_one_edge_rejected():
    plan = FaultPlan({("f0", "f1"): (FaultRule(Always(), Break()), FaultRule(NthCall(2), Break()))})
    assert validate_plan(plan, G)


def test_hook_validation():
    assert validate_plan(FaultPlan(load={("f0", "f1"): 0}), G)
    assert validate_plan(FaultPlan(barriers=((0,), (2,))), G, n_steps=2)
    assert not validate_plan(FaultPlan(barriers=((1,), (0,))), G, n_steps=2)
    assert validate_plan(FaultPlan(placement={"svc": "mars"}), G, sites=("earth",))


def test_triggers():
    assert NthCall(2).fires(2) and not NthCall(2).fires(1)
    p = WithProbability(0.5, seed=9)
    draws = [p.fires(i) for i in range(1, 200)]
    assert draws == [p.fires(i) for i in range(1, 200)]
    assert 60 < sum(draws) < 140
    assert all(WithProbability(1.0, 3).fires(i) for i in range(1, 20))


def test_plan_round_trip():
    plan = FaultPlan(
        {("f0", "f1"): (FaultRule(NthCall(2), Delay(40)), FaultRule(WithProbability(0.3, 5), HttpError(503)))},
        barriers=((0, 1), (2,)),
        load={("f1", "f2"): 3},
        placement={"a": "edge"},
    )
    assert FaultPlan.from_dict(plan.to_dict()) == plan


def test_unknown_action_kind():
    with pytest.raises(InputError):
        FaultPlan.from_dict({"rules": [{"edge": ["f0", "f1"], "action": {"kind": "teleport"}}]})


def test_merge_examples():
    b = single_rule(("f0", "f1"), Delay(10))
    assert merge_plans(FaultPlan(), b) == b
    a = single_rule(("f1", "f2"), Break())
    assert set(merge_plans(a, b).rules) == {("f0", "f1"), ("f1", "f2")}
    both = merge_plans(single_rule(("f0", "f1"), Break()), single_rule(("f0", "f1"), Break()))
    assert len(both.rules[("f0", "f1")]) == 1


def test_merge_hooks_from_b_win():
    a = FaultPlan(load={("f0", "f1"): 2}, placement={"s": "x"})
    b = FaultPlan(load={("f0", "f1"): 5})
    m = merge_plans(a, b)
    assert m.load[("f0", "f1")] == 5 and m.placement == {"s": "x"}


actions = st.one_of(
    st.just(Break()), st.integers(1, 5000).map(Delay), st.integers(400, 599).map(HttpError)
)
triggers = st.one_of(st.just(Always()), st.integers(1, 9).map(NthCall))


@st.composite
def valid_plans(draw):
    rules = {}
    for edge in draw(st.lists(st.sampled_from(EDGES), unique=True)):
        rs = draw(st.lists(st.builds(FaultRule, triggers, actions), min_size=1, max_size=3))
        seen_break = False
        kept = []
        for r in rs:
            if isinstance(r.action, Break):
                if seen_break:
                    continue
                seen_break = True
            kept.append(r)
        rules[edge] = tuple(kept)
    return FaultPlan(rules)


@given(valid_plans(), valid_plans())
def test_merge_preserves_validity(a, b):
    assert validate_plan(a, G) == [] and validate_plan(b, G) == []
    assert validate_plan(merge_plans(a, b), G) == []


@given(valid_plans(), valid_plans(), valid_plans())
def test_merge_associative_on_distinct_edges(a, b, c):
    left = merge_plans(merge_plans(a, b), c)
    right = merge_plans(a, merge_plans(b, c))
    assert set(left.rules) == set(right.rules)
    for edge in left.rules:
        if sum(edge in p.rules for p in (a, b, c)) <= 1:
            assert left.rules[edge] == right.rules[edge]
