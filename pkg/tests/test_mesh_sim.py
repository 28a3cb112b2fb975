import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import endpoint, make_app, make_scenario
from meshchaos.callgraph import CoverageEvent, EventKind
from meshchaos.errors import DivergenceError, InputError
from meshchaos.faults import Break, Delay, FaultPlan, HttpError, NthCall, single_rule
from meshchaos.mesh_sim import (
    BreakerMode,
    CircuitBreakerConfig,
    CircuitBreakerState,
    Classification,
    ExecutionTrace,
    Outcome,
    classify_outcome,
    extract_events,
    load_app,
    load_scenario,
    run_scenario,
    step_circuit_breaker,
)

E = ("f0", "f1")


def test_unperturbed_chain(chain_app):
    tr = run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]))
    assert [(r.caller, r.callee, r.start, r.end, r.outcome) for r in tr.records] == [
        (None, "f0", 0, 25, Outcome.OK),
        ("f0", "f1", 5, 25, Outcome.OK),
    ]
    assert tr.classification == Classification.HAPPY_PATH
    assert extract_events(tr) == set()


def test_break_with_graceful_fallback(chain_app):
    tr = run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]), single_rule(E, Break()))
    f1 = tr.records[1]
    # hand trace: call issued at 5, caller waits its full 100 ms timeout
    assert (f1.outcome, f1.start, f1.end) == (Outcome.DROPPED, 5, 105)
    assert tr.step_responses == {0: "degraded"}
    assert tr.classification == Classification.ERROR_PATH
    assert extract_events(tr, single_rule(E, Break())) == {CoverageEvent(EventKind.BREAKAGE, E)}


def test_delay_past_timeout_with_propagation_fails_the_test():
    app = make_app([endpoint("f0", ["f1"], latency=5, timeout=100, fallback="PropagateFailure"), endpoint("f1", latency=20)])
    plan = single_rule(E, Delay(150))
    tr = run_scenario(app, make_scenario(app, "t", ["f0"]), plan)
    assert tr.records[1].outcome == Outcome.TIMED_OUT and tr.records[1].end == 105
    assert tr.records[0].outcome == Outcome.ERRORED and tr.records[0].status == 500
    assert tr.classification == Classification.TEST_FAILURE
    assert extract_events(tr, plan) == set()


def test_delay_below_timeout_is_happy(chain_app):
    plan = single_rule(E, Delay(50))
    tr = run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]), plan)
    assert tr.records[1].end == 5 + 50 + 20 and tr.records[1].injected_delay_ms == 50
    assert tr.classification == Classification.HAPPY_PATH
    assert extract_events(tr, plan) == {CoverageEvent(EventKind.DELAYED_HAPPY_PATH, E)}


def test_delay_beyond_timeout_is_error_path(chain_app):
    plan = single_rule(E, Delay(110))
    tr = run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]), plan)
    assert tr.records[1].outcome == Outcome.TIMED_OUT
    assert extract_events(tr, plan) == {CoverageEvent(EventKind.DELAYED_ERROR_PATH, E)}


def test_http_error_injection(chain_app):
    tr = run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]), single_rule(E, HttpError(503)))
    assert (tr.records[1].outcome, tr.records[1].status) == (Outcome.ERRORED, 503)
    assert tr.classification == Classification.ERROR_PATH


def test_nth_call_trigger(chain_app):
    sc = make_scenario(chain_app, "t", [{"api": "f0", "repeat": 3}])
    tr = run_scenario(chain_app, sc, single_rule(E, Break(), NthCall(2)))
    assert [r.outcome for r in tr.records if r.callee == "f1"] == [Outcome.OK, Outcome.DROPPED, Outcome.OK]


def test_breaker_opens_and_rejects_without_reaching_target(chain_app):
    sc = make_scenario(chain_app, "t", [{"api": "f0", "repeat": 5}])
    tr = run_scenario(chain_app, sc, single_rule(E, Break()))
    f1 = [r for r in tr.records if r.callee == "f1"]
    assert [r.outcome for r in f1[:3]] == [Outcome.DROPPED] * 3
    for r in f1[3:]:
        assert r.rejected and r.outcome == Outcome.ERRORED and r.status == 503
        assert r.start == r.end and r.breaker_mode == BreakerMode.OPEN


def test_breaker_half_open_probe_closes():
    app = make_app(
        [endpoint("f0", ["f1"], latency=5, timeout=100, breaker="quick"), endpoint("f1", latency=20, breaker="quick")],
        breakers={"quick": {"failure_threshold": 1, "sleep_window_ms": 5}},
    )
    sc = make_scenario(app, "t", [{"api": "f0", "repeat": 3}])
    tr = run_scenario(app, sc, single_rule(E, Break(), NthCall(1)))
    f1 = [r for r in tr.records if r.callee == "f1"]
    # call 1 dropped at 5..105 opens the breaker at 105; call 2 at 110 ends the 5 ms window
    assert f1[0].outcome == Outcome.DROPPED
    assert f1[1].breaker_mode == BreakerMode.HALF_OPEN and f1[1].outcome == Outcome.OK
    assert f1[2].breaker_mode == BreakerMode.CLOSED


def test_cross_site_latency():
    app = make_app(
        [endpoint("f0", ["f1"], latency=5, timeout=500), endpoint("f1", latency=20)],
        sites=["a", "b"],
        latency_ms={"a": {"a": 0, "b": 30}, "b": {"a": 30, "b": 0}},
    )
    data = app.source
    data["services"][1]["site"] = "b"
    from meshchaos.mesh_sim import build_app

    app = build_app(data)
    tr = run_scenario(app, make_scenario(app, "t", ["f0"]))
    assert tr.records[1].end == 5 + 30 + 20
    moved = run_scenario(app, make_scenario(app, "t", ["f0"]), FaultPlan(placement={"svc_f1": "a"}))
    assert moved.records[1].end == 5 + 20


def test_asymmetric_latency_rejected():
    with pytest.raises(InputError, match="symmetric"):
        make_app([endpoint("f0")], sites=["a", "b"], latency_ms={"a": {"b": 10}, "b": {"a": 20}})


def test_condition_selects_downstream():
    app = make_app(
        [endpoint("f0", [{"target": "f1", "when": "op=read"}, {"target": "f2", "when": "op=write"}]), endpoint("f1"), endpoint("f2")]
    )
    tr = run_scenario(app, make_scenario(app, "t", [{"api": "f0", "params": {"op": "write"}}]))
    assert tr.apis_called == {"f0", "f2"}


def test_load_multiplier_only_scales_its_edge():
    app = make_app([endpoint("f0", ["f1", "f2"]), endpoint("f1"), endpoint("f2")])
    sc = make_scenario(app, "t", ["f0"])

    def counts(plan):
        tr = run_scenario(app, sc, plan)
        return {e: sum(1 for r in tr.records if r.edge == e) for e in [("f0", "f1"), ("f0", "f2")]}

    base = counts(FaultPlan())
    scaled = counts(FaultPlan(load={("f0", "f1"): 4}))
    assert scaled[("f0", "f1")] == 4 * base[("f0", "f1")]
    assert scaled[("f0", "f2")] == base[("f0", "f2")]


def test_unknown_api_in_scenario(chain_app):
    with pytest.raises(InputError, match="zz"):
        make_scenario(chain_app, "t", ["zz"])


def test_plan_outside_graph(chain_app):
    with pytest.raises(InputError):
        run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]), single_rule(("f1", "f0"), Break()))


def test_event_cap_raises_divergence():
    app = make_app([endpoint("f0", ["f0"], latency=0, timeout=10_000)])
    with pytest.raises(DivergenceError):
        run_scenario(app, make_scenario(app, "t", ["f0"]), event_cap=50)
    with pytest.raises(DivergenceError):
        run_scenario(app, make_scenario(app, "t", ["f0"]))


def test_spec_errors_carry_file_and_line(tmp_path):
    p = tmp_path / "app.json"
    p.write_text('{\n "services": [\n  {"name": "a", "endpoints": [\n   {"api": "f0", "calls": [{"target": "nope"}]}\n  ]}\n ]\n}\n')
    with pytest.raises(InputError, match=r"app.json:4"):
        load_app(p)
    p.write_text("{ nope")
    with pytest.raises(InputError, match=r"app.json:1"):
        load_app(p)


def test_scenario_errors_carry_file_and_line(tmp_path, chain_app):
    p = tmp_path / "s.json"
    p.write_text('{"test_id": "t",\n "steps": [\n  {"api": "f9"}\n ]}\n')
    with pytest.raises(InputError, match=r"s.json:3"):
        load_scenario(p, chain_app)


def test_custom_expectation_checks(chain_app):
    sc = make_scenario(
        chain_app,
        "t",
        ["f0"],
        expect={"happy": [{"responded": "f1"}], "graceful": [{"step": 0, "response": "degraded"}]},
    )
    assert run_scenario(chain_app, sc).classification == Classification.HAPPY_PATH
    assert run_scenario(chain_app, sc, single_rule(E, Break())).classification == Classification.ERROR_PATH
    strict = make_scenario(chain_app, "u", ["f0"], expect={"graceful": [{"not_responded": "f0"}]})
    assert run_scenario(chain_app, strict, single_rule(E, Break())).classification == Classification.TEST_FAILURE


def test_console_lines_follow_templates():
    app = make_app([endpoint("f0", ["f1"], timeout=50, console={"degraded": "{api} fallback at {t}"}), endpoint("f1")])
    tr = run_scenario(app, make_scenario(app, "t", ["f0"]), single_rule(E, Break()))
    assert tr.console == ["f0 fallback at 60"]


def test_trace_round_trip(chain_app):
    tr = run_scenario(chain_app, make_scenario(chain_app, "t", ["f0"]), single_rule(E, Delay(30)))
    again = ExecutionTrace.from_dict(json.loads(tr.to_bytes()))
    assert again.to_bytes() == tr.to_bytes()
    assert classify_outcome(again, make_scenario(chain_app, "t", ["f0"]).expect) == tr.classification


def _wide_app():
    return make_app(
        [endpoint("f0", ["f1", "f2"], latency=[2, 9], timeout=40), endpoint("f1", latency=[1, 30]), endpoint("f2", latency=[3, 12])]
    )


@given(st.integers(0, 2**31 - 1), st.sampled_from([None, Break(), Delay(25), HttpError(500)]))
def test_determinism_and_conservation(seed, action):
    app = _wide_app()
    sc = make_scenario(app, "t", [{"api": "f0", "group": 0}, {"api": "f0", "group": 0}, {"api": "f0", "group": 1}])
    plan = single_rule(("f0", "f2"), action) if action else FaultPlan()
    a = run_scenario(app, sc, plan, order_seed=seed)
    b = run_scenario(app, sc, plan, order_seed=seed)
    assert a.to_bytes() == b.to_bytes()
    for r in a.records:
        assert r.start <= r.end and r.outcome in set(Outcome)
    assert [r.start for r in a.records] == sorted(r.start for r in a.records)


@given(st.integers(0, 2**31 - 1))
def test_step_order_is_linear_extension(seed):
    app = _wide_app()
    steps = [{"api": "f0", "group": g} for g in (0, 0, 0, 1, 1, 2)]
    sc = make_scenario(app, "t", steps)
    tr = run_scenario(app, sc, order_seed=seed)
    groups = [steps[i]["group"] for i in tr.step_order]
    assert groups == sorted(groups)
    assert sorted(tr.step_order) == list(range(len(steps)))


def test_breaker_config_bounds():
    with pytest.raises(InputError):
        CircuitBreakerConfig(0, 10)
    with pytest.raises(InputError):
        CircuitBreakerConfig(1, 0)


@pytest.mark.parametrize("threshold", [1, 2, 3, 4])
def test_breaker_opens_after_threshold_consecutive_failures(threshold):
    cfg = CircuitBreakerConfig(threshold, 100)
    s = CircuitBreakerState()
    for k in range(threshold):
        assert s.mode == BreakerMode.CLOSED
        s = step_circuit_breaker(s, Outcome.DROPPED, k, cfg)
    assert s.mode == BreakerMode.OPEN and s.opened_at == threshold - 1


def test_breaker_success_resets_failure_count():
    cfg = CircuitBreakerConfig(2, 100)
    s = step_circuit_breaker(CircuitBreakerState(), Outcome.TIMED_OUT, 0, cfg)
    s = step_circuit_breaker(s, Outcome.OK, 1, cfg)
    s = step_circuit_breaker(s, Outcome.ERRORED, 2, cfg)
    assert s.mode == BreakerMode.CLOSED and s.failures == 1
