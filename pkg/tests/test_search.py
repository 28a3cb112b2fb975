import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import endpoint, make_app, make_scenario
from meshchaos.callgraph import EVENT_KINDS, CoverageEvent, CoverageLedger, EventKind, TestFootprint, coverage_status
from meshchaos.errors import InputError
from meshchaos.faults import Break, Delay, single_rule, validate_plan
from meshchaos.mesh_sim import Classification, Outcome, extract_events, run_scenario
from meshchaos.search import (
    Candidate,
    SearchConfig,
    delay_for,
    initial_state,
    propose,
    should_stop,
    update,
)

E = ("f0", "f1")


@pytest.fixture
def setup(chain_app):
    fps = [TestFootprint("t", {"f0", "f1"})]
    timeouts = {a: ep.timeout_ms for a, ep in chain_app.endpoints.items()}
    return chain_app, fps, timeouts


def ledger_with(graph, kinds):
    ledger = CoverageLedger(graph)
    for k in kinds:
        ledger.add("t", CoverageEvent(k, E))
    return ledger


def test_all_covered_gives_empty_batch(setup):
    app, fps, timeouts = setup
    state = initial_state(app.graph, fps, 1, 0, ledger_with(app.graph, EVENT_KINDS))
    assert propose(state, app.graph, fps, 8, timeouts=timeouts).candidates == []


def test_breakage_target_gets_break_and_replays_dropped(setup):
    app, fps, timeouts = setup
    state = initial_state(app.graph, fps, 1, 0, ledger_with(app.graph, EVENT_KINDS[1:]))
    batch = propose(state, app.graph, fps, 8, timeouts=timeouts).candidates
    hits = [c for c in batch if c.target == ("t", E, EventKind.BREAKAGE)]
    assert hits and all(isinstance(c.plan.rules[E][0].action, Break) for c in hits)
    tr = run_scenario(app, make_scenario(app, "t", ["f0"]), hits[0].plan)
    assert any(r.edge == E and r.outcome == Outcome.DROPPED for r in tr.records)


def test_error_path_target_delays_past_timeout(setup):
    app, fps, timeouts = setup
    kinds = [EventKind.BREAKAGE, EventKind.DELAYED_HAPPY_PATH]
    state = initial_state(app.graph, fps, 1, 0, ledger_with(app.graph, kinds))
    batch = propose(state, app.graph, fps, 8, timeouts=timeouts).candidates
    delays = [c.plan.rules[E][0].action.ms for c in batch if c.purpose[0] == "target"]
    assert delays and all(d > timeouts["f0"] for d in delays)
    cand = next(c for c in batch if c.purpose[0] == "target")
    tr = run_scenario(app, make_scenario(app, "t", ["f0"]), cand.plan)
    assert tr.classification == Classification.ERROR_PATH
    assert CoverageEvent(EventKind.DELAYED_ERROR_PATH, E) in extract_events(tr, cand.plan)


def test_delay_ladder():
    assert [delay_for(EventKind.DELAYED_HAPPY_PATH, a, 100) for a in range(3)] == [50, 90, 50]
    assert [delay_for(EventKind.DELAYED_ERROR_PATH, a, 100) for a in range(4)] == [110, 200, 500, 110]


def test_unobserved_edges_are_reported_unreachable(setup):
    app, fps, timeouts = setup
    state = initial_state(app.graph, fps, 1, 0, CoverageLedger(app.graph))
    prop = propose(state, app.graph, fps, 8, timeouts=timeouts, observed_edges={"t": frozenset()})
    assert sorted(k for _, _, k in prop.unreachable) == sorted(EVENT_KINDS)
    assert all(c.purpose[0] != "target" for c in prop.candidates)


def _wide():
    app = make_app([endpoint("f0", ["f1", "f2"], timeout=200), endpoint("f1", ["f3"], timeout=90), endpoint("f2"), endpoint("f3")])
    fps = [TestFootprint("a", {"f0", "f1", "f2", "f3"}), TestFootprint("b", {"f0", "f2"})]
    timeouts = {x: ep.timeout_ms for x, ep in app.endpoints.items()}
    return app, fps, timeouts


@given(st.integers(0, 10_000), st.integers(0, 6), st.integers(1, 12), st.data())
def test_proposals_deterministic_valid_and_auditable(seed, rnd, batch_size, data):
    app, fps, timeouts = _wide()
    ledger = CoverageLedger(app.graph)
    for _ in range(data.draw(st.integers(0, 8))):
        ledger.add(
            data.draw(st.sampled_from(["a", "b"])),
            CoverageEvent(data.draw(st.sampled_from(EVENT_KINDS)), data.draw(st.sampled_from(sorted(app.graph.edges)))),
        )
    state = initial_state(app.graph, fps, 1, seed, ledger)
    state.round = rnd
    p1 = propose(state, app.graph, fps, batch_size, timeouts=timeouts)
    p2 = propose(state, app.graph, fps, batch_size, timeouts=timeouts)
    assert p1 == p2
    assert len(p1.candidates) <= batch_size
    gaps = set(coverage_status(ledger, app.graph, fps, 1).uncovered_targets())
    for c in p1.candidates:
        assert validate_plan(c.plan, app.graph) == []
        if c.purpose[0] == "target":
            assert c.target in gaps
            action = c.plan.rules[c.target[1]][0].action
            assert isinstance(action, Break) == (c.target[2] == EventKind.BREAKAGE)
        else:
            assert c.purpose == ("explore",)


def test_candidate_round_trip():
    c = Candidate("t", single_rule(E, Delay(5)), 17, {"s": "x"}, ("target", EventKind.DELAYED_HAPPY_PATH, E))
    assert Candidate.from_dict(c.to_dict()) == c


def test_update_streak_and_rounds(setup):
    app, fps, timeouts = setup
    state = initial_state(app.graph, fps, 1, 0, CoverageLedger(app.graph))
    cand = Candidate("t", single_rule(E, Break()), purpose=("target", EventKind.BREAKAGE, E))
    s1 = update(state, [(cand, {CoverageEvent(EventKind.BREAKAGE, E)})], app.graph, fps)
    assert s1.streak == 0 and s1.round == 1 and s1.fraction == pytest.approx(1 / 3)
    assert s1.attempts[("t", E, EventKind.BREAKAGE)] == 1
    s2 = update(s1, [(cand, {CoverageEvent(EventKind.BREAKAGE, E)})], app.graph, fps)
    assert s2.streak == 1 and s2.fraction == s1.fraction
    s3 = update(s2, [], app.graph, fps)
    assert s3.round == 3 and s3.streak == s2.streak and s3.ledger is s2.ledger


def test_should_stop_examples(setup):
    app, fps, _ = setup
    cfg = SearchConfig(patience=5)
    state = initial_state(app.graph, fps, 1, 0, CoverageLedger(app.graph))
    state.fraction, state.streak, state.round = 1.0, 0, 1
    assert should_stop(state, cfg)
    state.fraction, state.streak = 0.5, 5
    assert should_stop(state, cfg)
    state.fraction, state.streak, state.round = 0.4, 1, 2
    assert not should_stop(state, cfg)
    state.round = 100
    assert should_stop(state, cfg)


@pytest.mark.parametrize("kw", [{"target": 0}, {"target": 1.5}, {"patience": 0}, {"level": 0}, {"batch_size": 0}])
def test_config_bounds(kw):
    with pytest.raises(InputError):
        SearchConfig(**kw)
