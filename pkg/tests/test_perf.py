import pytest
from conftest import endpoint, make_app, make_scenario
from hypothesis import given
from hypothesis import strategies as st

from meshchaos import perf
from meshchaos.errors import InputError
from meshchaos.faults import Delay, FaultPlan, FaultRule, NthCall
from meshchaos.mesh_sim import run_scenario
from meshchaos.perf import PerfSample


def samples_of(api, values, start=0):
    return [PerfSample(api, v, start + 100 * i, v, seq=i) for i, v in enumerate(values)]


@pytest.fixture
def slow_chain():
    return make_app([endpoint("f0", ["f1"], latency=5, timeout=1000), endpoint("f1", latency=20)])


def test_collect_empty():
    assert perf.collect([]) == ([], [])


def test_collect_one_call():
    app = make_app([endpoint("f0", latency=50)])
    samples, windows = perf.collect([run_scenario(app, make_scenario(app, "t", ["f0"]))])
    assert [(s.api, s.response_ms, s.exclusive_ms) for s in samples] == [("f0", 50, 50)]
    assert [(w.start, w.end, w.count) for w in windows] == [(0, 1000, 1)]


def test_collect_ten_calls_in_one_window():
    app = make_app([endpoint("f0", latency=50)])
    trace = run_scenario(app, make_scenario(app, "t", ["f0"] * 10))
    _, windows = perf.collect([trace])
    assert [w.count for w in windows] == [10]


def test_exclusive_time_subtracts_downstream(slow_chain):
    samples, _ = perf.collect([run_scenario(slow_chain, make_scenario(slow_chain, "t", ["f0"]))])
    by_api = {s.api: s for s in samples}
    assert by_api["f0"].response_ms == 25 and by_api["f0"].exclusive_ms == 5
    assert by_api["f1"].exclusive_ms == 20


def test_equal_latencies_give_no_anomalies():
    base = samples_of("f0", [30] * 10)
    verdicts = perf.filter_anomalies(samples_of("f0", [30] * 10), base)
    assert not any(v.observed for v in verdicts)
    assert perf.total_anomalies(verdicts) == ({"f0": 0}, 0)


def test_five_consecutive_delays_count_five(slow_chain):
    scenario = make_scenario(slow_chain, "t", ["f0"] * 20)
    # 180 ms extra on f1 makes its call 10x its 20 ms median
    rules = tuple(FaultRule(NthCall(n), Delay(180)) for n in range(8, 13))
    faulted = run_scenario(slow_chain, scenario, FaultPlan(rules={("f0", "f1"): rules}))
    oracle = sum(1 for r in faulted.records if r.injected_delay_ms)
    base, _ = perf.collect([run_scenario(slow_chain, scenario)])
    samples, _ = perf.collect([faulted])
    per_api, total = perf.total_anomalies(perf.filter_anomalies(samples, base))
    assert oracle == 5
    assert per_api == {"f0": 0, "f1": 5} and total == oracle


def test_isolated_spike_is_not_real():
    base = samples_of("f0", [30] * 10)
    verdicts = perf.filter_anomalies(samples_of("f0", [30, 30, 300, 30, 30]), base)
    assert [(v.observed, v.real) for v in verdicts][2] == (True, False)
    assert perf.total_anomalies(verdicts)[1] == 0


def test_response_metric_blames_callers_too():
    base = samples_of("f0", [30] * 5)
    slow = [PerfSample("f0", 300, 100 * i, 30, seq=i) for i in range(3)]
    assert perf.total_anomalies(perf.filter_anomalies(slow, base))[1] == 0
    clf = perf.RobustDebounceClassifier(metric="response")
    assert perf.total_anomalies(perf.filter_anomalies(slow, base, classifier=clf))[1] == 3
    with pytest.raises(InputError):
        perf.RobustDebounceClassifier(metric="p99")


def test_missing_baseline_names_the_api():
    with pytest.raises(InputError, match="f7"):
        perf.filter_anomalies(samples_of("f7", [1]), samples_of("f0", [1]))


def test_totals_are_additive():
    base = samples_of("a", [10] * 5) + samples_of("b", [10] * 5)
    live = samples_of("a", [100, 100]) + samples_of("b", [100, 100, 100])
    assert perf.total_anomalies(perf.filter_anomalies(live, base)) == ({"a": 2, "b": 3}, 5)
    assert perf.total_anomalies([]) == ({}, 0)


def test_suggest_load():
    base = samples_of("f1", [10] * 5) + samples_of("f2", [10] * 5)
    verdicts = perf.filter_anomalies(samples_of("f1", [10, 10]) + samples_of("f2", [99, 99]), base)
    out = perf.suggest_load({("f0", "f1"): 1, ("f0", "f2"): 3}, verdicts)
    assert [(s["action"], s["suggested"]) for s in out] == [("increase", 2), ("hold", 3)]
    assert perf.suggest_load({}, verdicts) == []


def test_quantiles():
    q = perf.quantiles(samples_of("f0", list(range(1, 101))))
    assert q["f0"]["p50"] == pytest.approx(50.5)


latencies = st.lists(st.integers(0, 500), min_size=1, max_size=40)


@given(latencies, latencies, st.floats(0.5, 10))
def test_verdicts_are_deterministic_and_real_implies_observed(base, live, kappa):
    b, s = samples_of("f0", base), samples_of("f0", live)
    first = perf.filter_anomalies(s, b, kappa)
    assert first == perf.filter_anomalies(s, b, kappa)
    assert all(v.observed for v in first if v.real)
    assert [v.sample for v in first] == s


def test_no_fault_runs_have_no_anomalies(slow_chain):
    scenario = make_scenario(slow_chain, "t", ["f0"] * 20)
    base, _ = perf.collect([run_scenario(slow_chain, scenario)])
    live, _ = perf.collect([run_scenario(slow_chain, scenario) for _ in range(3)])
    assert perf.total_anomalies(perf.filter_anomalies(live, base))[1] == 0
