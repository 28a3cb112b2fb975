"""Closed-loop driver: baseline runs, propose/execute/update rounds, round log, reports and replay."""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from meshchaos import drift, perf
from meshchaos.callgraph import CallGraph, CoverageLedger, TestFootprint, coverage_status
from meshchaos.errors import InputError, ReplayError
from meshchaos.faults import FaultPlan
from meshchaos.mesh_sim import Classification, ExecutionTrace, extract_events, load_app, load_scenarios, run_scenario
from meshchaos.search import Candidate, GreedyGapStrategy, SearchConfig, initial_state, should_stop, update

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STALLED = 2
EXIT_INPUT = 3

ROUND_LOG = "rounds.jsonl"
LEDGER_FILE = "ledger.json"
REPORT_FILE = "report.json"


def bundled_app_path():
    return str(resources.files("meshchaos") / "data" / "demo_app.json")


def bundled_scenarios_path():
    return str(resources.files("meshchaos") / "data" / "scenarios")


@dataclass(frozen=True)
class RunConfig:
    app_path: str = None  # None: the bundled demo app
    scenario_dir: str = None  # None: the bundled demo scenarios
    level: int = 1
    target: float = 1.0
    patience: int = 5
    max_rounds: int = 100
    seed: int = 0
    out_dir: str = "chaos-out"
    batch_size: int = 8
    epsilon: float = 0.2
    workers: int = 1
    dump_trace: bool = False
    report_path: str = None  # defaults to <out_dir>/report.json

    def search_config(self):
        return SearchConfig(self.level, self.target, self.patience, self.max_rounds, self.batch_size, self.epsilon)


@dataclass
class RunReport:
    exit_code: int
    rounds: int
    fraction: float
    coverage: dict
    unreachable: list
    findings: list
    drift: dict
    perf: dict
    stop_reason: str
    elapsed_s: float = 0.0
    out_dir: str = None

    def to_dict(self):
        return {
            "exit_code": self.exit_code,
            "stop_reason": self.stop_reason,
            "rounds": self.rounds,
            "fraction": self.fraction,
            "coverage": self.coverage,
            "unreachable": self.unreachable,
            "findings": self.findings,
            "drift": self.drift,
            "perf": self.perf,
        }


def _load_inputs(app_path, scenario_dir):
    app_path = app_path or bundled_app_path()
    scenario_dir = scenario_dir or bundled_scenarios_path()
    app = load_app(app_path)
    scenarios = {s.test_id: s for s in load_scenarios(scenario_dir, app)}
    return app, scenarios, str(Path(app_path).resolve()), str(Path(scenario_dir).resolve())


def _placement_for(app, cand):
    return app.placement.with_assignment(cand.placement) if cand.placement else None


def _execute(app, scenarios, cand):
    trace = run_scenario(app, scenarios[cand.scenario_id], cand.plan, _placement_for(app, cand), cand.order_seed)
    return trace, extract_events(trace, cand.plan)


def _execute_batch(app, scenarios, batch, workers):
    if workers > 1 and len(batch) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda c: _execute(app, scenarios, c), batch))
    return [_execute(app, scenarios, c) for c in batch]


def _call_sequence(trace):
    return [r.callee for r in trace.records if not r.rejected]


def _target_to_dict(t):
    test_id, edge, kind = t
    return {"test": test_id, "edge": list(edge), "event": kind.value}


def _drift_section(app, baseline_traces, fault_traces, batch=25):
    base = [_call_sequence(t) for t in baseline_traces]
    stream = [api for t in fault_traces for api in _call_sequence(t)]
    model = drift.fit_baseline(base, drift.ModelKind.MARKOV, apis=app.apis)
    if not stream:
        return {"model": "markov", "observations": 0, "log_bf": 0.0, "decision": drift.Decision.NO_DRIFT.value}
    mon = drift.monitor_stream(model, stream, batch)
    return {
        "model": "markov",
        "observations": mon.n_observed,
        "log_bf": mon.log_bf,
        "decision": drift.decide(mon).value,
    }


def _perf_section(app, baseline_traces, fault_traces):
    base_samples, _ = perf.collect(baseline_traces)
    samples, windows = perf.collect(fault_traces)
    known = {s.api for s in base_samples}
    samples = [s for s in samples if s.api in known]
    verdicts = perf.filter_anomalies(samples, base_samples)
    per_api, total = perf.total_anomalies(verdicts)
    throughput = {}
    for w in windows:
        throughput.setdefault(w.api, []).append(w.count)
    profile = {e: 1 for e in sorted(app.graph.edges)}
    suggestions = perf.suggest_load(profile, verdicts)
    return {
        "response_ms": perf.quantiles(samples),
        "throughput_per_window": throughput,
        "anomalies": per_api,
        "total_anomalies": total,
        "suggestions": [dict(s, edge=list(s["edge"])) for s in suggestions],
    }


def _ledger_document(ledger, graph, footprints, level):
    return {
        "level": level,
        "graph": graph.to_dict(),
        "footprints": {fp.test_id: sorted(fp.apis) for fp in footprints},
        "ledger": ledger.to_dict(),
    }


def report_from_ledger(document, level=None):
    """Recompute the coverage report from a persisted ledger document."""
    graph = CallGraph.from_dict(document["graph"])
    ledger = CoverageLedger.from_dict(document["ledger"], graph)
    footprints = [TestFootprint(t, apis) for t, apis in sorted(document["footprints"].items())]
    return coverage_status(ledger, graph, footprints, level or document["level"])


def run_closed_loop(config, strategy=None):
    """Run rounds until coverage target, patience or round cap; write log, ledger and report."""
    started = time.perf_counter()
    search_cfg = config.search_config()
    app, scenarios, app_path, scenario_dir = _load_inputs(config.app_path, config.scenario_dir)
    strategy = strategy or GreedyGapStrategy(search_cfg.epsilon)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / ROUND_LOG
    timeouts = {api: ep.timeout_ms for api, ep in app.endpoints.items()}
    test_ids = sorted(scenarios)

    header = {
        "kind": "header",
        "app": app_path,
        "scenarios": scenario_dir,
        "spec_checksum": app.checksum,
        "scenario_checksums": {t: scenarios[t].checksum for t in test_ids},
        "seed": config.seed,
        "level": config.level,
    }
    lines = [header]

    baseline = [Candidate(t, FaultPlan(), None, None, ("baseline",)) for t in test_ids]
    results = _execute_batch(app, scenarios, baseline, config.workers)
    baseline_traces = [tr for tr, _ in results]
    apis = {t: set(tr.apis_called) for t, tr in zip(test_ids, baseline_traces)}
    observed = {t: set(tr.edges_called) for t, tr in zip(test_ids, baseline_traces)}
    findings = []
    for cand, (tr, _) in zip(baseline, results):
        if tr.classification == Classification.TEST_FAILURE:
            findings.append({"round": 0, "candidate": cand.to_dict(), "trace": tr.checksum()})

    def footprints():
        return [TestFootprint(t, apis[t]) for t in test_ids]

    state = initial_state(app.graph, footprints(), config.level, config.seed, CoverageLedger(app.graph))
    lines.append(_round_record(0, baseline, results, state.fraction))
    dumps = {0: results}
    fault_traces = []
    unreachable = []
    stop_reason = None

    while not should_stop(state, search_cfg):
        proposal = strategy.propose(
            state, app.graph, footprints(), search_cfg.batch_size,
            timeouts=timeouts, observed_edges={t: frozenset(e) for t, e in observed.items()},
        )
        unreachable = proposal.unreachable
        if not proposal.candidates:
            stop_reason = "no candidates"
            break
        results = _execute_batch(app, scenarios, proposal.candidates, config.workers)
        for cand, (tr, _) in zip(proposal.candidates, results):
            apis[cand.scenario_id] |= tr.apis_called
            observed[cand.scenario_id] |= tr.edges_called
            fault_traces.append(tr)
            if tr.classification == Classification.TEST_FAILURE:
                findings.append({"round": state.round + 1, "candidate": cand.to_dict(), "trace": tr.checksum()})
        state = update(state, [(c, ev) for c, (_, ev) in zip(proposal.candidates, results)], app.graph, footprints())
        lines.append(_round_record(state.round, proposal.candidates, results, state.fraction))
        if config.dump_trace:
            dumps[state.round] = results
        log.info("round %d: fraction %.4f", state.round, state.fraction)

    final = coverage_status(state.ledger, app.graph, footprints(), config.level)
    reached = final.fraction >= config.target
    if stop_reason is None:
        if reached:
            stop_reason = "target reached"
        elif state.streak >= search_cfg.patience:
            stop_reason = "patience exhausted"
        else:
            stop_reason = "round cap"
    if not reached and not unreachable:
        # report the gaps no run touched even if the last proposal did not flag them
        unreachable = [t for t in final.uncovered_targets() if t[1] not in observed.get(t[0], ())]

    with open(log_path, "w") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    state.ledger.levels = {t: config.level for t in test_ids}
    (out / LEDGER_FILE).write_text(
        json.dumps(_ledger_document(state.ledger, app.graph, footprints(), config.level), indent=1, sort_keys=True)
    )
    if config.dump_trace:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for rnd, res in dumps.items():
            for k, (tr, _) in enumerate(res):
                (tdir / f"round{rnd:03d}-{k:02d}.json").write_bytes(tr.to_bytes())

    report = RunReport(
        exit_code=EXIT_OK if reached else EXIT_STALLED,
        rounds=state.round,
        fraction=final.fraction,
        coverage=final.to_dict(),
        unreachable=[_target_to_dict(t) for t in unreachable],
        findings=findings,
        drift=_drift_section(app, baseline_traces, fault_traces),
        perf=_perf_section(app, baseline_traces, fault_traces),
        stop_reason=stop_reason,
        elapsed_s=time.perf_counter() - started,
        out_dir=str(out),
    )
    report_path = Path(config.report_path) if config.report_path else out / REPORT_FILE
    report_path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return report


def _round_record(index, candidates, results, fraction):
    return {
        "kind": "round",
        "round": index,
        "fraction": fraction,
        "runs": [
            {
                "candidate": cand.to_dict(),
                "events": sorted([ev.kind.value, list(ev.edge)] for ev in events),
                "classification": tr.classification.value,
                "trace": tr.checksum(),
            }
            for cand, (tr, events) in zip(candidates, results)
        ],
    }


def read_round_log(path):
    path = Path(path)
    if not path.exists():
        raise ReplayError(f"round log {path} does not exist")
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not rows or rows[0].get("kind") != "header":
        raise ReplayError(f"round log {path} is empty or has no header")
    return rows[0], [r for r in rows[1:] if r.get("kind") == "round"]


def replay(log_path, round_index, app_path=None, scenario_dir=None):
    """Re-execute one logged round and return its traces.

    The application spec and scenarios must hash to the logged checksums, and
    every re-run trace must hash to the logged one.
    """
    header, rounds = read_round_log(log_path)
    if not rounds:
        raise ReplayError("round log holds no rounds")
    by_index = {r["round"]: r for r in rounds}
    if round_index not in by_index:
        raise ReplayError(f"round {round_index} out of range 0..{max(by_index)}")
    try:
        app, scenarios, _, _ = _load_inputs(app_path or header["app"], scenario_dir or header["scenarios"])
    except InputError as exc:
        raise ReplayError(f"cannot load logged inputs: {exc}") from None
    if app.checksum != header["spec_checksum"]:
        raise ReplayError("application spec checksum differs from the logged run")
    logged = header["scenario_checksums"]
    current = {t: s.checksum for t, s in scenarios.items()}
    if current != logged:
        raise ReplayError("scenario checksums differ from the logged run")
    rec = by_index[round_index]
    traces = []
    for k, run in enumerate(rec["runs"]):
        cand = Candidate.from_dict(run["candidate"])
        trace, _ = _execute(app, scenarios, cand)
        if trace.checksum() != run["trace"]:
            raise ReplayError(f"round {round_index} run {k}: trace diverged from the log")
        traces.append(trace)
    return traces


def load_trace(path):
    return ExecutionTrace.from_dict(json.loads(Path(path).read_text()))
