"""Deterministic simulator of an API composition under fault injection.

Calls are synchronous: a caller issues its downstream calls in declared order
and waits for each one, up to its own timeout. Simulated time is integer
milliseconds. Every downstream call passes two interception points before the
callee runs: the callee's circuit breaker (a proxy in front of the endpoint)
and then the fault injector, which may drop, delay or fail the call.

A run is classified from the responses of its entry steps:

* ``HappyPath``  - the scenario's happy checks hold,
* ``ErrorPath``  - otherwise, its graceful-degradation checks hold,
* ``TestFailure`` - neither; this is a finding to debug.
"""

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from meshchaos.callgraph import CallGraph, CoverageEvent, EventKind
from meshchaos.ctd.expr import parse_expr
from meshchaos.errors import DivergenceError, InputError
from meshchaos.faults import Break, Delay, FaultPlan, HttpError

DEFAULT_EVENT_CAP = 100_000
DEFAULT_CLIENT_TIMEOUT_MS = 30_000


class Outcome(str, Enum):
    OK = "Ok"
    DROPPED = "Dropped"
    TIMED_OUT = "TimedOut"
    ERRORED = "Errored"


class Fallback(str, Enum):
    GRACEFUL = "GracefulError"
    PROPAGATE = "PropagateFailure"


class Classification(str, Enum):
    HAPPY_PATH = "HappyPath"
    ERROR_PATH = "ErrorPath"
    TEST_FAILURE = "TestFailure"


# -- circuit breaker ---------------------------------------------------------


class BreakerMode(str, Enum):
    CLOSED = "Closed"
    OPEN = "Open"
    HALF_OPEN = "HalfOpen"


@dataclass(frozen=True)
class CircuitBreakerConfig:
    failure_threshold: int = 3
    sleep_window_ms: int = 5000

    def __post_init__(self):
        if self.failure_threshold < 1:
            raise InputError("breaker failure_threshold must be >= 1")
        if self.sleep_window_ms <= 0:
            raise InputError("breaker sleep_window_ms must be > 0")


@dataclass(frozen=True)
class CircuitBreakerState:
    mode: BreakerMode = BreakerMode.CLOSED
    failures: int = 0
    opened_at: int = None


def poll_breaker(state, now, config):
    """Move an open breaker to half-open once its sleep window has elapsed."""
    if state.mode == BreakerMode.OPEN and now >= state.opened_at + config.sleep_window_ms:
        return CircuitBreakerState(BreakerMode.HALF_OPEN, 0, state.opened_at)
    return state


def step_circuit_breaker(state, outcome, now, config):
    """Breaker state after a call attempt with ``outcome`` at time ``now``.

    While open (and still inside the sleep window) the call is rejected without
    reaching the endpoint, so the outcome is ignored.
    """
    success = outcome == Outcome.OK or outcome is True
    state = poll_breaker(state, now, config)
    if state.mode == BreakerMode.OPEN:
        return state
    if state.mode == BreakerMode.HALF_OPEN:
        if success:
            return CircuitBreakerState(BreakerMode.CLOSED, 0, None)
        return CircuitBreakerState(BreakerMode.OPEN, 0, now)
    if success:
        return CircuitBreakerState(BreakerMode.CLOSED, 0, None)
    failures = state.failures + 1
    if failures >= config.failure_threshold:
        return CircuitBreakerState(BreakerMode.OPEN, 0, now)
    return CircuitBreakerState(BreakerMode.CLOSED, failures, None)


# -- application spec ----------------------------------------------------------


@dataclass(frozen=True)
class DownstreamCall:
    target: str
    condition: object = None  # ctd expression over the step parameters


@dataclass(frozen=True)
class EndpointSpec:
    api: str
    service: str
    latency_ms: tuple  # (lo, hi); lo == hi for a fixed latency
    timeout_ms: int
    calls: tuple = ()
    fallback: Fallback = Fallback.GRACEFUL
    breaker: str = "default"
    console: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Placement:
    sites: tuple
    latency: dict  # (site, site) -> ms
    assignment: dict  # service -> site

    def __post_init__(self):
        for a in self.sites:
            if self.latency.get((a, a), 0) != 0:
                raise InputError(f"latency from site {a!r} to itself must be 0")
            for b in self.sites:
                if self.latency.get((a, b), 0) != self.latency.get((b, a), 0):
                    raise InputError(f"latency matrix is not symmetric for {a!r}/{b!r}")
                if self.latency.get((a, b), 0) < 0:
                    raise InputError("latencies must be non-negative")
        for svc, site in self.assignment.items():
            if site not in self.sites:
                raise InputError(f"service {svc!r} is assigned to unknown site {site!r}")

    def between(self, svc_a, svc_b):
        return self.latency.get((self.assignment[svc_a], self.assignment[svc_b]), 0)

    def with_assignment(self, override):
        assignment = dict(self.assignment)
        assignment.update(override)
        return Placement(self.sites, self.latency, assignment)


@dataclass(frozen=True)
class AppSpec:
    name: str
    endpoints: dict  # api -> EndpointSpec
    breakers: dict  # name -> CircuitBreakerConfig
    placement: Placement
    graph: CallGraph
    checksum: str
    source: dict = field(default=None, compare=False, repr=False)

    def service_of(self, api):
        return self.endpoints[api].service

    @property
    def services(self):
        return sorted({ep.service for ep in self.endpoints.values()})

    @property
    def apis(self):
        return sorted(self.endpoints)


def _line_of(text, needle):
    if text is None:
        return None
    # match the needle with any whitespace after its colons
    pattern = r":\s*".join(re.escape(part) for part in needle.split(": "))
    m = re.search(pattern, text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def checksum_of(data):
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def _latency(value, where):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        lo = hi = int(value)
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = int(value[0]), int(value[1])
    else:
        raise InputError(f"{where}: latency must be a number or a [lo, hi] pair")
    if lo < 0 or hi < lo:
        raise InputError(f"{where}: latency must satisfy 0 <= lo <= hi")
    return lo, hi


def build_app(data, *, path=None, text=None):
    """Validate an application spec document and build an ``AppSpec``."""

    def fail(msg, needle=None):
        raise InputError(msg, path=path, line=_line_of(text, needle) if needle else None)

    if not isinstance(data, dict):
        fail("application spec must be a JSON object")
    sites = tuple(data.get("sites") or ("local",))
    raw_lat = data.get("latency_ms", {})
    latency = {}
    for a, row in raw_lat.items():
        for b, ms in row.items():
            latency[(a, b)] = int(ms)
    breakers = {"default": CircuitBreakerConfig()}
    for name, cfg in data.get("breakers", {}).items():
        try:
            breakers[name] = CircuitBreakerConfig(int(cfg["failure_threshold"]), int(cfg["sleep_window_ms"]))
        except (KeyError, TypeError, ValueError, InputError) as exc:
            fail(f"breaker {name!r}: {exc}", f'"{name}"')
    endpoints = {}
    assignment = {}
    services = data.get("services")
    if not services:
        fail("application spec declares no services")
    for svc in services:
        sname = svc.get("name")
        if not sname:
            fail("every service needs a name")
        if sname in assignment:
            fail(f"duplicate service {sname!r}", f'"{sname}"')
        assignment[sname] = svc.get("site", sites[0])
        for ep in svc.get("endpoints", []):
            api = ep.get("api")
            if not api or not isinstance(api, str):
                fail(f"service {sname!r} has an endpoint without an api id", f'"{sname}"')
            if api in endpoints:
                fail(f"duplicate api id {api!r}", f'"api": "{api}"')
            where = f"endpoint {api}"
            try:
                lat = _latency(ep.get("latency_ms", 0), where)
                timeout = int(ep.get("timeout_ms", 1000))
                if timeout <= 0:
                    raise InputError(f"{where}: timeout_ms must be > 0")
                calls = []
                for c in ep.get("calls", []):
                    cond = c.get("when")
                    calls.append(DownstreamCall(c["target"], parse_expr(cond) if cond else None))
                fallback = Fallback(ep.get("fallback", Fallback.GRACEFUL.value))
            except (InputError, KeyError, ValueError) as exc:
                fail(str(exc), f'"api": "{api}"')
            breaker = ep.get("breaker", "default")
            if breaker not in breakers:
                fail(f"{where}: unknown breaker {breaker!r}", f'"api": "{api}"')
            endpoints[api] = EndpointSpec(api, sname, lat, timeout, tuple(calls), fallback, breaker, dict(ep.get("console", {})))
    edges = set()
    for ep in endpoints.values():
        for c in ep.calls:
            if c.target not in endpoints:
                fail(f"endpoint {ep.api} calls unknown api {c.target!r}", f'"target": "{c.target}"')
            edges.add((ep.api, c.target))
    for e in data.get("data_edges", []):
        a, b = e
        if a not in endpoints or b not in endpoints:
            fail(f"data edge ({a}, {b}) references an unknown api")
        edges.add((a, b))
    try:
        placement = Placement(sites, latency, assignment)
    except InputError as exc:
        fail(str(exc))
    graph = CallGraph(endpoints.keys(), edges)
    return AppSpec(data.get("name", "app"), endpoints, breakers, placement, graph, checksum_of(data), data)


def load_app(path):
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from None
    return build_app(data, path=str(path), text=text)


# -- scenarios -----------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    api: str
    params: dict = field(default_factory=dict)
    group: int = 0
    repeat: int = 1


@dataclass(frozen=True)
class Expectation:
    """Declarative checks; ``None`` selects the defaults.

    Default happy clause: every step responded ``ok``. Default graceful clause:
    every step responded ``ok`` or ``degraded``.
    """

    happy: tuple = None
    graceful: tuple = None


@dataclass(frozen=True)
class TestScenario:
    __test__ = False

    test_id: str
    steps: tuple
    expect: Expectation = Expectation()
    client_timeout_ms: int = DEFAULT_CLIENT_TIMEOUT_MS
    checksum: str = ""

    def groups(self, barriers=None):
        if barriers is not None:
            return [list(g) for g in barriers]
        by_group = {}
        for idx, st in enumerate(self.steps):
            by_group.setdefault(st.group, []).append(idx)
        return [by_group[g] for g in sorted(by_group)]


_CHECK_KEYS = {"step", "response", "responded", "not_responded"}
_RESPONSES = {"ok", "degraded", "failed", "ok_or_degraded"}


def _checks(raw, where):
    if raw is None:
        return None
    out = []
    for chk in raw:
        if not isinstance(chk, dict) or not set(chk) <= _CHECK_KEYS:
            raise InputError(f"{where}: unknown check {chk!r}")
        if "step" in chk and chk.get("response") not in _RESPONSES:
            raise InputError(f"{where}: step checks need a response in {sorted(_RESPONSES)}")
        out.append(dict(chk))
    return tuple(out)


def build_scenario(data, app, *, path=None, text=None):
    def fail(msg, needle=None):
        raise InputError(msg, path=path, line=_line_of(text, needle) if needle else None)

    test_id = data.get("test_id")
    if not test_id:
        fail("scenario needs a test_id")
    steps = []
    for idx, st in enumerate(data.get("steps", [])):
        api = st.get("api")
        if api not in app.endpoints:
            fail(f"step #{idx} calls unknown api {api!r}", f'"api": "{api}"')
        repeat = int(st.get("repeat", 1))
        if repeat < 1:
            fail(f"step #{idx}: repeat must be >= 1")
        steps.append(Step(api, dict(st.get("params", {})), int(st.get("group", idx)), repeat))
    if not steps:
        fail("scenario has no steps")
    exp = data.get("expect", {})
    try:
        expect = Expectation(_checks(exp.get("happy"), "happy"), _checks(exp.get("graceful"), "graceful"))
    except InputError as exc:
        fail(str(exc), '"expect"')
    for clause in (expect.happy or ()) + (expect.graceful or ()):
        if "step" in clause and not 0 <= clause["step"] < len(steps):
            fail(f"check refers to missing step {clause['step']}", '"expect"')
        for key in ("responded", "not_responded"):
            if key in clause and clause[key] not in app.endpoints:
                fail(f"check refers to unknown api {clause[key]!r}", '"expect"')
    timeout = int(data.get("client_timeout_ms", DEFAULT_CLIENT_TIMEOUT_MS))
    return TestScenario(test_id, tuple(steps), expect, timeout, checksum_of(data))


def load_scenario(path, app):
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from None
    return build_scenario(data, app, path=str(path), text=text)


def load_scenarios(directory, app):
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise InputError("no scenario files (*.json) found", path=str(directory))
    scenarios = [load_scenario(f, app) for f in files]
    ids = [s.test_id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate test_id across scenario files", path=str(directory))
    return scenarios


# -- traces --------------------------------------------------------------------


@dataclass
class CallRecord:
    seq: int
    step: int
    caller: str  # None for the client's entry call
    callee: str
    start: int
    end: int = None
    outcome: Outcome = None
    status: int = None
    response: str = None  # "ok" / "degraded" for Ok records
    injected_delay_ms: int = 0
    rejected: bool = False
    breaker_mode: BreakerMode = BreakerMode.CLOSED
    depth: int = 0
    parent: int = None  # seq of the record whose callee issued this call

    @property
    def edge(self):
        return (self.caller, self.callee)

    @property
    def duration(self):
        return self.end - self.start

    def to_dict(self):
        return {
            "seq": self.seq,
            "step": self.step,
            "caller": self.caller,
            "callee": self.callee,
            "start": self.start,
            "end": self.end,
            "outcome": self.outcome.value,
            "status": self.status,
            "response": self.response,
            "injected_delay_ms": self.injected_delay_ms,
            "rejected": self.rejected,
            "breaker_mode": self.breaker_mode.value,
            "depth": self.depth,
            "parent": self.parent,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["seq"], d["step"], d["caller"], d["callee"], d["start"], d["end"], Outcome(d["outcome"]),
            d["status"], d["response"], d["injected_delay_ms"], d["rejected"], BreakerMode(d["breaker_mode"]), d["depth"],
            d.get("parent"),
        )


@dataclass
class ExecutionTrace:
    test_id: str
    records: list
    console: list
    step_order: list
    step_responses: dict  # step index -> "ok" | "degraded" | "failed"
    classification: Classification = None

    @property
    def delayed(self):
        return any(r.injected_delay_ms > 0 for r in self.records)

    @property
    def apis_called(self):
        return frozenset(r.callee for r in self.records if not r.rejected)

    @property
    def edges_called(self):
        return frozenset(r.edge for r in self.records if r.caller is not None)

    @property
    def end_time(self):
        return max((r.end for r in self.records), default=0)

    def to_dict(self):
        return {
            "test_id": self.test_id,
            "classification": self.classification.value if self.classification else None,
            "step_order": list(self.step_order),
            "step_responses": {str(k): v for k, v in sorted(self.step_responses.items())},
            "records": [r.to_dict() for r in self.records],
            "console": list(self.console),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["test_id"],
            [CallRecord.from_dict(r) for r in d["records"]],
            list(d["console"]),
            list(d["step_order"]),
            {int(k): v for k, v in d["step_responses"].items()},
            Classification(d["classification"]) if d.get("classification") else None,
        )

    def to_bytes(self):
        return canonical_json(self.to_dict()).encode()

    def checksum(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


# -- simulation ----------------------------------------------------------------


_SEVERITY = {"ok": 0, "degraded": 1, "failed": 2}


class _Run:
    def __init__(self, app, scenario, plan, placement, order_seed, event_cap):
        self.app = app
        self.scenario = scenario
        self.plan = plan
        self.placement = placement
        self.event_cap = event_cap
        self.order_seeded = order_seed is not None
        seed = 0 if order_seed is None else int(order_seed) + 1
        self.rng = np.random.default_rng([seed, 7])
        self.order_rng = np.random.default_rng([seed, 3])
        self.breakers = {api: CircuitBreakerState() for api in app.endpoints}
        self.edge_calls = {}
        self.records = []
        self.console = []
        self.events = 0
        self.step = -1

    def latency_of(self, ep):
        lo, hi = ep.latency_ms
        return lo if lo == hi else int(self.rng.integers(lo, hi + 1))

    def network(self, caller, callee):
        if caller is None:
            return 0
        return self.placement.between(self.app.service_of(caller), self.app.service_of(callee))

    def call(self, caller, callee, params, t, depth, timeout, parent=None):
        self.events += 1
        if self.events > self.event_cap:
            raise DivergenceError(
                f"scenario {self.scenario.test_id}: more than {self.event_cap} calls (unbounded call cycle?)"
            )
        cfg = self.app.breakers[self.app.endpoints[callee].breaker]
        breaker = poll_breaker(self.breakers[callee], t, cfg)
        self.breakers[callee] = breaker
        rec = CallRecord(
            len(self.records), self.step, caller, callee, t, depth=depth, breaker_mode=breaker.mode, parent=parent
        )
        self.records.append(rec)
        if breaker.mode == BreakerMode.OPEN:
            rec.end, rec.outcome, rec.status, rec.rejected = t, Outcome.ERRORED, 503, True
            self._console(callee, "rejected", t)
            return rec

        action = None
        if caller is not None:
            edge = (caller, callee)
            n = self.edge_calls.get(edge, 0) + 1
            self.edge_calls[edge] = n
            for rule in self.plan.rules_for(edge):
                if rule.trigger.fires(n):
                    action = rule.action
                    break
        net = self.network(caller, callee)

        if isinstance(action, Break):
            rec.end, rec.outcome = t + timeout, Outcome.DROPPED
        elif isinstance(action, HttpError):
            rec.end, rec.outcome, rec.status = t + net, Outcome.ERRORED, action.status
        else:
            delay = action.ms if isinstance(action, Delay) else 0
            rec.injected_delay_ms = delay
            arrive = t + delay + net
            if arrive - t > timeout:
                # the caller gives up before the request reaches the endpoint
                rec.end, rec.outcome = t + timeout, Outcome.TIMED_OUT
            else:
                response, done = self.execute(callee, params, arrive, depth, rec.seq)
                if done - t > timeout:
                    rec.end, rec.outcome = t + timeout, Outcome.TIMED_OUT
                elif response == "failed":
                    rec.end, rec.outcome, rec.status = done, Outcome.ERRORED, 500
                else:
                    rec.end, rec.outcome, rec.response = done, Outcome.OK, response
        self.breakers[callee] = step_circuit_breaker(self.breakers[callee], rec.outcome, rec.end, cfg)
        return rec

    def execute(self, api, params, t, depth, parent):
        ep = self.app.endpoints[api]
        t += self.latency_of(ep)
        degraded = failed = False
        for dc in ep.calls:
            if dc.condition is not None and not dc.condition.evaluate(params):
                continue
            for _ in range(self.plan.load.get((api, dc.target), 1)):
                rec = self.call(api, dc.target, params, t, depth + 1, ep.timeout_ms, parent)
                t = rec.end
                if rec.outcome != Outcome.OK:
                    if ep.fallback == Fallback.GRACEFUL:
                        degraded = True
                    else:
                        failed = True
                        break
                elif rec.response == "degraded":
                    degraded = True
            if failed:
                break
        response = "failed" if failed else "degraded" if degraded else "ok"
        self._console(api, response, t)
        return response, t

    def _console(self, api, kind, t):
        template = self.app.endpoints[api].console.get(kind)
        if template:
            self.console.append(template.format(api=api, t=t, test=self.scenario.test_id))

    def run(self):
        order = []
        for group in self.scenario.groups(self.plan.barriers):
            group = list(group)
            if self.order_seeded:
                group = [group[i] for i in self.order_rng.permutation(len(group))]
            order.extend(group)
        responses = {}
        t = 0
        for idx in order:
            st = self.scenario.steps[idx]
            self.step = idx
            worst = "ok"
            for _ in range(st.repeat):
                rec = self.call(None, st.api, st.params, t, 0, self.scenario.client_timeout_ms)
                t = rec.end
                resp = rec.response if rec.outcome == Outcome.OK else "failed"
                if _SEVERITY[resp] > _SEVERITY[worst]:
                    worst = resp
            responses[idx] = worst
        records = sorted(self.records, key=lambda r: (r.start, r.seq))
        return ExecutionTrace(self.scenario.test_id, records, self.console, order, responses)


def _check_holds(check, trace):
    if "step" in check:
        got = trace.step_responses.get(check["step"])
        want = check["response"]
        if want == "ok_or_degraded":
            return got in ("ok", "degraded")
        return got == want
    if "responded" in check:
        return any(r.callee == check["responded"] and r.outcome == Outcome.OK for r in trace.records)
    if "not_responded" in check:
        return not any(r.callee == check["not_responded"] and r.outcome == Outcome.OK for r in trace.records)
    return False


def classify_outcome(trace, expect):
    """HappyPath, ErrorPath or TestFailure for a completed trace."""
    responses = trace.step_responses.values()
    if expect.happy is None:
        happy = all(r == "ok" for r in responses)
    else:
        happy = all(_check_holds(c, trace) for c in expect.happy)
    if happy:
        return Classification.HAPPY_PATH
    if expect.graceful is None:
        graceful = all(r in ("ok", "degraded") for r in responses)
    else:
        graceful = all(_check_holds(c, trace) for c in expect.graceful)
    if graceful:
        return Classification.ERROR_PATH
    return Classification.TEST_FAILURE


def run_scenario(app, scenario, plan=None, placement=None, order_seed=None, event_cap=DEFAULT_EVENT_CAP):
    """Execute one scenario under a fault plan and return its classified trace.

    ``order_seed=None`` keeps the declared step order inside each barrier
    group; an integer picks a seeded permutation inside every group.
    """
    plan = plan if plan is not None else FaultPlan()
    for edge in plan.rules:
        if edge not in app.graph.edges:
            raise InputError(f"fault plan targets edge {edge} outside the call graph")
    for st in scenario.steps:
        if st.api not in app.endpoints:
            raise InputError(f"scenario {scenario.test_id} calls unknown api {st.api!r}")
    placement = placement or app.placement
    if plan.placement:
        placement = placement.with_assignment(plan.placement)
    try:
        trace = _Run(app, scenario, plan, placement, order_seed, event_cap).run()
    except RecursionError:
        raise DivergenceError(f"scenario {scenario.test_id}: call nesting too deep (unbounded call cycle?)") from None
    trace.classification = classify_outcome(trace, scenario.expect)
    return trace


def extract_events(trace, plan=None):
    """Coverage events witnessed by a run; failed runs contribute none."""
    if trace.classification == Classification.TEST_FAILURE:
        return set()
    events = set()
    for r in trace.records:
        if r.caller is None:
            continue
        if plan is not None and r.edge not in plan.rules:
            continue
        if r.outcome == Outcome.DROPPED:
            events.add(CoverageEvent(EventKind.BREAKAGE, r.edge))
        if r.injected_delay_ms > 0:
            if trace.classification == Classification.HAPPY_PATH:
                events.add(CoverageEvent(EventKind.DELAYED_HAPPY_PATH, r.edge))
            elif trace.classification == Classification.ERROR_PATH:
                events.add(CoverageEvent(EventKind.DELAYED_ERROR_PATH, r.edge))
    return events

