"""Fault plans: what to inject on which call edge, and orchestration hooks."""

from dataclasses import dataclass, field, replace

import numpy as np

from meshchaos.errors import InputError


@dataclass(frozen=True)
class Break:
    """Drop the call: the callee is never reached."""

    def to_dict(self):
        return {"kind": "break"}


@dataclass(frozen=True)
class Delay:
    ms: int

    def to_dict(self):
        return {"kind": "delay", "ms": self.ms}


@dataclass(frozen=True)
class HttpError:
    status: int

    def to_dict(self):
        return {"kind": "http_error", "status": self.status}


@dataclass(frozen=True)
class Always:
    def fires(self, call_index):
        return True

    def to_dict(self):
        return {"kind": "always"}


@dataclass(frozen=True)
class NthCall:
    n: int

    def fires(self, call_index):
        return call_index == self.n

    def to_dict(self):
        return {"kind": "nth", "n": self.n}


@dataclass(frozen=True)
class WithProbability:
    p: float
    seed: int

    def fires(self, call_index):
        # one independent draw per (seed, call index) keeps plans replayable
        return np.random.default_rng([self.seed, call_index]).random() < self.p

    def to_dict(self):
        return {"kind": "probability", "p": self.p, "seed": self.seed}


@dataclass(frozen=True)
class FaultRule:
    trigger: object
    action: object

    def to_dict(self):
        return {"trigger": self.trigger.to_dict(), "action": self.action.to_dict()}


@dataclass(frozen=True)
class FaultPlan:
    """Per-edge fault rules plus orchestration hooks.

    ``rules`` maps an edge to a tuple of ``FaultRule``; at each intercepted call
    the first rule whose trigger fires is applied. ``barriers`` (a list of step
    index groups) replaces the scenario's own grouping, ``load`` multiplies how
    many times a call on an edge is issued, and ``placement`` overrides the
    service-to-site assignment.
    """

    rules: dict = field(default_factory=dict)
    barriers: tuple = None
    load: dict = field(default_factory=dict)
    placement: dict = None

    def rules_for(self, edge):
        return self.rules.get(edge, ())

    @property
    def is_empty(self):
        return not self.rules and self.barriers is None and not self.load and self.placement is None

    def to_dict(self):
        out = {
            "rules": [
                {"edge": list(edge), **rule.to_dict()} for edge in sorted(self.rules) for rule in self.rules[edge]
            ]
        }
        if self.barriers is not None:
            out["barriers"] = [list(g) for g in self.barriers]
        if self.load:
            out["load"] = [{"edge": list(e), "multiplier": m} for e, m in sorted(self.load.items())]
        if self.placement is not None:
            out["placement"] = dict(sorted(self.placement.items()))
        return out

    @classmethod
    def from_dict(cls, data):
        rules = {}
        for idx, row in enumerate(data.get("rules", [])):
            try:
                edge = tuple(row["edge"])
                rule = FaultRule(_trigger_from(row.get("trigger", {"kind": "always"})), _action_from(row["action"]))
            except (KeyError, TypeError) as exc:
                raise InputError(f"rule #{idx}: malformed entry ({exc})") from None
            rules.setdefault(edge, ())
            rules[edge] = rules[edge] + (rule,)
        barriers = data.get("barriers")
        if barriers is not None:
            barriers = tuple(tuple(g) for g in barriers)
        load = {tuple(r["edge"]): r["multiplier"] for r in data.get("load", [])}
        return cls(rules=rules, barriers=barriers, load=load, placement=data.get("placement"))


def _trigger_from(d):
    kind = d.get("kind")
    if kind == "always":
        return Always()
    if kind == "nth":
        return NthCall(int(d["n"]))
    if kind == "probability":
        return WithProbability(float(d["p"]), int(d["seed"]))
    raise InputError(f"unknown trigger kind {kind!r}")


def _action_from(d):
    kind = d.get("kind")
    if kind == "break":
        return Break()
    if kind == "delay":
        return Delay(int(d["ms"]))
    if kind == "http_error":
        return HttpError(int(d["status"]))
    raise InputError(f"unknown action kind {kind!r}")


def single_rule(edge, action, trigger=None):
    return FaultPlan(rules={tuple(edge): (FaultRule(trigger or Always(), action),)})


@dataclass(frozen=True)
class PlanError:
    edge: tuple
    rule_index: int
    message: str

    def __str__(self):
        where = f"edge {self.edge}" if self.edge is not None else "plan"
        if self.rule_index is not None:
            where += f" rule #{self.rule_index}"
        return f"{where}: {self.message}"


def validate_plan(plan, graph, n_steps=None, sites=None):
    """Every problem in ``plan``; an empty list means the plan is valid."""
    errors = []
    for edge in sorted(plan.rules):
        if edge not in graph.edges:
            errors.append(PlanError(edge, None, f"edge ({edge[0]}, {edge[1]}) is not in the call graph"))
        breaks = 0
        for idx, rule in enumerate(plan.rules[edge]):
            trig, act = rule.trigger, rule.action
            if isinstance(trig, NthCall) and not (isinstance(trig.n, int) and trig.n >= 1):
                errors.append(PlanError(edge, idx, f"NthCall index must be >= 1, got {trig.n}"))
            elif isinstance(trig, WithProbability) and not 0 < trig.p <= 1:
                errors.append(PlanError(edge, idx, f"probability must be in (0, 1], got {trig.p}"))
            elif not isinstance(trig, (Always, NthCall, WithProbability)):
                errors.append(PlanError(edge, idx, f"unknown trigger {trig!r}"))
            if isinstance(act, Delay) and not (isinstance(act.ms, int) and act.ms > 0):
                errors.append(PlanError(edge, idx, f"delay must be a positive number of ms, got {act.ms}"))
            elif isinstance(act, HttpError) and not 400 <= act.status <= 599:
                errors.append(PlanError(edge, idx, f"HTTP status must be in 400-599, got {act.status}"))
            elif isinstance(act, Break):
                breaks += 1
            elif not isinstance(act, (Delay, HttpError, Break)):
                errors.append(PlanError(edge, idx, f"unknown action {act!r}"))
        if breaks > 1:
            errors.append(PlanError(edge, None, "more than one Break rule on the same edge"))
    for edge, mult in sorted(plan.load.items()):
        if edge not in graph.edges:
            errors.append(PlanError(edge, None, "load multiplier on an edge outside the call graph"))
        if not (isinstance(mult, int) and mult >= 1):
            errors.append(PlanError(edge, None, f"load multiplier must be an integer >= 1, got {mult}"))
    if plan.barriers is not None and n_steps is not None:
        flat = sorted(i for g in plan.barriers for i in g)
        if flat != list(range(n_steps)):
            errors.append(PlanError(None, None, "barrier groups must partition the scenario steps"))
    if plan.placement is not None and sites is not None:
        for svc, site in sorted(plan.placement.items()):
            if site not in sites:
                errors.append(PlanError(None, None, f"placement puts {svc} on unknown site {site!r}"))
    return errors


def merge_plans(a, b):
    """Concatenate rule lists per edge (``a`` first); ``b``'s hooks win.

    A Break rule from ``b`` supersedes any Break rule ``a`` has on that edge, so
    the result keeps at most one Break per edge.
    """
    rules = {}
    for edge in set(a.rules) | set(b.rules):
        left = a.rules.get(edge, ())
        right = b.rules.get(edge, ())
        if any(isinstance(r.action, Break) for r in right):
            left = tuple(r for r in left if not isinstance(r.action, Break))
        merged = left + right
        last_break = max((i for i, r in enumerate(merged) if isinstance(r.action, Break)), default=None)
        merged = tuple(r for i, r in enumerate(merged) if not isinstance(r.action, Break) or i == last_break)
        rules[edge] = merged
    load = dict(a.load)
    load.update(b.load)
    return replace(
        a,
        rules=rules,
        barriers=b.barriers if b.barriers is not None else a.barriers,
        load=load,
        placement=b.placement if b.placement is not None else a.placement,
    )
