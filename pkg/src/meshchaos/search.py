"""Closed-loop test generation: turn coverage gaps into fault-plan candidates.

The default strategy targets each uncovered (test, edge, event) triple
directly and spends a fraction of every batch on random exploration:

* Breakage           -> Break the edge.
* DelayedHappyPath   -> delay the edge below the caller's timeout.
* DelayedErrorPath   -> delay the edge beyond the caller's timeout.

Delays walk a ladder of timeout multiples, one rung per retry of the same
target.
"""

from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from meshchaos.callgraph import EventKind, coverage_status
from meshchaos.errors import InputError
from meshchaos.faults import Break, Delay, FaultPlan, single_rule, validate_plan

HAPPY_LADDER = (0.5, 0.9)
ERROR_LADDER = (1.1, 2.0, 5.0)
DELAY_LADDER = HAPPY_LADDER + ERROR_LADDER


@dataclass(frozen=True)
class SearchConfig:
    level: int = 1
    target: float = 1.0
    patience: int = 5
    max_rounds: int = 100
    batch_size: int = 8
    epsilon: float = 0.2

    def __post_init__(self):
        if not 0 < self.target <= 1:
            raise InputError(f"target fraction must be in (0, 1], got {self.target}")
        if self.patience < 1:
            raise InputError("patience must be >= 1")
        if self.level < 1:
            raise InputError("coverage level must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch size must be >= 1")
        if not 0 <= self.epsilon <= 1:
            raise InputError("epsilon must be in [0, 1]")


@dataclass
class SearchState:
    ledger: object
    level: int
    seed: int
    round: int = 0
    fraction: float = 0.0
    best_fraction: float = 0.0
    streak: int = 0
    attempts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Candidate:
    scenario_id: str
    plan: FaultPlan
    order_seed: int = None
    placement: dict = None
    purpose: tuple = ("explore",)  # ("target", kind, edge) or ("explore",)

    @property
    def target(self):
        if self.purpose[0] != "target":
            return None
        return (self.scenario_id, tuple(self.purpose[2]), EventKind(self.purpose[1]))

    def to_dict(self):
        purpose = list(self.purpose)
        if purpose[0] == "target":
            purpose = ["target", EventKind(purpose[1]).value, list(purpose[2])]
        return {
            "scenario": self.scenario_id,
            "plan": self.plan.to_dict(),
            "order_seed": self.order_seed,
            "placement": self.placement,
            "purpose": purpose,
        }

    @classmethod
    def from_dict(cls, d):
        purpose = d.get("purpose", ["explore"])
        if purpose[0] == "target":
            purpose = ("target", EventKind(purpose[1]), tuple(purpose[2]))
        return cls(d["scenario"], FaultPlan.from_dict(d["plan"]), d.get("order_seed"), d.get("placement"), tuple(purpose))


@dataclass
class Proposal:
    candidates: list
    unreachable: list  # (test_id, edge, kind) triples that no run can exercise


def initial_state(graph, footprints, level, seed, ledger):
    report = coverage_status(ledger, graph, footprints, level)
    return SearchState(ledger=ledger, level=level, seed=seed, fraction=report.fraction, best_fraction=report.fraction)


def delay_for(kind, attempt, caller_timeout):
    ladder = HAPPY_LADDER if kind == EventKind.DELAYED_HAPPY_PATH else ERROR_LADDER
    return max(1, int(round(ladder[attempt % len(ladder)] * caller_timeout)))


class Strategy(Protocol):
    def propose(self, state, graph, footprints, batch_size, *, timeouts, observed_edges=None): ...


class GreedyGapStrategy:
    """Gap targeting plus epsilon-random exploration."""

    def __init__(self, epsilon=0.2):
        self.epsilon = epsilon

    def propose(self, state, graph, footprints, batch_size, *, timeouts, observed_edges=None):
        if batch_size < 1:
            raise InputError("batch size must be >= 1")
        report = coverage_status(state.ledger, graph, footprints, state.level)
        targets = report.uncovered_targets()
        if not targets:
            return Proposal([], [])
        rng = np.random.default_rng([state.seed, state.round, 11])

        reachable, unreachable = [], []
        for t in targets:
            test_id, edge, _ = t
            seen = None if observed_edges is None else observed_edges.get(test_id, frozenset())
            (unreachable if seen is not None and edge not in seen else reachable).append(t)
        order = sorted(range(len(reachable)), key=lambda i: (state.attempts.get(reachable[i], 0), i))

        n_explore = int(round(self.epsilon * batch_size))
        n_target = min(len(reachable), batch_size - n_explore)
        batch = []
        for i in order[:n_target]:
            test_id, edge, kind = reachable[i]
            attempt = state.attempts.get(reachable[i], 0)
            if kind == EventKind.BREAKAGE:
                plan = single_rule(edge, Break())
            else:
                plan = single_rule(edge, Delay(delay_for(kind, attempt, timeouts[edge[0]])))
            batch.append(Candidate(test_id, plan, None, None, ("target", kind, edge)))

        tests = sorted(fp.test_id for fp in footprints)
        for _ in range(n_explore):
            test_id = tests[int(rng.integers(len(tests)))]
            pool = sorted(observed_edges.get(test_id, ())) if observed_edges is not None else []
            if not pool:
                pool = sorted(e for tc in report.tests if tc.test_id == test_id for e in tc.edges)
            if not pool:
                continue
            edge = pool[int(rng.integers(len(pool)))]
            rung = int(rng.integers(len(DELAY_LADDER) + 1))
            if rung == len(DELAY_LADDER):
                action = Break()
            else:
                action = Delay(max(1, int(round(DELAY_LADDER[rung] * timeouts[edge[0]]))))
            batch.append(Candidate(test_id, single_rule(edge, action), int(rng.integers(2**31)), None, ("explore",)))

        batch = [c for c in batch if not validate_plan(c.plan, graph)]
        return Proposal(batch, unreachable)


def propose(state, graph, footprints, batch_size, *, timeouts, observed_edges=None, strategy=None):
    """Candidates for the next round plus the targets no run can reach."""
    strategy = strategy or GreedyGapStrategy()
    return strategy.propose(state, graph, footprints, batch_size, timeouts=timeouts, observed_edges=observed_edges)


def update(state, results, graph, footprints):
    """Merge a round's events into the ledger and advance the round counter.

    ``results`` holds ``(candidate, events)`` pairs.
    """
    if not results:
        return replace(state, round=state.round + 1)
    ledger = state.ledger.copy()
    attempts = dict(state.attempts)
    for cand, events in results:
        ledger.merge(cand.scenario_id, events)
        if cand.target is not None:
            attempts[cand.target] = attempts.get(cand.target, 0) + 1
    fraction = coverage_status(ledger, graph, footprints, state.level).fraction
    improved = fraction > state.best_fraction + 1e-12
    return replace(
        state,
        ledger=ledger,
        round=state.round + 1,
        fraction=fraction,
        best_fraction=max(fraction, state.best_fraction),
        streak=0 if improved else state.streak + 1,
        attempts=attempts,
    )


def should_stop(state, config):
    return state.fraction >= config.target or state.streak >= config.patience or state.round >= config.max_rounds
