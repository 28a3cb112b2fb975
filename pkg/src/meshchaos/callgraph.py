"""API call graph, per-test footprints and circuit-breaker coverage.

An edge ``(a, b)`` means API ``a`` can call ``b`` (or feeds its input). For a
test footprint (the APIs a test was observed to call), level-``i`` coverage
asks for all three fault events on every edge of the sub-graph induced by the
footprint grown by forward paths of length ``< i``.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from meshchaos.errors import InputError

Edge = tuple[str, str]


class EventKind(str, Enum):
    BREAKAGE = "Breakage"
    DELAYED_HAPPY_PATH = "DelayedHappyPath"
    DELAYED_ERROR_PATH = "DelayedErrorPath"


EVENT_KINDS = (EventKind.BREAKAGE, EventKind.DELAYED_HAPPY_PATH, EventKind.DELAYED_ERROR_PATH)


@dataclass(frozen=True, order=True)
class CoverageEvent:
    kind: EventKind
    edge: Edge


@dataclass(frozen=True)
class CallGraph:
    nodes: frozenset
    edges: frozenset

    def __init__(self, nodes, edges=()):
        nodes = frozenset(nodes)
        edges = frozenset(tuple(e) for e in edges)
        if any(not isinstance(n, str) or not n for n in nodes):
            raise InputError("API ids must be non-empty strings")
        for a, b in edges:
            for end in (a, b):
                if end not in nodes:
                    raise InputError(f"edge ({a}, {b}) references unknown API {end!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def successors(self, api):
        return sorted(b for a, b in self.edges if a == api)

    def adjacency(self):
        adj = {n: [] for n in self.nodes}
        for a, b in sorted(self.edges):
            adj[a].append(b)
        return adj

    def check_apis(self, apis):
        unknown = sorted(set(apis) - self.nodes)
        if unknown:
            raise InputError(f"unknown API id {unknown[0]!r}")

    def to_dict(self):
        return {"nodes": sorted(self.nodes), "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_dict(cls, data):
        return cls(data["nodes"], [tuple(e) for e in data.get("edges", [])])


@dataclass(frozen=True)
class TestFootprint:
    __test__ = False

    test_id: str
    apis: frozenset

    def __init__(self, test_id, apis):
        object.__setattr__(self, "test_id", test_id)
        object.__setattr__(self, "apis", frozenset(apis))


def induced_subgraph(graph, apis):
    """Sub-graph with node set ``apis`` and every graph edge between them."""
    apis = frozenset(apis)
    graph.check_apis(apis)
    return CallGraph(apis, [e for e in graph.edges if e[0] in apis and e[1] in apis])


def expand_footprint(graph, apis, i):
    """APIs reachable from ``apis`` by a shortest forward path of fewer than ``i`` edges."""
    if not isinstance(i, int) or i < 1:
        raise InputError(f"coverage level must be a positive integer, got {i!r}")
    apis = frozenset(apis)
    graph.check_apis(apis)
    adj = graph.adjacency()
    dist = {a: 0 for a in apis}
    queue = deque(sorted(apis))
    while queue:
        node = queue.popleft()
        if dist[node] + 1 >= i:
            continue
        for nxt in adj[node]:
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return frozenset(dist)


def footprint_union(runs):
    """Merge the footprints of several runs of one test."""
    runs = list(runs)
    if not runs:
        raise InputError("footprint_union needs at least one run")
    ids = {r.test_id for r in runs}
    if len(ids) != 1:
        raise InputError(f"runs belong to different tests: {sorted(ids)}")
    apis = frozenset().union(*(r.apis for r in runs))
    return TestFootprint(runs[0].test_id, apis)


class CoverageLedger:
    """Occurrence counts of coverage events keyed by (test, edge, kind)."""

    def __init__(self, graph=None):
        self.graph = graph
        self.records = {}
        self.levels = {}

    def add(self, test_id, event, count=1):
        if count < 0:
            raise InputError("event counts are non-negative")
        if self.graph is not None and event.edge not in self.graph.edges:
            raise InputError(f"edge {event.edge} is not in the call graph")
        key = (test_id, tuple(event.edge), EventKind(event.kind))
        self.records[key] = self.records.get(key, 0) + count

    def merge(self, test_id, events):
        for ev in events:
            self.add(test_id, ev)

    def count(self, test_id, edge, kind):
        return self.records.get((test_id, tuple(edge), EventKind(kind)), 0)

    def copy(self):
        other = CoverageLedger(self.graph)
        other.records = dict(self.records)
        other.levels = dict(self.levels)
        return other

    def to_dict(self):
        rows = [
            {"test": t, "edge": list(e), "kind": k.value, "count": c}
            for (t, e, k), c in sorted(self.records.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value))
        ]
        return {"records": rows, "levels": dict(sorted(self.levels.items()))}

    @classmethod
    def from_dict(cls, data, graph=None):
        ledger = cls(graph)
        for row in data.get("records", []):
            ledger.add(row["test"], CoverageEvent(EventKind(row["kind"]), tuple(row["edge"])), row["count"])
        ledger.levels = dict(data.get("levels", {}))
        return ledger


@dataclass
class TestCoverage:
    __test__ = False

    test_id: str
    edges: list
    covered: list = field(default_factory=list)
    uncovered: list = field(default_factory=list)

    @property
    def is_covered(self):
        return not self.uncovered


@dataclass
class CoverageReport:
    level: int
    tests: list
    covered_pairs: int
    total_pairs: int

    @property
    def fraction(self):
        if self.total_pairs == 0:
            return 1.0
        return self.covered_pairs / self.total_pairs

    @property
    def all_covered(self):
        return all(t.is_covered for t in self.tests)

    def uncovered_targets(self):
        """(test_id, edge, kind) triples still missing, in report order."""
        return [(t.test_id, e, k) for t in self.tests for e, k in t.uncovered]

    def to_dict(self):
        return {
            "level": self.level,
            "fraction": self.fraction,
            "covered_pairs": self.covered_pairs,
            "total_pairs": self.total_pairs,
            "tests": [
                {
                    "test": t.test_id,
                    "covered": t.is_covered,
                    "edges": [list(e) for e in t.edges],
                    "uncovered": [{"edge": list(e), "event": k.value} for e, k in t.uncovered],
                }
                for t in self.tests
            ],
        }


def coverage_status(ledger, graph, footprints, i):
    """Check level-``i`` circuit-breaker coverage of every footprint against the ledger."""
    tests = []
    covered_total = 0
    pair_total = 0
    for fp in footprints:
        graph.check_apis(fp.apis)
        sub = induced_subgraph(graph, expand_footprint(graph, fp.apis, i))
        edges = sorted(sub.edges)
        tc = TestCoverage(fp.test_id, edges)
        for e in edges:
            for kind in EVENT_KINDS:
                if ledger.count(fp.test_id, e, kind) > 0:
                    tc.covered.append((e, kind))
                else:
                    tc.uncovered.append((e, kind))
        covered_total += len(tc.covered)
        pair_total += 3 * len(edges)
        tests.append(tc)
    return CoverageReport(level=i, tests=tests, covered_pairs=covered_total, total_pairs=pair_total)
