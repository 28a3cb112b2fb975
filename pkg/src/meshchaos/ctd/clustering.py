"""Console-output clustering and constraint mining for CTD models.

Run every legal vector, cluster the console output, let a tester categorise
each cluster, then turn the clusters marked as illegal combinations into new
model constraints.
"""

import re
from dataclasses import dataclass, field
from enum import Enum

from meshchaos.ctd.expr import Atom, Not, conjunction

DEFAULT_THRESHOLD = 0.6

_SPLIT = re.compile(r"[^0-9A-Za-z]+")


class ClusterCategory(str, Enum):
    STACK_BUG = "StackBug"
    TEST_PLAN_BUG = "TestPlanBug"
    ILLEGAL_COMBINATION = "IllegalCombination"
    UNCATEGORIZED = "Uncategorized"


@dataclass
class OutputCluster:
    id: int
    members: list  # (vector, output text) pairs
    tokens: frozenset
    category: ClusterCategory = ClusterCategory.UNCATEGORIZED
    indices: list = field(default_factory=list)

    def to_dict(self):
        return {
            "id": self.id,
            "category": self.category.value,
            "tokens": sorted(self.tokens),
            "members": [{"vector": v, "output": o} for v, o in self.members],
        }

    @classmethod
    def from_dict(cls, data):
        members = [(m["vector"], m["output"]) for m in data["members"]]
        return cls(data["id"], members, frozenset(data.get("tokens", ())), ClusterCategory(data.get("category", "Uncategorized")))


def tokenize(text):
    """Lower-cased alphanumeric tokens; pure numbers (ids, timestamps) are dropped."""
    return frozenset(t.lower() for t in _SPLIT.split(text) if t and not t.isdigit())


def jaccard(a, b):
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def cluster_outputs(observations, threshold=DEFAULT_THRESHOLD):
    """Greedy average-linkage agglomeration of outputs on token-set Jaccard similarity.

    Observations with identical token sets start in the same group. The most
    similar pair of groups is merged while its similarity reaches
    ``threshold``; ties go to the pair with the lowest indices.
    """
    observations = list(observations)
    if not observations:
        return []
    tokens = [tokenize(text) for _, text in observations]

    groups = []  # each: list of observation indices
    seen = {}
    for idx, tok in enumerate(tokens):
        if tok in seen:
            groups[seen[tok]].append(idx)
        else:
            seen[tok] = len(groups)
            groups.append([idx])
    keys = [tokens[g[0]] for g in groups]
    weights = [len(g) for g in groups]
    sim = [[jaccard(a, b) for b in keys] for a in keys]

    # clusters hold indices into `groups`
    clusters = [[g] for g in range(len(groups))]

    def linkage(ca, cb):
        num = sum(weights[x] * weights[y] * sim[x][y] for x in ca for y in cb)
        return num / (sum(weights[x] for x in ca) * sum(weights[y] for y in cb))

    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                s = linkage(clusters[i], clusters[j])
                if best is None or s > best[0] + 1e-12:
                    best = (s, i, j)
        if best[0] < threshold:
            break
        _, i, j = best
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]

    out = []
    for cl in clusters:
        idxs = sorted(idx for g in cl for idx in groups[g])
        counts = {}
        for idx in idxs:
            for t in tokens[idx]:
                counts[t] = counts.get(t, 0) + 1
        profile = frozenset(t for t, c in counts.items() if 2 * c >= len(idxs))
        out.append(OutputCluster(0, [observations[i] for i in idxs], profile, indices=idxs))
    out.sort(key=lambda c: c.indices[0])
    for cid, cl in enumerate(out):
        cl.id = cid
    return out


def _shared_assignment(members, names):
    first = members[0][0]
    shared = []
    for name in names:
        value = first.get(name)
        if value is not None and all(v.get(name) == value for v, _ in members):
            shared.append((name, value))
    return shared


def derive_constraints(clusters, model):
    """Negated shared assignments of clusters a tester marked as illegal combinations.

    For each such cluster the maximal partial assignment common to all of its
    members becomes ``!(P=v & ...)``, provided no member of a differently
    categorised cluster also carries it. Clusters without a discriminating
    assignment yield nothing.
    """
    names = model.names
    constraints = []
    for cl in clusters:
        if cl.category != ClusterCategory.ILLEGAL_COMBINATION or not cl.members:
            continue
        shared = _shared_assignment(cl.members, names)
        if not shared:
            continue
        others = [v for other in clusters if other.category != cl.category for v, _ in other.members]
        if any(all(v.get(n) == val for n, val in shared) for v in others):
            continue
        expr = Not(conjunction(Atom(n, val) for n, val in shared))
        if expr not in constraints:
            constraints.append(expr)
    return constraints
