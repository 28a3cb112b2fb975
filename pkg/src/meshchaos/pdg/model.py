"""Per-endpoint dependency models: trace buckets, decision trees, comparison and input generation."""

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from meshchaos.errors import InputError
from meshchaos.pdg.flatten import DEFAULT_LIST_CAP, FlatRecord, flatten
from meshchaos.pdg.tree import DecisionTree, _is_number, fit_tree

QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PdgConfig:
    max_depth: int = 8
    min_samples_leaf: int = 5
    list_cap: int = DEFAULT_LIST_CAP
    sensitive: tuple = ()  # numeric request fields whose production values must not be emitted
    association_min: float = 0.95

    def __post_init__(self):
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise InputError("tree limits must be max_depth >= 0 and min_samples_leaf >= 1")
        if not 0 < self.association_min <= 1:
            raise InputError("association_min must be in (0, 1]")


@dataclass
class FieldStats:
    kind: str  # "num" or "cat"
    count: int
    min: float = None
    max: float = None
    mean: float = None
    quantiles: tuple = ()
    integer: bool = False
    values: list = None  # observed values of a categorical field

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["quantiles"] = tuple(d.get("quantiles", ()))
        return cls(**d)


def value_hash(x):
    """Digest of a number's float64 bit pattern."""
    return hashlib.sha256(np.float64(x).tobytes()).hexdigest()


def decycle(trace):
    """Drop repeated API ids, keeping each first occurrence in order."""
    seen = []
    for api in trace:
        if api not in seen:
            seen.append(api)
    return tuple(seen)


def _field_kinds(records):
    kinds = {}
    for rec in records:
        for k, v in rec.items():
            if v is None:
                kinds.setdefault(k, None)
                continue
            kind = "num" if _is_number(v) else "cat"
            if kinds.get(k) is None:
                kinds[k] = kind
            elif kinds[k] != kind:
                kinds[k] = "cat"
    return {k: (v or "cat") for k, v in kinds.items()}


def _stats(records, kinds):
    out = {}
    for name, kind in sorted(kinds.items()):
        present = [r[name] for r in records if name in r]
        if kind == "num":
            vals = np.asarray([v for v in present if _is_number(v)], dtype=np.float64)
            out[name] = FieldStats(
                "num",
                len(present),
                float(vals.min()),
                float(vals.max()),
                float(vals.mean()),
                tuple(float(q) for q in np.quantile(vals, QUANTILES)),
                all(isinstance(v, int) for v in present if _is_number(v)),
            )
        else:
            values = []
            for v in present:
                if v not in values:
                    values.append(v)
            out[name] = FieldStats("cat", len(present), values=sorted(values, key=repr))
    return out


def _associations(records, names, min_share):
    pairs = []
    n = len(records)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            same = sum(1 for r in records if a in r and b in r and r[a] == r[b])
            if same / n >= min_share:
                pairs.append((a, b))
    return pairs


@dataclass(frozen=True)
class PathRef:
    """One decision-tree path: a classifier leaf, its bucket, and one response-field tree leaf."""

    class_leaf: int
    bucket: str
    field: str
    leaf: int

    def to_dict(self):
        return {"class_leaf": self.class_leaf, "bucket": self.bucket, "field": self.field, "leaf": self.leaf}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["class_leaf"]), d["bucket"], d["field"], int(d["leaf"]))


@dataclass
class Bucket:
    id: str
    path: tuple  # None for records that carried no trace
    size: int
    trees: dict  # response field -> DecisionTree
    kinds: dict  # response field -> "num" / "cat"


@dataclass
class PdgModel:
    config: PdgConfig
    request_kinds: dict
    stats: dict
    associations: list
    buckets: dict  # bucket id -> Bucket
    classifier: DecisionTree
    sensitive_hashes: dict = field(default_factory=dict)  # field -> sorted digests

    def bucket_for_trace(self, trace):
        key = None if trace is None else decycle(trace)
        for b in self.buckets.values():
            if b.path == key:
                return b.id
        return None

    @property
    def traced(self):
        return any(b.path is not None for b in self.buckets.values())

    def paths(self):
        out = []
        for leaf in self.classifier.leaves():
            b = self.buckets[leaf.prediction]
            for name in sorted(b.trees):
                for reg in b.trees[name].leaves():
                    out.append(PathRef(leaf.id, b.id, name, reg.id))
        return out

    def path_atoms(self, ref):
        b = self.buckets[ref.bucket]
        return self.classifier.path_atoms(ref.class_leaf) + b.trees[ref.field].path_atoms(ref.leaf)

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "config": {**self.config.__dict__, "sensitive": list(self.config.sensitive)},
            "request_kinds": self.request_kinds,
            "stats": {k: v.to_dict() for k, v in self.stats.items()},
            "associations": [list(p) for p in self.associations],
            "buckets": [
                {
                    "id": b.id,
                    "path": None if b.path is None else list(b.path),
                    "size": b.size,
                    "kinds": b.kinds,
                    "trees": {k: t.to_dict() for k, t in b.trees.items()},
                }
                for b in self.buckets.values()
            ],
            "classifier": self.classifier.to_dict(),
            "sensitive_hashes": self.sensitive_hashes,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != FORMAT_VERSION:
            raise InputError(f"unsupported model format version {d.get('version')!r}")
        cfg = dict(d["config"])
        cfg["sensitive"] = tuple(cfg.get("sensitive", ()))
        buckets = {}
        for b in d["buckets"]:
            buckets[b["id"]] = Bucket(
                b["id"],
                None if b["path"] is None else tuple(b["path"]),
                b["size"],
                {k: DecisionTree.from_dict(t) for k, t in b["trees"].items()},
                dict(b["kinds"]),
            )
        return cls(
            PdgConfig(**cfg),
            dict(d["request_kinds"]),
            {k: FieldStats.from_dict(v) for k, v in d["stats"].items()},
            [tuple(p) for p in d["associations"]],
            buckets,
            DecisionTree.from_dict(d["classifier"]),
            {k: list(v) for k, v in d.get("sensitive_hashes", {}).items()},
        )


def _split_record(rec, where, list_cap):
    if not isinstance(rec, dict) or "request" not in rec or "response" not in rec:
        raise InputError(f"{where}: record needs 'request' and 'response'")
    trace = rec.get("trace")
    if trace is not None and (not isinstance(trace, list) or not all(isinstance(a, str) for a in trace)):
        raise InputError(f"{where}: 'trace' must be a list of API ids")
    return flatten(rec["request"], list_cap=list_cap), flatten(rec["response"], list_cap=list_cap), trace


def build(records, config=None):
    """Fit bucket classifier, per-bucket response trees and request statistics."""
    config = config or PdgConfig()
    records = list(records)
    if not records:
        raise InputError("no production records to build from")
    reqs, resps, keys = [], [], []
    for i, rec in enumerate(records):
        req, resp, trace = _split_record(rec, f"record {i}", config.list_cap)
        reqs.append(req)
        resps.append(resp)
        keys.append(None if trace is None else decycle(trace))

    kinds = _field_kinds(reqs)
    for name in config.sensitive:
        if kinds.get(name) != "num":
            raise InputError(f"sensitive field {name!r} is not a numeric request field")
    stats = _stats(reqs, kinds)
    associations = _associations(reqs, sorted(kinds), config.association_min)

    bucket_ids, members = {}, {}
    for i, key in enumerate(keys):
        if key not in bucket_ids:
            bucket_ids[key] = f"b{len(bucket_ids)}"
        members.setdefault(bucket_ids[key], []).append(i)

    buckets = {}
    for key, bid in bucket_ids.items():
        idx = members[bid]
        rkinds = _field_kinds([resps[i] for i in idx])
        trees = {}
        for name, rkind in sorted(rkinds.items()):
            rows = [i for i in idx if name in resps[i] and (rkind == "cat" or _is_number(resps[i][name]))]
            trees[name] = fit_tree(
                [reqs[i] for i in rows],
                kinds,
                [resps[i][name] for i in rows],
                "regression" if rkind == "num" else "classification",
                config.max_depth,
                config.min_samples_leaf,
            )
        buckets[bid] = Bucket(bid, key, len(idx), trees, rkinds)

    labels = [bucket_ids[k] for k in keys]
    classifier = fit_tree(reqs, kinds, labels, "classification", config.max_depth, config.min_samples_leaf)
    hashes = {
        name: sorted({value_hash(r[name]) for r in reqs if _is_number(r.get(name))}) for name in config.sensitive
    }
    return PdgModel(config, kinds, stats, associations, buckets, classifier, hashes)


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True, indent=1))


def load_model(path):
    try:
        return PdgModel.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a dependency model ({exc})") from None


def read_records(path):
    """JSON-lines records; blank lines are skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InputError(exc.msg, path=path, line=lineno) from None
    return out


class AnomalyReason(str, Enum):
    UNKNOWN_TRACE = "UnknownTrace"
    CLASSIFICATION_MISMATCH = "ClassificationMismatch"
    REGRESSION_MISMATCH = "RegressionMismatch"


@dataclass
class TestMatch:
    __test__ = False

    index: int
    bucket: str = None
    class_leaf: int = None
    leaves: dict = field(default_factory=dict)  # response field -> leaf id
    anomaly: AnomalyReason = None
    detail: str = ""

    def to_dict(self):
        return {
            "index": self.index,
            "bucket": self.bucket,
            "class_leaf": self.class_leaf,
            "leaves": self.leaves,
            "anomaly": None if self.anomaly is None else self.anomaly.value,
            "detail": self.detail,
        }


@dataclass
class ComparisonReport:
    matches: list
    unvisited: list
    n_paths: int

    @property
    def anomalies(self):
        return [m for m in self.matches if m.anomaly is not None]

    def to_dict(self):
        return {
            "tests": [m.to_dict() for m in self.matches],
            "n_paths": self.n_paths,
            "unvisited": [p.to_dict() for p in self.unvisited],
        }


def _close(predicted, actual, kind, threshold):
    if kind == "cat":
        return predicted == actual
    if not _is_number(actual):
        return False
    return abs(predicted - actual) <= threshold * abs(actual)


def compare(model, tests, threshold=0.1):
    """Map each test onto the model and list every path no matching test visited.

    A test is anomalous when its trace has no bucket, when the classifier
    picks a different bucket than its trace, or when a response field is off
    by more than ``threshold`` relative error (categoricals must match exactly).
    """
    matches = []
    visited = set()
    for i, rec in enumerate(tests):
        req, resp, trace = _split_record(rec, f"test {i}", model.config.list_cap)
        leaf = model.classifier.route(req)
        m = TestMatch(i, class_leaf=leaf.id)
        matches.append(m)
        if trace is not None and model.traced:
            bid = model.bucket_for_trace(trace)
            if bid is None:
                m.anomaly = AnomalyReason.UNKNOWN_TRACE
                m.detail = "->".join(decycle(trace))
                continue
            if bid != leaf.prediction:
                m.bucket = bid
                m.anomaly = AnomalyReason.CLASSIFICATION_MISMATCH
                m.detail = f"predicted {leaf.prediction}"
                continue
        m.bucket = leaf.prediction
        bucket = model.buckets[m.bucket]
        for name in sorted(bucket.trees):
            reg = bucket.trees[name].route(req)
            m.leaves[name] = reg.id
            if m.anomaly is None and not _close(reg.prediction, resp.get(name), bucket.kinds[name], threshold):
                m.anomaly = AnomalyReason.REGRESSION_MISMATCH
                m.detail = f"{name}: predicted {reg.prediction!r}, got {resp.get(name)!r}"
        if m.anomaly is None:
            visited.update(PathRef(leaf.id, m.bucket, name, lid) for name, lid in m.leaves.items())
    all_paths = model.paths()
    return ComparisonReport(matches, [p for p in all_paths if p not in visited], len(all_paths))


@dataclass
class _Interval:
    lo: float = -math.inf
    hi: float = math.inf
    hi_open: bool = False
    eq: object = None
    has_eq: bool = False
    neq: list = field(default_factory=list)

    def apply(self, atom):
        if atom.op == "<":
            if atom.value < self.hi or (atom.value == self.hi and not self.hi_open):
                self.hi, self.hi_open = atom.value, True
        elif atom.op == ">=":
            self.lo = max(self.lo, atom.value)
        elif atom.op == "==":
            if self.has_eq and self.eq != atom.value:
                return False
            self.eq, self.has_eq = atom.value, True
        else:
            self.neq.append(atom.value)
        return True


@dataclass
class GenerationResult:
    inputs: list  # (PathRef, FlatRecord)
    infeasible: list  # (PathRef, reason)

    def to_dict(self):
        return {
            "inputs": [{"path": p.to_dict(), "request": dict(r)} for p, r in self.inputs],
            "infeasible": [{"path": p.to_dict(), "reason": why} for p, why in self.infeasible],
        }


class _Infeasible(Exception):
    pass


def _integer_range(box):
    lo = math.ceil(box.lo)
    hi = (math.ceil(box.hi) - 1) if box.hi_open else math.floor(box.hi)
    return lo, hi


def _sample_numeric(box, st, rng, banned):
    box = _Interval(max(box.lo, st.min), box.hi, box.hi_open, neq=box.neq)
    if box.hi > st.max:
        box.hi, box.hi_open = st.max, False
    if box.lo > box.hi or (box.lo == box.hi and box.hi_open):
        raise _Infeasible("empty interval")
    if st.integer:
        lo, hi = _integer_range(box)
        if lo > hi:
            raise _Infeasible("no integer in interval")
        width = hi - lo + 1
        for _ in range(64):
            v = int(lo + rng.integers(width))
            if v not in box.neq and value_hash(v) not in banned:
                return v
        allowed = [v for v in range(lo, hi + 1) if v not in box.neq and value_hash(v) not in banned] if width <= 4096 else []
        if not allowed:
            raise _Infeasible("every admissible value is excluded")
        return allowed[int(rng.integers(len(allowed)))]
    for _ in range(64):
        v = float(box.lo if box.lo == box.hi else rng.uniform(box.lo, box.hi))
        if box.hi_open and v >= box.hi:
            continue
        if v not in box.neq and value_hash(v) not in banned:
            return v
    raise _Infeasible("every admissible value is excluded")


def generate(model, unvisited, seed=0):
    """One request per target path, drawn inside the path's constraint region.

    Each path's atoms are reduced to a per-field interval or value set,
    intersected with the observed request statistics. Sensitive numeric
    fields never take a production value. Paths whose region is empty are
    reported instead.
    """
    inputs, infeasible = [], []
    for n, ref in enumerate(unvisited):
        rng = np.random.default_rng([seed, n])
        try:
            record = _solve(model, ref, rng)
        except _Infeasible as exc:
            infeasible.append((ref, str(exc)))
            continue
        inputs.append((ref, record))
    return GenerationResult(inputs, infeasible)


def _solve(model, ref, rng):
    if ref.bucket not in model.buckets or ref.field not in model.buckets[ref.bucket].trees:
        raise _Infeasible("path not in model")
    atoms = model.path_atoms(ref)
    boxes = {}
    for atom in atoms:
        if not boxes.setdefault(atom.field, _Interval()).apply(atom):
            raise _Infeasible(f"contradictory equalities on {atom.field}")
    record = {}
    for name in sorted(model.request_kinds):
        st = model.stats[name]
        box = boxes.get(name, _Interval())
        banned = set(model.sensitive_hashes.get(name, ()))
        if st.kind == "num":
            if box.has_eq:
                raise _Infeasible(f"equality atom on numeric field {name}")
            try:
                record[name] = _sample_numeric(box, st, rng, banned)
            except _Infeasible as exc:
                raise _Infeasible(f"{name}: {exc}") from None
        else:
            choices = [box.eq] if box.has_eq else list(st.values)
            choices = [v for v in choices if v not in box.neq]
            if not choices:
                raise _Infeasible(f"{name}: no admissible category")
            record[name] = choices[int(rng.integers(len(choices)))]
    for a, b in model.associations:
        if b in model.sensitive_hashes or a in model.sensitive_hashes:
            continue
        trial = dict(record, **{b: record[a]})
        if all(x.holds(trial) for x in atoms):
            record = trial
    if not all(x.holds(record) for x in atoms):
        raise _Infeasible("sampled request leaves the path")
    return FlatRecord(record)
