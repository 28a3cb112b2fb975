"""Binary CART trees over flat records (variance reduction or Gini)."""

from dataclasses import dataclass

import numpy as np

from meshchaos import kernels

MIN_GAIN = 1e-12


@dataclass
class Node:
    id: int
    depth: int
    n: int
    prediction: object
    field: str = None
    kind: str = None  # "num": left iff value < threshold; "cat": left iff value == value
    threshold: float = None
    value: object = None
    left: "Node" = None
    right: "Node" = None

    @property
    def is_leaf(self):
        return self.left is None

    def goes_left(self, record):
        x = record.get(self.field)
        if self.kind == "num":
            return _is_number(x) and x < self.threshold
        return x == self.value

    def to_dict(self):
        d = {"id": self.id, "depth": self.depth, "n": self.n, "prediction": self.prediction}
        if not self.is_leaf:
            d.update(field=self.field, kind=self.kind, threshold=self.threshold, value=self.value)
            d["left"] = self.left.to_dict()
            d["right"] = self.right.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        node = cls(d["id"], d["depth"], d["n"], d["prediction"])
        if "left" in d:
            node.field, node.kind, node.threshold, node.value = d["field"], d["kind"], d["threshold"], d["value"]
            node.left = cls.from_dict(d["left"])
            node.right = cls.from_dict(d["right"])
        return node


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


@dataclass(frozen=True)
class PathAtom:
    field: str
    op: str  # "<", ">=", "==", "!="
    value: object

    def holds(self, record):
        x = record.get(self.field)
        if self.op == "<":
            return _is_number(x) and x < self.value
        if self.op == ">=":
            return _is_number(x) and x >= self.value
        if self.op == "==":
            return x == self.value
        return x != self.value

    def to_list(self):
        return [self.field, self.op, self.value]


class DecisionTree:
    def __init__(self, root, task):
        self.root = root
        self.task = task

    def route(self, record):
        node = self.root
        while not node.is_leaf:
            node = node.left if node.goes_left(record) else node.right
        return node

    def predict(self, record):
        return self.route(record).prediction

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return sorted(out, key=lambda n: n.id)

    def path_atoms(self, leaf_id):
        """Split conditions from the root down to leaf ``leaf_id``."""

        def search(node, acc):
            if node.id == leaf_id:
                return acc
            if node.is_leaf:
                return None
            if node.kind == "num":
                go_left, go_right = PathAtom(node.field, "<", node.threshold), PathAtom(node.field, ">=", node.threshold)
            else:
                go_left, go_right = PathAtom(node.field, "==", node.value), PathAtom(node.field, "!=", node.value)
            return search(node.left, acc + [go_left]) or search(node.right, acc + [go_right])

        atoms = search(self.root, [])
        if atoms is None:
            raise KeyError(f"no leaf with id {leaf_id}")
        return atoms

    @property
    def depth(self):
        return max(n.depth for n in self.leaves())

    def to_dict(self):
        return {"task": self.task, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Node.from_dict(d["root"]), d["task"])


def _majority(labels):
    values, counts = np.unique(np.asarray([repr(v) for v in labels]), return_counts=True)
    best = values[int(np.argmax(counts))]
    return next(v for v in labels if repr(v) == best)


def _impurity(y, criterion):
    n = y.shape[0]
    if n == 0:
        return 0.0
    s = y.sum(axis=0)
    if criterion == kernels.SSE:
        return float(((y * y).sum(axis=0) - s * s / n).sum())
    return float(n - (s * s).sum() / n)


def fit_tree(records, fields, target, task, max_depth=8, min_samples_leaf=5):
    """Grow a tree predicting ``target`` values from the ``fields`` of ``records``.

    ``fields`` maps field name to "num" or "cat". For ``task="regression"`` the
    target values must be numbers and leaves predict their mean; for
    ``task="classification"`` leaves predict the majority label. Splits must
    leave ``min_samples_leaf`` records on both sides.
    """
    target = list(target)
    if task == "regression":
        y_all = np.asarray(target, dtype=np.float64).reshape(-1, 1)
        criterion = kernels.SSE
    else:
        labels = sorted({repr(v) for v in target})
        index = {lab: i for i, lab in enumerate(labels)}
        y_all = np.zeros((len(target), len(labels)))
        y_all[np.arange(len(target)), [index[repr(v)] for v in target]] = 1.0
        criterion = kernels.GINI
    names = sorted(fields)
    num_cols = {}
    for f in names:
        if fields[f] == "num":
            col = np.array([r[f] if _is_number(r.get(f)) else np.inf for r in records], dtype=np.float64)
            num_cols[f] = col
    counter = [0]

    def leaf_value(idx):
        if task == "regression":
            return float(y_all[idx, 0].mean())
        return _majority([target[i] for i in idx])

    def grow(idx, depth):
        node = Node(counter[0], depth, len(idx), leaf_value(idx))
        counter[0] += 1
        if depth >= max_depth or len(idx) < 2 * min_samples_leaf:
            return node
        y = y_all[idx]
        parent = _impurity(y, criterion)
        if parent <= MIN_GAIN:
            return node
        best = None  # (gain, field, kind, threshold/value, left_idx, right_idx)
        for f in names:
            if fields[f] == "num":
                x = num_cols[f][idx]
                order = np.argsort(x, kind="stable")
                xs = np.ascontiguousarray(x[order])
                ys = np.ascontiguousarray(y[order])
                gain, pos = kernels.best_split(xs, ys, min_samples_leaf, criterion)
                if pos < 0 or not np.isfinite(xs[pos - 1]):
                    continue
                thr = float(xs[pos - 1] + (xs[pos] - xs[pos - 1]) / 2)
                if best is None or gain > best[0] + MIN_GAIN:
                    best = (gain, f, "num", thr, idx[order[:pos]], idx[order[pos:]])
            else:
                col = [records[i].get(f) for i in idx]
                seen = []
                for v in col:
                    if v not in seen:
                        seen.append(v)
                for v in sorted(seen, key=repr):
                    mask = np.array([c == v for c in col])
                    nl = int(mask.sum())
                    if nl < min_samples_leaf or len(idx) - nl < min_samples_leaf:
                        continue
                    gain = parent - _impurity(y[mask], criterion) - _impurity(y[~mask], criterion)
                    if best is None or gain > best[0] + MIN_GAIN:
                        best = (gain, f, "cat", v, idx[mask], idx[~mask])
        if best is None or best[0] <= MIN_GAIN:
            return node
        _, f, kind, split, left_idx, right_idx = best
        node.field, node.kind = f, kind
        if kind == "num":
            node.threshold = split
        else:
            node.value = split
        node.left = grow(np.sort(left_idx), depth + 1)
        node.right = grow(np.sort(right_idx), depth + 1)
        return node

    root = grow(np.arange(len(records)), 0)
    return DecisionTree(root, task)
