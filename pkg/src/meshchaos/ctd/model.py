"""CTD parameter models, legality, k-wise tuples and greedy covering arrays."""

import itertools
from dataclasses import dataclass, field
from math import prod
from pathlib import Path

import numpy as np

from meshchaos import kernels
from meshchaos.ctd.expr import label_columns, parse_expr
from meshchaos.errors import InputError

DEFAULT_CAP = 10**6


class ProductCapExceeded(InputError):
    """The Cartesian product is too large to enumerate."""

    def __init__(self, size, cap):
        self.size = size
        self.cap = cap
        super().__init__(f"Cartesian product has {size} vectors, above the cap of {cap}")


@dataclass(frozen=True)
class CtdParameter:
    name: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise InputError(f"parameter {self.name!r} needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise InputError(f"parameter {self.name!r} has duplicate value labels")


@dataclass(frozen=True)
class CtdModel:
    parameters: tuple
    constraints: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "parameters", tuple(self.parameters))
        cons = tuple(parse_expr(c) if isinstance(c, str) else c for c in self.constraints)
        object.__setattr__(self, "constraints", cons)
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise InputError("duplicate parameter names")
        domains = {p.name: set(p.values) for p in self.parameters}
        for c in cons:
            for atom in c.atoms():
                if atom.param not in domains:
                    raise InputError(f"constraint {c} references unknown parameter {atom.param!r}")
                if atom.value not in domains[atom.param]:
                    raise InputError(f"constraint {c} references unknown value {atom.param}={atom.value}")

    @property
    def names(self):
        return [p.name for p in self.parameters]

    @property
    def sizes(self):
        return [len(p.values) for p in self.parameters]

    def with_constraints(self, extra):
        return CtdModel(self.parameters, self.constraints + tuple(extra))

    def encode(self, vector):
        """Value-index row for a complete assignment; raises on unknown labels."""
        row = []
        for p in self.parameters:
            if p.name not in vector:
                raise InputError(f"vector {vector} is missing parameter {p.name!r}")
            try:
                row.append(p.values.index(vector[p.name]))
            except ValueError:
                raise InputError(f"vector {vector} has unknown value {p.name}={vector[p.name]}") from None
        extra = set(vector) - set(self.names)
        if extra:
            raise InputError(f"vector {vector} has unknown parameter {sorted(extra)[0]!r}")
        return row

    def decode(self, row):
        return {p.name: p.values[int(i)] for p, i in zip(self.parameters, row)}

    def is_legal(self, vector):
        return all(c.evaluate(vector) for c in self.constraints)


def load_model(path):
    """Read a ``.ctd`` model file.

    ::

        [parameters]
        fileExists: yes, no
        open: succeeds, fails
        [constraints]
        fileExists=no -> open=fails
    """
    path = Path(path)
    return parse_model(path.read_text(), source=str(path))


def parse_model(text, source="<model>"):
    params = []
    constraints = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("parameters", "constraints"):
                raise InputError(f"unknown section [{section}]", path=source, line=lineno)
            continue
        try:
            if section == "parameters":
                name, sep, rest = line.partition(":")
                if not sep or not name.strip():
                    raise InputError("expected 'name: value, value, ...'")
                values = [v.strip() for v in rest.split(",") if v.strip()]
                params.append(CtdParameter(name.strip(), tuple(values)))
            elif section == "constraints":
                constraints.append((lineno, parse_expr(line)))
            else:
                raise InputError("content outside a [parameters] or [constraints] section")
        except InputError as exc:
            raise InputError(str(exc), path=source, line=lineno) from None
    if not params:
        raise InputError("model declares no parameters", path=source)
    try:
        base = CtdModel(tuple(params))
    except InputError as exc:
        raise InputError(str(exc), path=source) from None
    for lineno, expr in constraints:
        try:
            base.with_constraints([expr])
        except InputError as exc:
            raise InputError(str(exc), path=source, line=lineno) from None
    return base.with_constraints([expr for _, expr in constraints])


def format_model(model):
    lines = ["[parameters]"]
    lines += [f"{p.name}: {', '.join(p.values)}" for p in model.parameters]
    if model.constraints:
        lines.append("[constraints]")
        lines += [str(c) for c in model.constraints]
    return "\n".join(lines) + "\n"


def product_rows(model, cap=DEFAULT_CAP):
    """Every index row of the Cartesian product, lexicographic (first parameter slowest)."""
    size = prod(model.sizes)
    if size > cap:
        raise ProductCapExceeded(size, cap)
    grids = np.indices(model.sizes).reshape(len(model.sizes), -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


def legal_rows(model, cap=DEFAULT_CAP):
    rows = product_rows(model, cap)
    if not model.constraints:
        return rows
    cols = label_columns(model.parameters, rows)
    keep = np.ones(len(rows), dtype=bool)
    for c in model.constraints:
        keep &= np.asarray(c.mask(cols), dtype=bool)
    return rows[keep]


def enumerate_legal(model, cap=DEFAULT_CAP):
    """All legal test vectors in lexicographic order."""
    return [model.decode(r) for r in legal_rows(model, cap)]


class TupleSpace:
    """Mixed-radix indexing of all ``strength``-wise value tuples of a model."""

    def __init__(self, model, strength):
        n = len(model.parameters)
        if not isinstance(strength, int) or not 1 <= strength <= n:
            raise InputError(f"strength must be in 1..{n}, got {strength!r}")
        self.model = model
        self.strength = strength
        sizes = model.sizes
        combos = list(itertools.combinations(range(n), strength))
        self.combos = np.array(combos, dtype=np.int64).reshape(len(combos), strength)
        self.strides = np.zeros_like(self.combos)
        self.offsets = np.zeros(len(combos), dtype=np.int64)
        total = 0
        for c, cols in enumerate(combos):
            stride = 1
            for j in range(strength - 1, -1, -1):
                self.strides[c, j] = stride
                stride *= sizes[cols[j]]
            self.offsets[c] = total
            total += stride
        self.size = total

    def codes(self, rows):
        rows = np.ascontiguousarray(rows, dtype=np.int64).reshape(-1, len(self.model.parameters))
        return kernels.tuple_codes(rows, self.combos, self.strides, self.offsets)

    def mask_of(self, rows):
        mask = np.zeros(self.size, dtype=bool)
        if len(rows):
            mask[self.codes(rows).ravel()] = True
        return mask

    def decode(self, code):
        c = int(np.searchsorted(self.offsets, code, side="right")) - 1
        rest = int(code - self.offsets[c])
        out = []
        for j, col in enumerate(self.combos[c]):
            idx, rest = divmod(rest, int(self.strides[c, j]))
            p = self.model.parameters[col]
            out.append((p.name, p.values[idx]))
        return tuple(out)


def realizable_tuples(model, strength, cap=DEFAULT_CAP):
    """Every ``strength``-wise partial assignment that extends to a legal vector."""
    space = TupleSpace(model, strength)
    mask = space.mask_of(legal_rows(model, cap))
    return {space.decode(code) for code in np.flatnonzero(mask)}


def generate_covering_array(model, strength, seed=0, pool_size=1000, cap=DEFAULT_CAP):
    """Greedy one-test-at-a-time covering array.

    Each step scores a candidate pool by the number of still-uncovered tuples
    it would cover and keeps the best (lowest lexicographic index on ties).
    When the legal set fits in ``pool_size`` the pool is the whole legal set;
    otherwise it is a seeded sample plus the first legal completion of the
    lowest uncovered tuple, so every step makes progress.
    """
    space = TupleSpace(model, strength)
    legal = legal_rows(model, cap)
    if len(legal) == 0:
        raise InputError("model is unsatisfiable: no legal test vector exists")
    rng = np.random.default_rng(seed)
    legal_codes = space.codes(legal)
    uncovered = np.zeros(space.size, dtype=bool)
    uncovered[legal_codes.ravel()] = True
    chosen = []
    while uncovered.any():
        if len(legal) <= pool_size:
            pool = np.arange(len(legal))
        else:
            target = int(np.flatnonzero(uncovered)[0])
            hits = np.flatnonzero((legal_codes == target).any(axis=1))
            sample = rng.choice(len(legal), size=pool_size - 1, replace=False)
            pool = np.unique(np.concatenate([sample, hits[:1]]))
        scores = kernels.tuple_scores(legal[pool], space.combos, space.strides, space.offsets, uncovered)
        best = int(pool[int(np.argmax(scores))])
        chosen.append(best)
        uncovered[legal_codes[best]] = False
    return [model.decode(legal[i]) for i in chosen]


def _check_tests(model, tests):
    rows = []
    for idx, vec in enumerate(tests):
        try:
            row = model.encode(vec)
        except InputError as exc:
            raise InputError(f"test #{idx}: {exc}") from None
        if not model.is_legal(vec):
            raise InputError(f"test #{idx} {vec} violates a model constraint")
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(model.parameters))


def interaction_coverage(model, strength, tests, cap=DEFAULT_CAP):
    """Fraction of realizable ``strength``-wise tuples present in ``tests``."""
    space = TupleSpace(model, strength)
    rows = _check_tests(model, tests)
    realizable = space.mask_of(legal_rows(model, cap))
    total = int(realizable.sum())
    if total == 0:
        return 1.0
    hit = space.mask_of(rows) & realizable
    return int(hit.sum()) / total
