"""Boolean constraint expressions over ``param=value`` atoms.

Grammar (loosest binding first)::

    expr    := or ( "->" expr )?
    or      := and ( "|" and )*
    and     := unary ( "&" unary )*
    unary   := "!" unary | "(" expr ")" | NAME "=" NAME

``->`` is right-associative. Names may contain letters, digits and ``_ . : + /``.
"""

import re
from dataclasses import dataclass

import numpy as np

from meshchaos.errors import InputError

_TOKEN = re.compile(r"\s*(->|[!&|()=]|[\w.:+/]+)")


class Expr:
    def evaluate(self, assignment):
        raise NotImplementedError

    def mask(self, columns):
        """Vectorised evaluation; ``columns[param]`` is an array of value labels per row."""
        raise NotImplementedError

    def atoms(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Atom(Expr):
    param: str
    value: str

    def evaluate(self, assignment):
        return assignment.get(self.param) == self.value

    def mask(self, columns):
        return columns[self.param] == self.value

    def atoms(self):
        return [self]

    def __str__(self):
        return f"{self.param}={self.value}"


@dataclass(frozen=True)
class Not(Expr):
    inner: Expr

    def evaluate(self, assignment):
        return not self.inner.evaluate(assignment)

    def mask(self, columns):
        return ~self.inner.mask(columns)

    def atoms(self):
        return self.inner.atoms()

    def __str__(self):
        if isinstance(self.inner, Atom):
            return f"!{self.inner}"
        return f"!({self.inner})"


@dataclass(frozen=True)
class And(Expr):
    items: tuple

    def evaluate(self, assignment):
        return all(x.evaluate(assignment) for x in self.items)

    def mask(self, columns):
        out = self.items[0].mask(columns)
        for x in self.items[1:]:
            out = out & x.mask(columns)
        return out

    def atoms(self):
        return [a for x in self.items for a in x.atoms()]

    def __str__(self):
        return " & ".join(_wrap(x, (Or, Implies)) for x in self.items)


@dataclass(frozen=True)
class Or(Expr):
    items: tuple

    def evaluate(self, assignment):
        return any(x.evaluate(assignment) for x in self.items)

    def mask(self, columns):
        out = self.items[0].mask(columns)
        for x in self.items[1:]:
            out = out | x.mask(columns)
        return out

    def atoms(self):
        return [a for x in self.items for a in x.atoms()]

    def __str__(self):
        return " | ".join(_wrap(x, (Implies,)) for x in self.items)


@dataclass(frozen=True)
class Implies(Expr):
    premise: Expr
    conclusion: Expr

    def evaluate(self, assignment):
        return (not self.premise.evaluate(assignment)) or self.conclusion.evaluate(assignment)

    def mask(self, columns):
        return ~self.premise.mask(columns) | self.conclusion.mask(columns)

    def atoms(self):
        return self.premise.atoms() + self.conclusion.atoms()

    def __str__(self):
        return f"{_wrap(self.premise, (Implies,))} -> {self.conclusion}"


def _wrap(expr, loose):
    text = str(expr)
    return f"({text})" if isinstance(expr, loose) else text


def conjunction(atoms):
    atoms = tuple(atoms)
    return atoms[0] if len(atoms) == 1 else And(atoms)


def _tokenize(text):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise InputError(f"unexpected character {text[pos:].strip()[:1]!r} in {text!r}")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            want = expected or "a token"
            raise InputError(f"expected {want} in {self.text!r}, got {tok!r}")
        self.pos += 1
        return tok

    def parse(self):
        if not self.tokens:
            raise InputError("empty constraint expression")
        expr = self.expr()
        if self.peek() is not None:
            raise InputError(f"trailing input {self.peek()!r} in {self.text!r}")
        return expr

    def expr(self):
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.expr())
        return left

    def disjunction(self):
        items = [self.conjunction()]
        while self.peek() == "|":
            self.take()
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self):
        items = [self.unary()]
        while self.peek() == "&":
            self.take()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self):
        tok = self.peek()
        if tok == "!":
            self.take()
            return Not(self.unary())
        if tok == "(":
            self.take()
            inner = self.expr()
            self.take(")")
            return inner
        name = self.take()
        if name in ("->", "&", "|", ")", "="):
            raise InputError(f"expected parameter name in {self.text!r}, got {name!r}")
        self.take("=")
        value = self.take()
        if value in ("->", "&", "|", "(", ")", "=", "!"):
            raise InputError(f"expected value after {name}= in {self.text!r}")
        return Atom(name, value)


def parse_expr(text):
    """Parse a constraint expression; raises ``InputError`` on malformed text."""
    return _Parser(text).parse()


def label_columns(params, rows):
    """Map each parameter name to the array of value labels in ``rows`` (index matrix)."""
    return {p.name: np.asarray(p.values, dtype=object)[rows[:, j]] for j, p in enumerate(params)}
