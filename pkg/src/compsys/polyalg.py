"""Sparse multivariate polynomials with float coefficients.

A monomial is a sorted tuple of ``(variable, power)`` pairs with no zero
powers, so the constant monomial is ``()``.  A :class:`Polynomial` maps
monomials to coefficients and carries the number of ambient variables.
Terms are kept in canonical form: coefficients with magnitude below
:data:`PRUNE_TOL` are dropped, and iteration / text output follow graded
lexicographic order.

Text form (1-based variable names)::

    1.5 * x1^2 x2 + -0.25 * x3 + 2.0
"""

from __future__ import annotations

import re
from functools import reduce
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-14

Monomial = tuple  # tuple[tuple[int, int], ...]

ONE: Monomial = ()


class DimensionMismatch(ValueError):
    pass


def monomial(exponents: Mapping[int, int] | Sequence[int]) -> Monomial:
    """Build a canonical monomial from a dense exponent list or a sparse map."""
    if isinstance(exponents, Mapping):
        items = exponents.items()
    else:
        items = enumerate(exponents)
    out = []
    for var, power in items:
        if power < 0:
            raise ValueError("negative exponent")
        if power:
            out.append((int(var), int(power)))
    return tuple(sorted(out))


def mono_degree(m: Monomial) -> int:
    return sum(p for _, p in m)


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for v, p in b:
        d[v] = d.get(v, 0) + p
    return tuple(sorted(d.items()))


def mono_dense(m: Monomial, nvars: int) -> tuple[int, ...]:
    e = [0] * nvars
    for v, p in m:
        e[v] = p
    return tuple(e)


def grlex_key(m: Monomial, nvars: int):
    """Sort key: total degree first, then lexicographic with x1 > x2 > ..."""
    return (mono_degree(m), tuple(-p for p in mono_dense(m, nvars)))


def mono_vars(m: Monomial) -> set[int]:
    return {v for v, _ in m}


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` real variables."""

    __slots__ = ("_terms", "nvars", "_hash")

    def __init__(self, terms: Mapping[Monomial, float] | None = None, nvars: int = 0):
        self.nvars = int(nvars)
        clean = {}
        if terms:
            for m, c in terms.items():
                c = float(c)
                if abs(c) < PRUNE_TOL:
                    continue
                for v, _ in m:
                    if not 0 <= v < self.nvars:
                        raise DimensionMismatch(
                            f"variable index {v} outside 0..{self.nvars - 1}"
                        )
                clean[m] = c
        self._terms = clean
        self._hash = None

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, c: float, nvars: int) -> "Polynomial":
        return cls({ONE: c}, nvars)

    @classmethod
    def var(cls, k: int, nvars: int) -> "Polynomial":
        return cls({((k, 1),): 1.0}, nvars)

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def quadratic_form(cls, P, variables: Sequence[int], nvars: int) -> "Polynomial":
        """x_S^T P x_S on the listed variables."""
        P = np.asarray(P, dtype=float)
        terms: dict = {}
        for a, va in enumerate(variables):
            for b, vb in enumerate(variables):
                m = mono_mul(((va, 1),), ((vb, 1),))
                terms[m] = terms.get(m, 0.0) + P[a, b]
        return cls(terms, nvars)

    # -- basic access -------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        """(monomial, coef) pairs in graded-lex order."""
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0], self.nvars))

    def coef(self, m: Monomial) -> float:
        return self._terms.get(m, 0.0)

    def __len__(self):
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self._terms:
            return -1
        return max(mono_degree(m) for m in self._terms)

    def variables(self) -> set[int]:
        out: set[int] = set()
        for m in self._terms:
            out |= mono_vars(m)
        return out

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    # -- arithmetic ---------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise DimensionMismatch(f"nvars {self.nvars} != {other.nvars}")

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        return Polynomial.constant(float(other), self.nvars)

    def __add__(self, other):
        other = self._lift(other)
        t = dict(self._terms)
        for m, c in other._terms.items():
            t[m] = t.get(m, 0.0) + c
        return Polynomial(t, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self._terms.items()}, self.nvars)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            s = float(other)
            return Polynomial({m: s * c for m, c in self._terms.items()}, self.nvars)
        self._check(other)
        t: dict = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = mono_mul(ma, mb)
                t[m] = t.get(m, 0.0) + ca * cb
        return Polynomial(t, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- calculus / evaluation ----------------------------------------
    def diff(self, k: int) -> "Polynomial":
        t: dict = {}
        for m, c in self._terms.items():
            d = dict(m)
            p = d.get(k, 0)
            if not p:
                continue
            if p == 1:
                del d[k]
            else:
                d[k] = p - 1
            mm = tuple(sorted(d.items()))
            t[mm] = t.get(mm, 0.0) + c * p
        return Polynomial(t, self.nvars)

    def grad(self) -> list["Polynomial"]:
        return [self.diff(k) for k in range(self.nvars)]

    def __call__(self, x) -> float:
        return self.eval(x)

    def eval(self, x) -> float:
        if len(x) != self.nvars:
            raise DimensionMismatch(f"point has {len(x)} entries, need {self.nvars}")
        total = 0.0
        for m, c in self._terms.items():
            val = c
            for v, p in m:
                val *= x[v] ** p
            total += val
        return float(total)

    def substitute(self, shift) -> "Polynomial":
        """Return q with q(x) = p(x + shift)."""
        if len(shift) != self.nvars:
            raise DimensionMismatch(f"shift has {len(shift)} entries, need {self.nvars}")
        n = self.nvars
        lin = [Polynomial.var(k, n) + float(shift[k]) for k in range(n)]
        cache: dict = {}

        def power(k, p):
            key = (k, p)
            if key not in cache:
                cache[key] = lin[k] ** p
            return cache[key]

        out = Polynomial.zero(n)
        for m, c in self._terms.items():
            term = Polynomial.constant(c, n)
            for v, p in m:
                term = term * power(v, p)
            out = out + term
        return out

    def remap(self, mapping: Mapping[int, int], nvars: int) -> "Polynomial":
        """Rename variables via ``mapping`` (old index -> new index)."""
        t: dict = {}
        for m, c in self._terms.items():
            mm = monomial({mapping[v]: p for v, p in m})
            t[mm] = t.get(mm, 0.0) + c
        return Polynomial(t, nvars)

    def split_by(self, variables: Iterable[int]) -> tuple["Polynomial", "Polynomial"]:
        """Split into (terms touching ``variables``, terms free of them)."""
        vs = set(variables)
        touch, free = {}, {}
        for m, c in self._terms.items():
            (touch if mono_vars(m) & vs else free)[m] = c
        return Polynomial(touch, self.nvars), Polynomial(free, self.nvars)

    def drop_small(self, tol: float) -> "Polynomial":
        return Polynomial({m: c for m, c in self._terms.items() if abs(c) > tol}, self.nvars)

    # -- text ---------------------------------------------------------
    def to_str(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.items():
            if not m:
                parts.append(repr(c))
                continue
            factors = " ".join(f"x{v + 1}" if p == 1 else f"x{v + 1}^{p}" for v, p in m)
            parts.append(f"{c!r} * {factors}")
        return " + ".join(parts)

    __str__ = to_str

    def __repr__(self):
        return f"Polynomial({self.to_str()!r}, nvars={self.nvars})"


_FACTOR = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def parse(text: str, nvars: int) -> Polynomial:
    """Inverse of :meth:`Polynomial.to_str`; tolerates ``*`` between factors."""
    text = text.strip()
    if text in ("", "0"):
        return Polynomial.zero(nvars)
    # split on '+' that is not part of an exponent like 1e+05
    chunks = re.split(r"(?<![eE])\+", text)
    terms: dict = {}
    for chunk in chunks:
        chunk = chunk.strip()
        if not chunk:
            raise ValueError(f"empty term in {text!r}")
        head, _, rest = chunk.partition("*")
        head = head.strip()
        coef = 1.0
        factors_txt = rest
        if head.lstrip("-").startswith("x"):
            # term without explicit coefficient
            factors_txt = chunk
            if head.startswith("-"):
                coef = -1.0
                factors_txt = chunk.lstrip()[1:]
        else:
            coef = float(head)
        exps: dict = {}
        for tok in factors_txt.replace("*", " ").split():
            mt = _FACTOR.match(tok)
            if not mt:
                raise ValueError(f"bad factor {tok!r} in {text!r}")
            v = int(mt.group(1)) - 1
            if not 0 <= v < nvars:
                raise DimensionMismatch(f"x{v + 1} outside {nvars} variables")
            exps[v] = exps.get(v, 0) + int(mt.group(2) or 1)
        m = monomial(exps)
        terms[m] = terms.get(m, 0.0) + coef
    return Polynomial(terms, nvars)


def combine(op: str, a: Polynomial, b) -> Polynomial:
    """Functional form of the ring operations: add, sub, mul, scale."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        if not isinstance(b, Polynomial):
            raise TypeError("mul expects a Polynomial; use 'scale' for scalars")
        return a * b
    if op == "scale":
        return a * float(b)
    raise ValueError(f"unknown op {op!r}")


def grad(p: Polynomial) -> list[Polynomial]:
    return p.grad()


def dot(ps: Sequence[Polynomial], qs: Sequence[Polynomial]) -> Polynomial:
    if len(ps) != len(qs):
        raise DimensionMismatch("vector lengths differ")
    return reduce(lambda acc, pq: acc + pq[0] * pq[1], zip(ps, qs), Polynomial.zero(ps[0].nvars))


def monomials_up_to(variables: Sequence[int], degree: int) -> list[Monomial]:
    """All monomials in ``variables`` of total degree <= ``degree`` (grlex order)."""
    from itertools import combinations_with_replacement

    out = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(sorted(variables), d):
            e: dict = {}
            for v in combo:
                e[v] = e.get(v, 0) + 1
            out.append(monomial(e))
    nv = max(variables, default=-1) + 1
    out.sort(key=lambda m: grlex_key(m, nv))
    return out


class CompiledPolys:
    """Vectorised evaluator for a list of polynomials over the same variables.

    ``evaluate(X)`` takes a batch of points of shape (S, nvars) and returns
    an (S, len(polys)) array.
    """

    def __init__(self, polys: Sequence[Polynomial], nvars: int | None = None):
        nvars = polys[0].nvars if nvars is None and polys else (nvars or 0)
        monos: dict = {}
        for p in polys:
            for m in p._terms:
                monos.setdefault(m, len(monos))
        self.nvars = nvars
        self.n_out = len(polys)
        nm = max(len(monos), 1)
        width = max((len(m) for m in monos), default=0)
        width = max(width, 1)
        self.maxdeg = max((p for m in monos for _, p in m), default=0)
        self.var_idx = np.zeros((nm, width), dtype=np.intp)
        self.pow_idx = np.zeros((nm, width), dtype=np.intp)
        for m, r in monos.items():
            for k, (v, p) in enumerate(m):
                self.var_idx[r, k] = v
                self.pow_idx[r, k] = p
        self.coef = np.zeros((nm, len(polys)))
        for col, p in enumerate(polys):
            for m, c in p._terms.items():
                self.coef[monos[m], col] += c

    def monomials(self, X: np.ndarray) -> np.ndarray:
        S = X.shape[0]
        pw = np.empty((S, self.nvars, self.maxdeg + 1))
        pw[:, :, 0] = 1.0
        for k in range(1, self.maxdeg + 1):
            pw[:, :, k] = pw[:, :, k - 1] * X
        vals = pw[:, self.var_idx[:, 0], self.pow_idx[:, 0]]
        for k in range(1, self.var_idx.shape[1]):
            vals = vals * pw[:, self.var_idx[:, k], self.pow_idx[:, k]]
        return vals

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.monomials(X) @ self.coef

