"""Sum-of-squares programs compiled to block SDPs.

A constraint has the Putinar-style form::

    base + sum_v  t_v * poly_v  -  sum_k  sigma_k * k_k   in  Sigma[support]

where ``t_v`` are decision scalars (free or nonnegative), ``sigma_k`` are
SOS multipliers with a Gram parametrisation, and ``k_k`` are the
polynomials describing the domain ``{k_k >= 0}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .. import linalg
from ..polyalg import Monomial, Polynomial, grlex_key, mono_mul, monomial
from .sdp import SdpProblem, SdpSolution, SdpStatus, solve_sdp

RESIDUAL_TOL = 1e-7
PSD_SHIFT = 1e-9


class SosInfeasible(Exception):
    """The SDP behind an SOS program was certified infeasible."""


class SosNotProven(Exception):
    """The solver stopped without a verdict; treat as 'not proven'."""


def gram_basis(nvars: int, degree: int, support: Sequence[int] | None = None) -> list[Monomial]:
    """Monomials of degree <= degree/2 in the support variables, grlex order."""
    if degree % 2:
        raise ValueError(f"Gram basis needs an even degree, got {degree}")
    variables = sorted(range(nvars) if support is None else support)
    out = []
    for d in range(degree // 2 + 1):
        for combo in combinations_with_replacement(variables, d):
            e: dict = {}
            for v in combo:
                e[v] = e.get(v, 0) + 1
            out.append(monomial(e))
    out.sort(key=lambda m: grlex_key(m, nvars))
    return out


def gram_poly(basis: Sequence[Monomial], Q: np.ndarray, nvars: int) -> Polynomial:
    """z^T Q z for the monomial vector ``basis``."""
    terms: dict = {}
    n = len(basis)
    for a in range(n):
        for b in range(n):
            if Q[a, b] == 0.0:
                continue
            m = mono_mul(basis[a], basis[b])
            terms[m] = terms.get(m, 0.0) + Q[a, b]
    return Polynomial(terms, nvars)


@dataclass
class GramCertificate:
    basis: list
    Q: np.ndarray
    target: Polynomial
    residual: Polynomial

    @classmethod
    def build(cls, target: Polynomial, basis, Q) -> "GramCertificate":
        Q = 0.5 * (np.asarray(Q, float) + np.asarray(Q, float).T)
        return cls(list(basis), Q, target, target - gram_poly(basis, Q, target.nvars))

    def residual_ok(self, tol: float = RESIDUAL_TOL) -> bool:
        return self.residual.max_abs_coef() <= tol * (1.0 + self.target.max_abs_coef())

    def psd_ok(self, shift: float = PSD_SHIFT) -> bool:
        try:
            linalg.cholesky(self.Q + shift * np.eye(len(self.Q)))
        except linalg.NotPositiveSemidefinite:
            return False
        return True

    def verify(self, tol: float = RESIDUAL_TOL) -> bool:
        """Re-check from scratch: rebuild z^T Q z and factor Q."""
        rebuilt = self.target - gram_poly(self.basis, self.Q, self.target.nvars)
        ok_res = rebuilt.max_abs_coef() <= tol * (1.0 + self.target.max_abs_coef())
        return ok_res and self.psd_ok()

    def to_dict(self) -> dict:
        return {
            "basis": [[list(t) for t in m] for m in self.basis],
            "Q": self.Q.tolist(),
            "residual_max": self.residual.max_abs_coef(),
        }


@dataclass
class _Scalar:
    name: str
    nonneg: bool
    cost: float


@dataclass
class _Multiplier:
    domain: Polynomial
    degree: int | None
    support: tuple


@dataclass
class _Constraint:
    base: Polynomial
    linear: dict
    multipliers: list
    support: tuple
    name: str


@dataclass
class SosResult:
    values: dict
    objective: float
    certificates: list  # one GramCertificate per constraint
    multipliers: list  # per constraint: list of (sigma polynomial, GramCertificate)
    sdp: SdpSolution = field(repr=False)

    def __getitem__(self, name):
        return self.values[name]


def default_multiplier_degree(main_degree: int, domain_degree: int) -> int:
    """deg(sigma) so that deg(sigma * k) reaches the main degree; even, >= 0."""
    d = max(0, main_degree - domain_degree)
    return d + (d % 2)


class SosProgram:
    """Builder for SOS programs with decision scalars and SOS multipliers."""

    def __init__(self, nvars: int):
        self.nvars = nvars
        self.scalars: list[_Scalar] = []
        self.constraints: list[_Constraint] = []

    def scalar(self, name: str, nonneg: bool = False, cost: float = 0.0) -> str:
        if any(s.name == name for s in self.scalars):
            raise ValueError(f"duplicate scalar {name!r}")
        self.scalars.append(_Scalar(name, nonneg, float(cost)))
        return name

    def add_sos(
        self,
        base: Polynomial,
        linear: dict | None = None,
        multipliers: Sequence[tuple] = (),
        support: Sequence[int] | None = None,
        name: str = "",
    ) -> int:
        """Require ``base + sum t*poly - sum sigma*k`` to be SOS.

        ``multipliers`` holds ``(k, degree)`` or ``(k, degree, support)``
        tuples; ``degree=None`` picks :func:`default_multiplier_degree`.
        """
        linear = dict(linear or {})
        known = {s.name for s in self.scalars}
        for v, p in linear.items():
            if v not in known:
                raise KeyError(f"unknown scalar {v!r}")
            if p.nvars != self.nvars:
                raise ValueError("polynomial dimension mismatch")
        if base.nvars != self.nvars:
            raise ValueError("polynomial dimension mismatch")
        sup = tuple(sorted(range(self.nvars) if support is None else support))
        mults = []
        for entry in multipliers:
            k, deg = entry[0], entry[1]
            msup = tuple(sorted(entry[2])) if len(entry) > 2 else sup
            if deg is not None and deg % 2:
                raise ValueError("multiplier degree must be even")
            mults.append(_Multiplier(k, deg, msup))
        self.constraints.append(_Constraint(base, linear, mults, sup, name))
        return len(self.constraints) - 1

    # -- compilation --------------------------------------------------
    def _degrees(self, con: _Constraint):
        main = max([con.base.degree] + [p.degree for p in con.linear.values()] + [0])
        mdeg = []
        for mu in con.multipliers:
            d = mu.degree if mu.degree is not None else default_multiplier_degree(main, mu.domain.degree)
            mdeg.append(d)
        total = max([main] + [d + mu.domain.degree for d, mu in zip(mdeg, con.multipliers)])
        total += total % 2
        return total, mdeg

    def compile(self):
        prob = SdpProblem()
        scalar_slot = {}
        for s in self.scalars:
            if s.nonneg:
                scalar_slot[s.name] = ("block", prob.add_block(1))
            else:
                scalar_slot[s.name] = ("free", prob.add_free())
        layout = []
        for con in self.constraints:
            total, mdeg = self._degrees(con)
            basis0 = gram_basis(self.nvars, total, con.support)
            blk0 = prob.add_block(len(basis0))
            rows: dict[Monomial, list] = {}
            free_rows: dict[Monomial, list] = {}

            def row(m):
                if m not in rows:
                    rows[m] = []
                    free_rows[m] = []
                return rows[m]

            n0 = len(basis0)
            for a in range(n0):
                for b in range(a, n0):
                    row(mono_mul(basis0[a], basis0[b])).append((blk0, a, b, 1.0 if a == b else 2.0))
            mlayout = []
            for mu, d in zip(con.multipliers, mdeg):
                zb = gram_basis(self.nvars, d, mu.support)
                blk = prob.add_block(len(zb))
                kt = list(mu.domain.terms.items())
                for a in range(len(zb)):
                    for b in range(a, len(zb)):
                        ab = mono_mul(zb[a], zb[b])
                        w = 1.0 if a == b else 2.0
                        for tm, tc in kt:
                            row(mono_mul(ab, tm)).append((blk, a, b, w * tc))
                mlayout.append((blk, zb))
            for v, p in con.linear.items():
                kind, slot = scalar_slot[v]
                for m, c in p.terms.items():
                    row(m)
                    if kind == "block":
                        rows[m].append((slot, 0, 0, -c))
                    else:
                        free_rows[m].append((slot, -c))
            for m in con.base.terms:
                row(m)
            for m in sorted(rows, key=lambda mm: grlex_key(mm, self.nvars)):
                prob.add_constraint(rows[m], free_rows[m], con.base.coef(m))
            layout.append((blk0, basis0, mlayout))
        obj_b, obj_f = [], []
        for s in self.scalars:
            if s.cost:
                kind, slot = scalar_slot[s.name]
                if kind == "block":
                    obj_b.append((slot, 0, 0, s.cost))
                else:
                    obj_f.append((slot, s.cost))
        prob.set_objective(obj_b, obj_f)
        return prob, scalar_slot, layout

    def solve(self, feas_tol: float = 1e-7, max_iter: int = 200) -> SosResult:
        prob, slots, layout = self.compile()
        sol = solve_sdp(prob, feas_tol=feas_tol, max_iter=max_iter)
        if sol.status is SdpStatus.INFEASIBLE:
            raise SosInfeasible("SOS program infeasible")
        if sol.status is not SdpStatus.OPTIMAL:
            raise SosNotProven(f"solver stopped: {sol.status.value}")
        values = {}
        for s in self.scalars:
            kind, slot = slots[s.name]
            values[s.name] = float(sol.blocks[slot][0, 0]) if kind == "block" else float(sol.free[slot])
        certs, mults = [], []
        for con, (blk0, basis0, mlayout) in zip(self.constraints, layout):
            sigmas = []
            target = con.base
            for v, p in con.linear.items():
                target = target + p * values[v]
            for mu, (blk, zb) in zip(con.multipliers, mlayout):
                Qs = sol.blocks[blk]
                sig = gram_poly(zb, Qs, self.nvars)
                sigmas.append((sig, GramCertificate.build(sig, zb, Qs)))
                target = target - sig * mu.domain
            certs.append(GramCertificate.build(target, basis0, sol.blocks[blk0]))
            mults.append(sigmas)
        return SosResult(values, sol.objective, certs, mults, sol)


def prove_sos(p: Polynomial, support: Sequence[int] | None = None, **kw) -> GramCertificate:
    """Find a Gram certificate for ``p`` or raise SosInfeasible/SosNotProven."""
    if p.degree % 2 and not p.is_zero():
        raise SosInfeasible(f"odd degree {p.degree} polynomial cannot be SOS")
    if support is not None and not p.variables() <= set(support):
        raise ValueError("polynomial uses variables outside the support")
    scale = p.max_abs_coef() or 1.0
    prog = SosProgram(p.nvars)
    prog.add_sos(p * (1.0 / scale), support=support)
    res = prog.solve(**kw)
    c0 = res.certificates[0]
    cert = GramCertificate.build(p, c0.basis, c0.Q * scale)
    if not cert.verify():
        raise SosNotProven("solver output failed independent re-verification")
    return cert
