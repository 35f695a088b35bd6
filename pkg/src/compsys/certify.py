"""Stability certificates for polynomial networks.

Per subsystem a quadratic Lyapunov function is computed from the
linearisation and scaled so that its unit level set is a certified
region of attraction.  Over the domain ``D = {V_j <= gamma_j}`` each row of
a Metzler comparison matrix ``A`` is found by an SOS program, giving
``dV_i/dt <= sum_j a_ij V_j`` on ``D``.  Each coupling gets a power-flow
bound ``|grad V_i . g_ij| <= u . v`` with ``u >= 0`` supported on the two
endpoints.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .netmodel import NetworkModel, SubsystemDef
from .polyalg import Polynomial, dot
from .sdpsos.sos import GramCertificate, SosInfeasible, SosNotProven, SosProgram

GAMMA_CAP = 10.0
GAMMA_REL_RES = 1e-2
GAMMA_FLOOR = 1e-4
STRICT_MARGIN = 1e-6
P_MIN_EIG = 1e-8
OFFDIAG_CLIP = 1e-9


class LinearizationNotStable(ValueError):
    pass


class NoCertifiableLevel(RuntimeError):
    pass


class Infeasible(SosInfeasible):
    """SOS program infeasible at the requested domain; shrink Gamma."""


class NotProven(SosNotProven):
    """Solver stopped without a verdict."""


@dataclass
class LyapunovCertificate:
    subsystem: int
    P: np.ndarray
    gamma_max: float | None = None
    evidence: GramCertificate | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def scaled(self) -> bool:
        return self.gamma_max is not None

    @property
    def V(self) -> Polynomial:
        return Polynomial.quadratic_form(self.P, range(self.dim), self.dim)

    def lift(self, variables: Sequence[int], nvars: int) -> Polynomial:
        """V placed on ``variables`` of an ``nvars``-variable ring."""
        return Polynomial.quadratic_form(self.P, variables, nvars)

    def value(self, x) -> np.ndarray:
        """V at one point (shape (dim,)) or a batch (shape (S, dim))."""
        x = np.asarray(x, dtype=float)
        return np.einsum("...a,ab,...b->...", x, self.P, x)

    def to_dict(self) -> dict:
        return {"id": self.subsystem, "P": self.P.tolist(), "gamma_max": self.gamma_max}


@dataclass
class RowEvidence:
    node: int
    nodes: list
    layout: dict
    vdot: Polynomial
    values: list
    certificate: GramCertificate
    multipliers: list

    def verify(self) -> bool:
        return self.certificate.verify() and all(c.verify() for _, c in self.multipliers)

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "neighbors": self.nodes,
            "gram": self.certificate.to_dict(),
            "multipliers": [c.to_dict() for _, c in self.multipliers],
        }


@dataclass
class ComparisonCertificate:
    A: np.ndarray
    Gamma: np.ndarray
    hurwitz: linalg.HurwitzVerdict
    evidence: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "Gamma": self.Gamma.tolist(),
            "hurwitz": self.hurwitz.value,
            "rows": [e.to_dict() for e in self.evidence if e is not None],
        }


@dataclass
class FlowBound:
    target: int
    source: int
    u: np.ndarray
    phi: Polynomial
    layout: dict
    certificates: list = field(default_factory=list, repr=False)

    @property
    def edge(self) -> tuple[int, int]:
        return (self.target, self.source)

    def verify(self) -> bool:
        return all(c.verify() for c in self.certificates)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "source": self.source,
            "u": self.u.tolist(),
            "grams": [c.to_dict() for c in self.certificates],
        }


# -- isolated Lyapunov functions --------------------------------------
def linearization(f: Sequence[Polynomial]) -> np.ndarray:
    n = len(f)
    return np.array([[p.diff(k).coef(()) for k in range(n)] for p in f])


def lyapunov_solve(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """P with A^T P + P A = -Q via the Kronecker-vectorised linear system."""
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    P = linalg.solve_linear(K, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def isolated_lf(sub: SubsystemDef | Sequence[Polynomial], subsystem: int | None = None) -> LyapunovCertificate:
    f = sub.f if isinstance(sub, SubsystemDef) else list(sub)
    sid = sub.id if isinstance(sub, SubsystemDef) else (subsystem or 0)
    A = linearization(f)
    off = A - np.diag(np.diag(A))
    if np.all(off >= 0) and not linalg.metzler_hurwitz(A).is_hurwitz:
        raise LinearizationNotStable(f"subsystem {sid}: Metzler linearisation is not Hurwitz")
    try:
        P = lyapunov_solve(A, np.eye(len(f)))
        lo = linalg.sym_eigen(P)[0][0]
    except linalg.SingularMatrix as exc:
        raise LinearizationNotStable(f"subsystem {sid}: Lyapunov equation singular") from exc
    if lo < P_MIN_EIG:
        raise LinearizationNotStable(f"subsystem {sid}: P not positive definite (min eig {lo:.3e})")
    return LyapunovCertificate(sid, P)


def _level_program(V: Polynomial, f: Sequence[Polynomial], gamma: float) -> GramCertificate | None:
    n = V.nvars
    vdot = dot(V.grad(), list(f))
    sq = dot([Polynomial.var(k, n) for k in range(n)], [Polynomial.var(k, n) for k in range(n)])
    prog = SosProgram(n)
    prog.add_sos(-vdot - sq * STRICT_MARGIN, multipliers=[(Polynomial.constant(gamma, n) - V, None)])
    try:
        res = prog.solve()
    except (SosInfeasible, SosNotProven):
        return None
    cert = res.certificates[0]
    if not cert.verify() or not all(c.verify() for _, c in res.multipliers[0]):
        return None
    return cert


def roa_scale(
    cert: LyapunovCertificate,
    f: SubsystemDef | Sequence[Polynomial],
    gamma_cap: float = GAMMA_CAP,
    rel_res: float = GAMMA_REL_RES,
) -> LyapunovCertificate:
    """Largest certified level gamma (bisection) and V rescaled to V/gamma."""
    f = f.f if isinstance(f, SubsystemDef) else list(f)
    V = cert.V
    ev = _level_program(V, f, gamma_cap)
    if ev is not None:
        lo = gamma_cap
    else:
        hi, g = gamma_cap, 1.0
        while g >= GAMMA_FLOOR:
            ev = _level_program(V, f, g)
            if ev is not None:
                break
            hi, g = g, g / 2
        else:
            raise NoCertifiableLevel(f"subsystem {cert.subsystem}: no level down to {GAMMA_FLOOR}")
        lo = g
        while hi - lo > rel_res * lo:
            mid = 0.5 * (lo + hi)
            e = _level_program(V, f, mid)
            if e is None:
                hi = mid
            else:
                lo, ev = mid, e
    return LyapunovCertificate(cert.subsystem, cert.P / lo, lo, ev)


# -- neighbourhood polynomials -----------------------------------------
def local_layout(model: NetworkModel, nodes: Sequence[int]) -> tuple[dict, int]:
    """Consecutive local variable blocks for ``nodes`` in the given order."""
    layout, k = {}, 0
    for j in nodes:
        layout[j] = list(range(k, k + model.dim(j)))
        k += model.dim(j)
    return layout, k


def local_field(model: NetworkModel, i: int, layout: dict, nv: int, couplings: bool = True) -> list[Polynomial]:
    """f_i (+ sum of g_ij over sources present in ``layout``) in local variables."""
    fi = [p.remap(dict(enumerate(layout[i])), nv) for p in model.subsystems[i].f]
    if not couplings:
        return fi
    for c in model.couplings:
        if c.target == i and c.source in layout:
            g = local_coupling(model, c.target, c.source, layout, nv)
            fi = [a + b for a, b in zip(fi, g)]
    return fi


def local_coupling(model: NetworkModel, i: int, j: int, layout: dict, nv: int) -> list[Polynomial]:
    c = model.coupling(i, j)
    if c is None:
        raise KeyError(f"no coupling {i}<-{j}")
    mapping = dict(enumerate(layout[i] + layout[j]))
    return [p.remap(mapping, nv) for p in c.g]


def _check_gamma(Gamma, m: int) -> np.ndarray:
    G = np.broadcast_to(np.asarray(Gamma, dtype=float), (m,)).copy()
    if np.any(G <= 0) or np.any(G > 1):
        raise ValueError(f"Gamma entries must lie in (0, 1], got {G}")
    return G


# -- comparison matrix ----------------------------------------------
def cm_row(i: int, model: NetworkModel, lfs: Sequence[LyapunovCertificate], Gamma) -> tuple[np.ndarray, RowEvidence]:
    """Row i of the comparison matrix with its SOS evidence."""
    G = _check_gamma(Gamma, model.m)
    nodes = model.neighbors(i)
    layout, nv = local_layout(model, nodes)
    Vs = {j: lfs[j].lift(layout[j], nv) for j in nodes}
    vdot = dot([Vs[i].diff(k) for k in layout[i]], local_field(model, i, layout, nv))
    prog = SosProgram(nv)
    names = {}
    for j in nodes:
        names[j] = prog.scalar(f"a{j}", nonneg=(j != i), cost=1.0)
    mults = [(Polynomial.constant(G[j], nv) - Vs[j], None) for j in nodes]
    prog.add_sos(-vdot, linear={names[j]: Vs[j] for j in nodes}, multipliers=mults, name=f"row{i}")
    try:
        res = prog.solve()
    except SosInfeasible as exc:
        raise Infeasible(f"row {i}: comparison row infeasible at Gamma") from exc
    except SosNotProven as exc:
        raise NotProven(f"row {i}: {exc}") from exc
    row = np.zeros(model.m)
    for j in nodes:
        a = res[names[j]]
        if j != i and a < 0:
            if a < -OFFDIAG_CLIP:
                raise NotProven(f"row {i}: negative off-diagonal {a:.3e}")
            a = 0.0
        row[j] = a
    ev = RowEvidence(i, nodes, layout, vdot, [row[j] for j in nodes], res.certificates[0], res.multipliers[0])
    if not ev.verify():
        raise NotProven(f"row {i}: certificate failed re-verification")
    return row, ev


def assemble_cm(rows, Gamma) -> ComparisonCertificate:
    """Stack rows (arrays, or (array, evidence) pairs) and test Hurwitz-ness."""
    arrs, evs = [], []
    for r in rows:
        if isinstance(r, tuple):
            arrs.append(np.asarray(r[0], dtype=float))
            evs.append(r[1])
        else:
            arrs.append(np.asarray(r, dtype=float))
            evs.append(None)
    A = np.vstack(arrs) if arrs else np.zeros((0, 0))
    G = np.broadcast_to(np.asarray(Gamma, dtype=float), (A.shape[0],)).copy()
    return ComparisonCertificate(A, G, linalg.metzler_hurwitz(A), evs)


# -- power-flow bounds ------------------------------------------------
def flow_bound(edge: tuple[int, int], model: NetworkModel, lfs: Sequence[LyapunovCertificate], Gamma) -> FlowBound:
    """Certify |grad V_i . g_ij| <= u_i V_i + u_j V_j on D, minimising u_i + u_j."""
    i, j = edge
    G = _check_gamma(Gamma, model.m)
    layout, nv = local_layout(model, [i, j])
    Vi, Vj = lfs[i].lift(layout[i], nv), lfs[j].lift(layout[j], nv)
    phi = dot([Vi.diff(k) for k in layout[i]], local_coupling(model, i, j, layout, nv))
    u = np.zeros(model.m)
    if phi.is_zero():
        return FlowBound(i, j, u, phi, layout, [])
    prog = SosProgram(nv)
    prog.scalar("ui", nonneg=True, cost=1.0)
    prog.scalar("uj", nonneg=True, cost=1.0)
    mults = [(Polynomial.constant(G[i], nv) - Vi, None), (Polynomial.constant(G[j], nv) - Vj, None)]
    for sign in (-1.0, 1.0):
        prog.add_sos(phi * sign, linear={"ui": Vi, "uj": Vj}, multipliers=mults)
    try:
        res = prog.solve()
    except SosInfeasible as exc:
        raise Infeasible(f"edge {i}<-{j}: flow bound infeasible at Gamma") from exc
    except SosNotProven as exc:
        raise NotProven(f"edge {i}<-{j}: {exc}") from exc
    u[i], u[j] = max(res["ui"], 0.0), max(res["uj"], 0.0)
    certs = list(res.certificates) + [c for ms in res.multipliers for _, c in ms]
    fb = FlowBound(i, j, u, phi, layout, certs)
    if not fb.verify():
        raise NotProven(f"edge {i}<-{j}: certificate failed re-verification")
    return fb


# -- whole-network driver -------------------------------------------
def worker_count() -> int:
    try:
        cap = int(os.environ.get("COMPSYS_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def lyapunov_functions(model: NetworkModel) -> list[LyapunovCertificate]:
    """Scaled isolated Lyapunov functions for every subsystem."""
    return [roa_scale(isolated_lf(s), s) for s in model.subsystems]


def comparison_matrix(model: NetworkModel, lfs, Gamma, workers: int | None = None) -> ComparisonCertificate:
    G = _check_gamma(Gamma, model.m)
    with ThreadPoolExecutor(max_workers=workers or worker_count()) as ex:
        rows = list(ex.map(lambda i: cm_row(i, model, lfs, G), range(model.m)))
    return assemble_cm(rows, G)


def flow_bounds(model: NetworkModel, lfs, Gamma, workers: int | None = None) -> list[FlowBound]:
    G = _check_gamma(Gamma, model.m)
    with ThreadPoolExecutor(max_workers=workers or worker_count()) as ex:
        return list(ex.map(lambda e: flow_bound(e, model, lfs, G), model.edges))
