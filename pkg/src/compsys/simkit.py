"""Fixed-step simulation of networks and comparison systems, and
trajectory-level validation of the certificates.

All integrators are classical RK4 and vectorised over a batch of initial
conditions, so one call advances every sample in lockstep.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .netmodel import NetworkModel
from .polyalg import CompiledPolys

BLOWUP = 1e6
FLOW_REL_TOL = 1e-6
FLOW_ABS_TOL = 1e-6


class Blowup(RuntimeError):
    pass


def comparison_tolerance(dt: float) -> float:
    return 1e-6 + 10.0 * dt * dt


class _Evaluator:
    """Batched field evaluation plus Lyapunov values and edge powers."""

    def __init__(self, model: NetworkModel, lfs=None, edges: Sequence[tuple] | None = None):
        self.model = model
        self.field = model.compiled_field()
        self.slices = [model.state_slice(i) for i in range(model.m)]
        self.P = [np.asarray(lf.P, float) for lf in lfs] if lfs is not None else None
        self.edges = list(model.edges if edges is None else edges)
        gpolys = []
        for (i, j) in self.edges:
            gpolys.extend(model.local_to_global_g(model.coupling(i, j)))
        self.coupling = CompiledPolys(gpolys, model.n) if gpolys else None

    def f(self, X: np.ndarray) -> np.ndarray:
        return self.field.evaluate(X)

    def grads(self, X: np.ndarray) -> list[np.ndarray]:
        return [2.0 * X[:, s] @ P for s, P in zip(self.slices, self.P)]

    def v(self, X: np.ndarray) -> np.ndarray:
        if self.P is None:
            return np.zeros((X.shape[0], 0))
        return np.column_stack([np.einsum("sa,ab,sb->s", X[:, s], P, X[:, s]) for s, P in zip(self.slices, self.P)])

    def phi(self, X: np.ndarray) -> np.ndarray:
        if self.P is None or self.coupling is None:
            return np.zeros((X.shape[0], 0))
        G = self.coupling.evaluate(X)
        grads = self.grads(X)
        out = np.empty((X.shape[0], len(self.edges)))
        k = 0
        for e, (i, _) in enumerate(self.edges):
            d = grads[i].shape[1]
            out[:, e] = np.sum(grads[i] * G[:, k : k + d], axis=1)
            k += d
        return out


def _rk4_step(f, X, dt):
    k1 = f(X)
    k2 = f(X + 0.5 * dt * k1)
    k3 = f(X + 0.5 * dt * k2)
    k4 = f(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps(T: float, dt: float) -> int:
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    return int(round(T / dt))


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    edges: list
    halving_error: float | None = None

    def to_csv(self) -> str:
        n, m = self.x.shape[1], self.v.shape[1]
        head = ["t"] + [f"x{k + 1}" for k in range(n)] + [f"v{k + 1}" for k in range(m)]
        head += [f"phi_{i + 1}_{j + 1}" for i, j in self.edges]
        buf = io.StringIO()
        buf.write(",".join(head) + "\n")
        for row in np.column_stack([self.t, self.x, self.v, self.phi]):
            buf.write(",".join(repr(float(a)) for a in row) + "\n")
        return buf.getvalue()


def _run(ev: _Evaluator, x0: np.ndarray, dt: float, nsteps: int, record: bool = True):
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    xs = [X[0].copy()] if record else None
    for k in range(nsteps):
        X = _rk4_step(ev.f, X, dt)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > BLOWUP:
            raise Blowup(f"|x| exceeded {BLOWUP:g} at t = {(k + 1) * dt:.4g}")
        if record:
            xs.append(X[0].copy())
    return (np.array(xs) if record else None), X[0]


def integrate(model: NetworkModel, x0, T: float, dt: float, lfs=None, check: bool = True) -> Trajectory:
    """RK4 trajectory that records states alongside Lyapunov values and edge powers."""
    nsteps = _steps(T, dt)
    ev = _Evaluator(model, lfs)
    xs, xT = _run(ev, x0, dt, nsteps)
    err = None
    if check:
        _, xh = _run(ev, x0, dt / 2, 2 * nsteps, record=False)
        err = float(np.linalg.norm(xh - xT) / max(1.0, np.linalg.norm(xT)))
    t = np.arange(nsteps + 1) * dt
    return Trajectory(t, xs, ev.v(xs), ev.phi(xs), ev.edges, err)


def simulate_cs(A, r0, T: float, dt: float) -> np.ndarray:
    """r(t) on the grid for dr/dt = A r (rows are time points)."""
    A = np.asarray(A, dtype=float)
    nsteps = _steps(T, dt)
    r = np.asarray(r0, dtype=float).copy()
    out = np.empty((nsteps + 1, len(r)))
    out[0] = r
    f = lambda z: z @ A.T  # noqa: E731
    for k in range(nsteps):
        r = _rk4_step(f, r, dt)
        out[k + 1] = r
    return out


def _inv_sqrt(P: np.ndarray) -> np.ndarray:
    w, U = linalg.sym_eigen(P)
    return (U / np.sqrt(w)) @ U.T


def sample_level_set(lf, level: float, seed=None) -> np.ndarray:
    """Point on {V = level}: a uniform unit vector mapped through P^-1/2."""
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(lf.dim)
    z /= np.linalg.norm(z)
    return np.sqrt(level) * (_inv_sqrt(np.asarray(lf.P, float)) @ z)


def measure_flows(traj: Trajectory) -> dict:
    """psi_ij(0, T): trapezoid rule on |phi_ij(t)|."""
    return {e: float(np.trapezoid(np.abs(traj.phi[:, k]), traj.t)) for k, e in enumerate(traj.edges)}


@dataclass
class ValidationReport:
    n_samples: int
    seed: int
    T: float
    dt: float
    tol_cmp: float
    cmp_margin: list  # per node: max over samples and grid of V_i - r_i
    flow_margin: dict  # per edge: max of psi - bound*(1+rel)
    cmp_violations: int
    flow_violations: int
    exits: int
    blowups: int
    tail_bound: float
    diagnostics: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.cmp_violations == 0 and self.flow_violations == 0 and self.blowups == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flow_margin"] = {f"{i}<-{j}": v for (i, j), v in sorted(self.flow_margin.items())}
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def draw_initial_states(model: NetworkModel, lfs, Gamma, n_samples: int, rng, levels=None):
    """Initial states with V_i(x_i) = level_i; levels uniform in (0, Gamma_i] unless given."""
    G = np.broadcast_to(np.asarray(Gamma, float), (model.m,))
    X0 = np.zeros((n_samples, model.n))
    V0 = np.zeros((n_samples, model.m))
    for s in range(n_samples):
        lv = G * (1.0 - rng.random(model.m)) if levels is None else np.asarray(levels, float)
        for i in range(model.m):
            X0[s, model.state_slice(i)] = sample_level_set(lfs[i], float(lv[i]), rng)
        V0[s] = lv
    return X0, V0


def validate(
    model: NetworkModel,
    lfs,
    cm_cert,
    flow_bounds,
    n_samples: int,
    T: float = 20.0,
    dt: float = 1e-3,
    seed: int = 0,
    levels=None,
) -> ValidationReport:
    """Simulate sampled initial states and check comparison and energy bounds."""
    A = np.asarray(cm_cert.A, float)
    G = np.asarray(cm_cert.Gamma, float)
    tol = comparison_tolerance(dt)
    nsteps = _steps(T, dt)
    rng = np.random.default_rng(seed)
    fbs = list(flow_bounds)
    edges = [fb.edge for fb in fbs]
    report = ValidationReport(
        n_samples, seed, T, dt, tol, [float("-inf")] * model.m, {e: float("-inf") for e in edges}, 0, 0, 0, 0, 0.0
    )
    if n_samples == 0:
        report.cmp_margin = [0.0] * model.m
        report.flow_margin = {e: 0.0 for e in edges}
        return report
    ev = _Evaluator(model, lfs, edges)
    X, V0 = draw_initial_states(model, lfs, G, n_samples, rng, levels)
    U = np.array([fb.u for fb in fbs]) if fbs else np.zeros((0, model.m))
    R = V0.copy()
    alive = np.ones(n_samples, bool)
    inside = np.ones(n_samples, bool)
    margin = np.full(model.m, -np.inf)
    cmp_bad = np.zeros(n_samples, bool)
    fcs = lambda z: z @ A.T  # noqa: E731
    v = ev.v(X)
    phi_prev = np.abs(ev.phi(X))
    psi = np.zeros((n_samples, len(edges)))
    margin = np.maximum(margin, np.max(v - R, axis=0))
    for k in range(nsteps):
        Xn = _rk4_step(ev.f, X[alive], dt)
        R = _rk4_step(fcs, R, dt)
        bad = ~np.all(np.isfinite(Xn), axis=1) | (np.max(np.abs(Xn), axis=1) > BLOWUP)
        idx = np.flatnonzero(alive)
        if np.any(bad):
            for s in idx[bad]:
                report.diagnostics.append(f"sample {s}: blowup at t = {(k + 1) * dt:.4g}")
            report.blowups += int(bad.sum())
            alive[idx[bad]] = False
            inside[idx[bad]] = False
            Xn = Xn[~bad]
            idx = idx[~bad]
        X[idx] = Xn
        v = ev.v(Xn)
        ph = np.abs(ev.phi(Xn))
        psi[idx] += 0.5 * dt * (phi_prev[idx] + ph)
        phi_prev[idx] = ph
        chk = inside[idx]
        if np.any(chk):
            d = v[chk] - R[idx][chk]
            margin = np.maximum(margin, d.max(axis=0))
            cmp_bad[idx[chk]] |= np.any(d > tol, axis=1)
        out = np.any(v > G[None, :] * (1 + 1e-9), axis=1) & inside[idx]
        if np.any(out):
            report.exits += int(out.sum())
            inside[idx[out]] = False
    report.cmp_margin = [float(x) for x in margin]
    report.cmp_violations = int(cmp_bad.sum())
    for s in np.flatnonzero(cmp_bad):
        report.diagnostics.append(f"sample {s}: comparison principle violated")
    if fbs and cm_cert.hurwitz.is_hurwitz:
        B = linalg.solve_linear(A, -V0.T)  # (m, S)
        bound = (U @ B).T  # (S, E)
        diff = psi - bound * (1 + FLOW_REL_TOL)
        ok = alive & ~cmp_bad
        fm = np.where(ok[:, None], diff, -np.inf).max(axis=0)
        report.flow_margin = {e: float(fm[k]) for k, e in enumerate(edges)}
        viol = ok[:, None] & (diff > FLOW_ABS_TOL)
        report.flow_violations = int(viol.any(axis=1).sum())
        for s in np.flatnonzero(viol.any(axis=1)):
            report.diagnostics.append(f"sample {s}: energy bound exceeded")
        vT = ev.v(X)
        tail = (U @ linalg.solve_linear(A, -vT.T)).T
        report.tail_bound = float(np.max(tail, initial=0.0))
    return report
