"""Dense primal-dual interior-point solver for small block SDPs.

Primal::

    minimize    sum_b <C_b, X_b> + c_free . y
    subject to  sum_b <A_kb, X_b> + B_k . y = b_k      (k = 1..m)
                X_b PSD

Dual::

    maximize    b . lam
    subject to  Z_b = C_b - sum_k lam_k A_kb  PSD,   B^T lam = c_free

Block coefficients are stored by upper triangle: the functional entry
``(block, i, j, c)`` with ``i < j`` contributes ``c * X[i, j]``.

The iteration is an infeasible-start path-following method with
Nesterov-Todd scaling and a Mehrotra predictor-corrector step.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SdpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class SdpProblem:
    block_dims: list[int] = field(default_factory=list)
    n_free: int = 0
    # constraint storage in COO form; one entry per (row, block, i, j, coef)
    _rows: list = field(default_factory=list, repr=False)
    _free: list = field(default_factory=list, repr=False)
    rhs: list[float] = field(default_factory=list)
    obj_blocks: dict = field(default_factory=dict)
    obj_free: dict = field(default_factory=dict)

    def add_block(self, dim: int) -> int:
        if dim < 1:
            raise ValueError("block dimension must be positive")
        self.block_dims.append(int(dim))
        return len(self.block_dims) - 1

    def add_free(self, count: int = 1) -> int:
        start = self.n_free
        self.n_free += count
        return start

    @property
    def n_constraints(self) -> int:
        return len(self.rhs)

    def add_constraint(self, entries=(), free=(), rhs: float = 0.0) -> int:
        """entries: iterable of (block, i, j, coef); free: iterable of (index, coef)."""
        k = len(self.rhs)
        for b, i, j, c in entries:
            if i > j:
                i, j = j, i
            self._check_entry(b, i, j)
            self._rows.append((k, b, i, j, float(c)))
        for f, c in free:
            if not 0 <= f < self.n_free:
                raise IndexError(f"free variable {f} out of range")
            self._free.append((k, int(f), float(c)))
        self.rhs.append(float(rhs))
        return k

    def set_objective(self, entries=(), free=()):
        self.obj_blocks = {}
        self.obj_free = {}
        for b, i, j, c in entries:
            if i > j:
                i, j = j, i
            self._check_entry(b, i, j)
            self.obj_blocks[(b, i, j)] = self.obj_blocks.get((b, i, j), 0.0) + float(c)
        for f, c in free:
            self.obj_free[int(f)] = self.obj_free.get(int(f), 0.0) + float(c)

    def _check_entry(self, b, i, j):
        if not 0 <= b < len(self.block_dims):
            raise IndexError(f"block {b} out of range")
        if not 0 <= i <= j < self.block_dims[b]:
            raise IndexError(f"entry ({i},{j}) outside block {b}")

    # -- debug dump ---------------------------------------------------
    def to_json(self) -> str:
        """Documented dump: blocks, free count, constraint triplets, objective."""
        cons = [{"rhs": r, "blocks": [], "free": []} for r in self.rhs]
        for k, b, i, j, c in self._rows:
            cons[k]["blocks"].append([b, i, j, c])
        for k, f, c in self._free:
            cons[k]["free"].append([f, c])
        doc = {
            "blocks": self.block_dims,
            "free_vars": self.n_free,
            "constraints": cons,
            "objective": {
                "blocks": [[b, i, j, c] for (b, i, j), c in sorted(self.obj_blocks.items())],
                "free": [[f, c] for f, c in sorted(self.obj_free.items())],
            },
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SdpProblem":
        doc = json.loads(text)
        prob = cls()
        for d in doc["blocks"]:
            prob.add_block(d)
        prob.add_free(doc["free_vars"])
        for con in doc["constraints"]:
            prob.add_constraint(
                [tuple(e) for e in con["blocks"]], [tuple(e) for e in con["free"]], con["rhs"]
            )
        prob.set_objective(
            [tuple(e) for e in doc["objective"]["blocks"]],
            [tuple(e) for e in doc["objective"]["free"]],
        )
        return prob


@dataclass
class SdpSolution:
    status: SdpStatus
    blocks: list[np.ndarray]
    free: np.ndarray
    objective: float
    dual_objective: float
    residual: float
    min_eig: float
    iterations: int
    dual: np.ndarray | None = None
    gap: float = float("nan")
    log: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status is SdpStatus.OPTIMAL


class _Compiled:
    """Matrix form of an SdpProblem: per-block sparse maps vec(X_b) -> R^m."""

    def __init__(self, prob: SdpProblem):
        m = prob.n_constraints
        self.m = m
        self.dims = list(prob.block_dims)
        self.b = np.asarray(prob.rhs, dtype=float)
        per_block: list[list] = [[] for _ in self.dims]
        for k, b, i, j, c in prob._rows:
            per_block[b].append((k, i, j, c))
        self.P = []
        for nb, ents in zip(self.dims, per_block):
            rows, cols, vals = [], [], []
            for k, i, j, c in ents:
                if i == j:
                    rows.append(k)
                    cols.append(i * nb + i)
                    vals.append(c)
                else:
                    rows += [k, k]
                    cols += [i * nb + j, j * nb + i]
                    vals += [0.5 * c, 0.5 * c]
            P = sp.csr_matrix((vals, (rows, cols)), shape=(m, nb * nb))
            P.sum_duplicates()
            self.P.append(P)
        self.Pt = [P.T.tocsr() for P in self.P]
        nf = prob.n_free
        if nf:
            fr = np.array([(k, f) for k, f, _ in prob._free], dtype=int).reshape(-1, 2)
            fv = np.array([c for _, _, c in prob._free], dtype=float)
            self.B = sp.csr_matrix((fv, (fr[:, 0], fr[:, 1])), shape=(m, nf)).toarray()
        else:
            self.B = np.zeros((m, 0))
        self.cf = np.zeros(nf)
        for f, c in prob.obj_free.items():
            self.cf[f] += c
        self.C = [np.zeros((nb, nb)) for nb in self.dims]
        for (b, i, j), c in prob.obj_blocks.items():
            if i == j:
                self.C[b][i, i] += c
            else:
                self.C[b][i, j] += 0.5 * c
                self.C[b][j, i] += 0.5 * c
        # row structure per block for Schur assembly
        self.row_entries = []
        for nb, P in zip(self.dims, self.P):
            Pc = P.tocsr()
            ents = []
            for k in range(m):
                lo, hi = Pc.indptr[k], Pc.indptr[k + 1]
                if lo == hi:
                    ents.append(None)
                    continue
                idx = Pc.indices[lo:hi]
                ents.append((idx // nb, idx % nb, Pc.data[lo:hi].copy()))
            self.row_entries.append(ents)

    def A(self, Xs, y=None) -> np.ndarray:
        out = np.zeros(self.m)
        for P, X in zip(self.P, Xs):
            out += P @ X.ravel()
        if y is not None and self.B.shape[1]:
            out += self.B @ y
        return out

    def At(self, lam) -> list[np.ndarray]:
        out = []
        for Pt, nb in zip(self.Pt, self.dims):
            out.append((Pt @ lam).reshape(nb, nb))
        return out

    def schur(self, Ws) -> np.ndarray:
        M = np.zeros((self.m, self.m))
        for W, ents, P, nb in zip(Ws, self.row_entries, self.P, self.dims):
            active = [k for k, e in enumerate(ents) if e is not None]
            if not active:
                continue
            Y = np.empty((len(active), nb * nb))
            for r, k in enumerate(active):
                ia, ib, v = ents[k]
                Y[r] = ((W[:, ia] * v) @ W[ib, :]).ravel()
            blockM = (P @ Y.T).T  # (active, m)
            M[active, :] += blockM
        return M


def _chol(X):
    return np.linalg.cholesky(X)


def _max_step(L: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with L L^T + alpha dX PSD (inf if unbounded)."""
    T = sla.solve_triangular(L, dX, lower=True)
    T = sla.solve_triangular(L, T.T, lower=True)
    ev = np.linalg.eigvalsh(0.5 * (T + T.T))
    lo = ev[0]
    return -1.0 / lo if lo < 0 else np.inf


def solve_sdp(
    prob: SdpProblem,
    feas_tol: float = 1e-7,
    max_iter: int = 200,
    gap_tol: float = 1e-6,
    verbose: bool = False,
) -> SdpSolution:
    """Solve ``prob``; see module docstring for the problem form.

    Returns an :class:`SdpSolution`; ``status`` is Optimal when the primal
    residual is below ``feas_tol`` and the relative duality gap below
    ``gap_tol``, Infeasible when a diverging dual ray certifies primal
    infeasibility, else MaxIter.
    """
    cp = _Compiled(prob)
    m, dims, nf = cp.m, cp.dims, cp.B.shape[1]
    b, C, cf, B = cp.b, cp.C, cp.cf, cp.B
    trace_log: list = []

    # structurally empty rows: either trivially satisfied or infeasible
    touched = np.zeros(m, dtype=bool)
    for P in cp.P:
        touched |= np.diff(P.indptr) > 0
    if nf:
        touched |= np.any(B != 0, axis=1)
    if np.any(~touched & (np.abs(b) > feas_tol)):
        return SdpSolution(
            SdpStatus.INFEASIBLE, [np.zeros((d, d)) for d in dims], np.zeros(nf),
            np.nan, np.inf, float(np.max(np.abs(b[~touched]))), 0.0, 0,
        )

    nsum = sum(dims)
    normb = np.max(np.abs(b), initial=0.0)
    normC = max((np.max(np.abs(Cb), initial=0.0) for Cb in C), default=0.0)
    normC = max(normC, np.max(np.abs(cf), initial=0.0))
    rownorm = np.zeros(m)
    for P in cp.P:
        rownorm = np.maximum(rownorm, np.sqrt(np.asarray(P.multiply(P).sum(axis=1)).ravel()))
    xi = max(10.0, np.sqrt(max(dims, default=1)), np.max((1 + np.abs(b)) / (1 + rownorm), initial=1.0))
    eta = max(10.0, np.sqrt(max(dims, default=1)), normC, np.max(rownorm, initial=0.0))
    X = [xi * np.eye(d) for d in dims]
    Z = [eta * np.eye(d) for d in dims]
    lam = np.zeros(m)
    y = np.zeros(nf)

    status = SdpStatus.MAX_ITER
    it = 0
    best = None
    stall = 0
    last_merit = np.inf
    for it in range(1, max_iter + 1):
        rp = b - cp.A(X, y)
        AtL = cp.At(lam)
        Rd = [Cb - Zb - Ab for Cb, Zb, Ab in zip(C, Z, AtL)]
        rf = cf - B.T @ lam if nf else np.zeros(0)
        pobj = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(C, X)) + float(cf @ y)
        dobj = float(b @ lam)
        mu = sum(float(np.sum(Xb * Zb)) for Xb, Zb in zip(X, Z)) / max(nsum, 1)
        pres = float(np.max(np.abs(rp), initial=0.0))
        dres = max(
            max((float(np.max(np.abs(R), initial=0.0)) for R in Rd), default=0.0),
            float(np.max(np.abs(rf), initial=0.0)),
        )
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        trace_log.append((it, pobj, dobj, pres, dres, gap, mu))
        if verbose:
            log.info("it %3d pobj %+.8e dobj %+.8e pres %.1e dres %.1e gap %.1e", *trace_log[-1])

        merit = max(pres / (1 + normb), dres / (1 + normC), gap)
        if pres <= feas_tol and dres <= feas_tol * (1 + normC) and gap <= gap_tol:
            if best is None or merit < best[0]:
                best = (merit, [x.copy() for x in X], y.copy(), lam.copy(), pobj, dobj, pres, gap)
            if pres <= 1e-2 * feas_tol and gap <= 1e-2 * gap_tol and dres <= 1e-9 * (1 + normC):
                status = SdpStatus.OPTIMAL
                break

        # primal infeasibility: normalised dual ray
        if dobj > 1e8 * max(1.0, normC) and pres > feas_tol:
            # lam / dobj is an approximate ray: A*(ray) + Z/dobj -> 0, b.ray = 1
            ray_res = max(normC + dres, float(np.max(np.abs(cf - rf), initial=0.0)) if nf else 0.0)
            if ray_res / dobj <= 1e-6:
                status = SdpStatus.INFEASIBLE
                break

        if merit > 0.999 * last_merit:
            stall += 1
        else:
            stall = 0
        last_merit = min(last_merit, merit)
        if stall >= 15:
            break

        # NT scaling per block
        Ls, Gs, Ginv, Ws, dvec, Lz = [], [], [], [], [], []
        try:
            for Xb, Zb in zip(X, Z):
                L = _chol(Xb)
                T = L.T @ Zb @ L
                s, U = np.linalg.eigh(0.5 * (T + T.T))
                s = np.maximum(s, 1e-300)
                d = np.sqrt(s)
                G = (L @ U) / np.sqrt(d)
                Gi = (np.sqrt(d)[:, None] * U.T) @ sla.solve_triangular(L, np.eye(len(d)), lower=True)
                Ls.append(L)
                Gs.append(G)
                Ginv.append(Gi)
                Ws.append(G @ G.T)
                dvec.append(d)
                Lz.append(_chol(Zb))
        except np.linalg.LinAlgError:
            break

        M = cp.schur(Ws)
        try:
            factor = sla.cho_factor(M, lower=True, check_finite=False)
            solveM = lambda r: sla.cho_solve(factor, r, check_finite=False)  # noqa: E731
        except (np.linalg.LinAlgError, sla.LinAlgError):
            reg = 1e-13 * max(1.0, np.max(np.abs(np.diag(M))))
            lu = sla.lu_factor(M + reg * np.eye(m), check_finite=False)
            solveM = lambda r: sla.lu_solve(lu, r, check_finite=False)  # noqa: E731
        if nf:
            MiB = solveM(B)
            S_free = B.T @ MiB
            S_free = 0.5 * (S_free + S_free.T)
            try:
                sf = sla.cho_factor(S_free, lower=True)
                solveF = lambda r: sla.cho_solve(sf, r)  # noqa: E731
            except (np.linalg.LinAlgError, sla.LinAlgError):
                solveF = lambda r: np.linalg.lstsq(S_free, r, rcond=None)[0]  # noqa: E731

        def solve_kkt(h, r):
            if nf:
                Mih = solveM(h)
                dy = solveF(B.T @ Mih - r)
                return Mih - MiB @ dy, dy
            return solveM(h), np.zeros(0)

        WRdW = [W @ R @ W for W, R in zip(Ws, Rd)]
        base_h = rp + cp.A(WRdW)

        def direction(Rcs):
            # Rcs: per block, right side R of Lambda o S = R (scaled space)
            GSG = []
            for G, d, R in zip(Gs, dvec, Rcs):
                S = 2.0 * R / (d[:, None] + d[None, :])
                GSG.append(G @ S @ G.T)
            h = base_h - cp.A(GSG)
            dl, dy = solve_kkt(h, rf)
            # iterative refinement against the ill-conditioned Schur matrix
            for _ in range(3):
                r1 = h - M @ dl - (B @ dy if nf else 0.0)
                r2 = rf - B.T @ dl if nf else np.zeros(0)
                scale = max(np.max(np.abs(h), initial=0.0), 1e-300)
                if np.max(np.abs(r1), initial=0.0) <= 1e-15 * scale:
                    break
                cl, cy = solve_kkt(r1, r2)
                dl, dy = dl + cl, dy + cy
            AtdL = cp.At(dl)
            dZ = [R - A_ for R, A_ in zip(Rd, AtdL)]
            dX = [gsg - W @ dz @ W for gsg, W, dz in zip(GSG, Ws, dZ)]
            dX = [0.5 * (d_ + d_.T) for d_ in dX]
            dZ = [0.5 * (d_ + d_.T) for d_ in dZ]
            return dX, dy, dl, dZ

        def steps(dX, dZ):
            ap = min((_max_step(L, d_) for L, d_ in zip(Ls, dX)), default=np.inf)
            ad = min((_max_step(L, d_) for L, d_ in zip(Lz, dZ)), default=np.inf)
            return ap, ad

        # predictor
        Rpred = [-np.diag(d * d) for d in dvec]
        dXa, dya, dla, dZa = direction(Rpred)
        ap, ad = steps(dXa, dZa)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(
            float(np.sum((Xb + ap * dx) * (Zb + ad * dz))) for Xb, dx, Zb, dz in zip(X, dXa, Z, dZa)
        ) / max(nsum, 1)
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # corrector
        Rcor = []
        for G, Gi, d, dx, dz in zip(Gs, Ginv, dvec, dXa, dZa):
            dxs = Gi @ dx @ Gi.T
            dzs = G.T @ dz @ G
            prod = 0.5 * (dxs @ dzs + dzs @ dxs)
            Rcor.append(sigma * mu * np.eye(len(d)) - np.diag(d * d) - prod)
        dX, dy, dl, dZ = direction(Rcor)
        ap, ad = steps(dX, dZ)
        tau = 0.98 if it > 2 else 0.9
        ap = min(1.0, tau * ap)
        ad = min(1.0, tau * ad)
        X = [Xb + ap * dx for Xb, dx in zip(X, dX)]
        y = y + ap * dy
        lam = lam + ad * dl
        Z = [Zb + ad * dz for Zb, dz in zip(Z, dZ)]
        X = [0.5 * (x_ + x_.T) for x_ in X]
        Z = [0.5 * (z_ + z_.T) for z_ in Z]
        if ap < 1e-10 and ad < 1e-10:
            break

    if status is not SdpStatus.INFEASIBLE and best is not None:
        _, X, y, lam, pobj, dobj, pres, gap = best
        status = SdpStatus.OPTIMAL
    else:
        rp = b - cp.A(X, y)
        pres = float(np.max(np.abs(rp), initial=0.0))
        pobj = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(C, X)) + float(cf @ y)
        dobj = float(b @ lam)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    min_eig = min((float(np.linalg.eigvalsh(Xb)[0]) for Xb in X), default=0.0)
    return SdpSolution(
        status=status,
        blocks=X,
        free=y,
        objective=pobj,
        dual_objective=dobj,
        residual=pres,
        min_eig=min_eig,
        iterations=it,
        dual=lam,
        gap=gap,
        log=trace_log,
    )
