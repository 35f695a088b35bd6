"""Small dense linear algebra: Cholesky, Jacobi eigensolver, pivoted LU
solves, and a Hurwitz test for Metzler matrices.

Sizes in this package are tiny (tens of rows), so the routines favour
robustness and exact control over tolerances instead of speed.
"""

from __future__ import annotations

import enum

import numpy as np


class NotPositiveSemidefinite(ValueError):
    pass


class SingularMatrix(ValueError):
    pass


class NotMetzler(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class HurwitzVerdict(str, enum.Enum):
    BY_DOMINANCE = "HurwitzByDominance"
    BY_MINORS = "HurwitzByMinors"
    NOT_HURWITZ = "NotHurwitz"

    @property
    def is_hurwitz(self) -> bool:
        return self is not HurwitzVerdict.NOT_HURWITZ


SYM_TOL = 1e-12


def _as_square(S) -> np.ndarray:
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    return S


def _check_symmetric(S: np.ndarray):
    if S.size and np.max(np.abs(S - S.T)) > SYM_TOL * max(1.0, np.max(np.abs(S))):
        raise ValueError("matrix is not symmetric")


def cholesky(S, tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular L with L L^T = S for symmetric PSD S.

    Zero pivots (within ``tol``, scaled by the largest diagonal entry) give a
    zero column so semidefinite inputs factor too; a pivot below ``-tol``
    raises :class:`NotPositiveSemidefinite`.
    """
    S = _as_square(S)
    _check_symmetric(S)
    n = S.shape[0]
    L = np.zeros_like(S)
    scale = max(1.0, float(np.max(np.abs(np.diag(S)), initial=0.0)))
    thresh = tol * scale
    for k in range(n):
        d = S[k, k] - L[k, :k] @ L[k, :k]
        if d < -thresh:
            raise NotPositiveSemidefinite(f"pivot {d:.3e} at row {k}")
        if d <= thresh:
            # semidefinite direction: remaining column must vanish too
            col = S[k + 1 :, k] - L[k + 1 :, :k] @ L[k, :k]
            if col.size and np.max(np.abs(col)) > np.sqrt(thresh) * np.sqrt(scale):
                raise NotPositiveSemidefinite(f"zero pivot with nonzero column at row {k}")
            continue
        L[k, k] = np.sqrt(d)
        L[k + 1 :, k] = (S[k + 1 :, k] - L[k + 1 :, :k] @ L[k, :k]) / L[k, k]
    return L


def sym_eigen(S, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns.
    """
    A = _as_square(S)
    _check_symmetric(A)
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    fro = np.linalg.norm(A)
    if n <= 1 or fro == 0.0:
        return np.diag(A).copy(), V
    skip = tol * fro / n
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2) * 2.0)
        if off <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def lu_factor(A) -> tuple[np.ndarray, np.ndarray]:
    """Partial-pivoting LU, packed: returns (LU, perm) with A[perm] = L U."""
    LU = _as_square(A)
    n = LU.shape[0]
    perm = np.arange(n)
    scale = np.max(np.abs(LU), initial=0.0)
    for k in range(n):
        p = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[p, k]) <= 1e-14 * max(scale, 1e-300):
            raise SingularMatrix(f"zero pivot in column {k}")
        if p != k:
            LU[[k, p]] = LU[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        LU[k + 1 :, k] /= LU[k, k]
        LU[k + 1 :, k + 1 :] -= np.outer(LU[k + 1 :, k], LU[k, k + 1 :])
    return LU, perm


def lu_solve(LU: np.ndarray, perm: np.ndarray, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    y = b[perm].copy()
    n = LU.shape[0]
    for k in range(n):
        y[k] -= LU[k, :k] @ y[:k]
    for k in range(n - 1, -1, -1):
        y[k] = (y[k] - LU[k, k + 1 :] @ y[k + 1 :]) / LU[k, k]
    return y


def solve_linear(A, b) -> np.ndarray:
    """Solve A x = b by LU with partial pivoting; b may be a vector or matrix."""
    A = _as_square(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"rhs has {b.shape[0]} rows, matrix has {A.shape[0]}")
    LU, perm = lu_factor(A)
    if b.ndim == 1:
        return lu_solve(LU, perm, b)
    return np.column_stack([lu_solve(LU, perm, b[:, k]) for k in range(b.shape[1])])


def inverse(A) -> np.ndarray:
    A = _as_square(A)
    return solve_linear(A, np.eye(A.shape[0]))


def leading_minors(A, rel_tol: float = 1e-10) -> np.ndarray:
    """Leading principal minors via unpivoted elimination (pivot products).

    Elimination stops at the first pivot that is not clearly positive
    relative to the running pivot magnitude; later minors are reported as 0.
    """
    U = _as_square(A)
    n = U.shape[0]
    minors = np.zeros(n)
    running = 1.0
    prod = 1.0
    for k in range(n):
        piv = U[k, k]
        prod *= piv
        minors[k] = prod
        ref = max(running, np.max(np.abs(U[k:, k:]), initial=0.0))
        if piv <= rel_tol * ref:
            minors[k] = min(prod, 0.0) if piv < 0 else 0.0
            break
        running = max(running, abs(piv))
        U[k + 1 :, k + 1 :] -= np.outer(U[k + 1 :, k], U[k, k + 1 :]) / piv
    return minors


def metzler_hurwitz(A, tol: float = 1e-12) -> HurwitzVerdict:
    """Hurwitz test for a Metzler matrix.

    Strict row diagonal dominance with a negative diagonal is tried first;
    otherwise -A must have all leading principal minors positive, which for
    Metzler A is equivalent to -A being a nonsingular M-matrix.
    """
    A = _as_square(A)
    off = A - np.diag(np.diag(A))
    if np.any(off < -tol):
        i, j = np.argwhere(off < -tol)[0]
        raise NotMetzler(f"entry ({i},{j}) = {A[i, j]:.3e} is negative")
    A[(off < 0) & ~np.eye(A.shape[0], dtype=bool)] = 0.0
    d = np.diag(A)
    offsum = np.sum(np.abs(A), axis=1) - np.abs(d)
    if np.all(d < 0) and np.all(offsum < np.abs(d)):
        return HurwitzVerdict.BY_DOMINANCE
    if np.all(leading_minors(-A) > 0):
        return HurwitzVerdict.BY_MINORS
    return HurwitzVerdict.NOT_HURWITZ
