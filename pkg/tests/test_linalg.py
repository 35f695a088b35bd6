import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compsys import linalg
from compsys.linalg import HurwitzVerdict


def test_cholesky_identity_and_hand_case():
    assert np.array_equal(linalg.cholesky(np.eye(3)), np.eye(3))
    L = linalg.cholesky([[4.0, 2.0], [2.0, 3.0]])
    assert np.allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)


def test_cholesky_reconstructs_near_singular_gram():
    rng = np.random.default_rng(0)
    for n in (3, 6, 10):
        B = rng.normal(size=(n, n))
        S = B @ B.T + 1e-8 * np.eye(n)
        L = linalg.cholesky(S)
        assert np.linalg.norm(L @ L.T - S) <= 1e-8 * max(1.0, np.linalg.norm(S))
        assert np.allclose(L, np.tril(L))


def test_cholesky_accepts_semidefinite_rank_deficient():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(5, 2))
    S = B @ B.T
    L = linalg.cholesky(S)
    assert np.linalg.norm(L @ L.T - S) <= 1e-9 * np.linalg.norm(S)


def test_cholesky_rejects_indefinite_and_asymmetric():
    with pytest.raises(linalg.NotPositiveSemidefinite):
        linalg.cholesky([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        linalg.cholesky([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        linalg.cholesky(np.ones((2, 3)))


def test_cholesky_agrees_with_eigen_sign():
    rng = np.random.default_rng(2)
    for trial in range(60):
        n = int(rng.integers(2, 8))
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        lam = rng.uniform(0.0, 2.0, size=n)
        lam[rng.integers(n)] = 0.0 if trial % 3 == 0 else lam[0]
        if trial % 2:
            lam[rng.integers(n)] = -rng.uniform(1e-3, 1.0)
        S = (Q * lam) @ Q.T
        S = 0.5 * (S + S.T)
        psd = linalg.sym_eigen(S)[0][0] >= -1e-8 * np.linalg.norm(S)
        try:
            linalg.cholesky(S)
            ok = True
        except linalg.NotPositiveSemidefinite:
            ok = False
        assert ok == psd


def test_sym_eigen_small_cases():
    w, _ = linalg.sym_eigen(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [1.0, 2.0, 3.0])
    w, V = linalg.sym_eigen([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(w, [-1.0, 1.0])
    assert np.allclose(np.abs(V), np.sqrt(0.5))


def test_sym_eigen_residual_and_orthonormality():
    rng = np.random.default_rng(3)
    for _ in range(10):
        B = rng.normal(size=(8, 8))
        S = B + B.T
        w, V = linalg.sym_eigen(S)
        assert np.max(np.abs(S @ V - V * w)) <= 1e-8 * np.linalg.norm(S)
        assert np.max(np.abs(V.T @ V - np.eye(8))) <= 1e-10
        assert np.all(np.diff(w) >= 0)
        assert np.allclose(w, np.linalg.eigvalsh(S), atol=1e-10)


def test_solve_linear_hand_cases():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(linalg.solve_linear(np.eye(3), b), b)
    assert np.allclose(linalg.solve_linear([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0])


def test_solve_linear_residual_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = rng.normal(size=(10, 10)) + 5 * np.eye(10)
        b = rng.normal(size=10)
        x = linalg.solve_linear(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-9 * (np.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))


def test_solve_linear_needs_pivoting_and_handles_matrix_rhs():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(linalg.solve_linear(A, np.eye(2)), A)
    assert np.allclose(linalg.inverse([[2.0, 1.0], [1.0, 1.0]]), [[1.0, -1.0], [-1.0, 2.0]])


def test_solve_linear_singular():
    with pytest.raises(linalg.SingularMatrix):
        linalg.solve_linear([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])


def test_metzler_hurwitz_examples():
    assert linalg.metzler_hurwitz([[-2.0, 1.0], [1.0, -2.0]]) is HurwitzVerdict.BY_DOMINANCE
    assert linalg.metzler_hurwitz([[-1.0, 0.5], [1.5, -1.0]]) is HurwitzVerdict.BY_MINORS
    assert linalg.metzler_hurwitz([[-1.0, 2.0], [2.0, -1.0]]) is HurwitzVerdict.NOT_HURWITZ


def test_metzler_hurwitz_rejects_and_clamps():
    with pytest.raises(linalg.NotMetzler):
        linalg.metzler_hurwitz([[-1.0, -0.1], [0.0, -1.0]])
    assert linalg.metzler_hurwitz([[-1.0, -1e-13], [0.0, -1.0]]) is HurwitzVerdict.BY_DOMINANCE


def _spectral_abscissa(A):
    return float(np.max(np.linalg.eigvals(A).real))


def test_metzler_hurwitz_matches_spectral_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        A = rng.uniform(0, 1, size=(6, 6)) * (rng.random((6, 6)) < 0.5)
        np.fill_diagonal(A, -rng.uniform(0.5, 3.0, size=6))
        alpha = _spectral_abscissa(A)
        if abs(alpha) < 1e-6:
            continue
        verdict = linalg.metzler_hurwitz(A)
        assert verdict.is_hurwitz == (alpha < 0)
        if verdict.is_hurwitz:
            assert np.linalg.det(-A) > 0


def test_leading_minors_hand_value():
    assert np.allclose(linalg.leading_minors([[1.0, -0.5], [-0.9, 1.0]]), [1.0, 0.55])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_inverse_of_metzler_hurwitz_is_nonpositive(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 1, size=(n, n))
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -(A.sum(axis=1) + rng.uniform(0.1, 1.0, size=n)))
    assert linalg.metzler_hurwitz(A).is_hurwitz
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        assert np.all(-linalg.solve_linear(A, e) >= -1e-10)


def test_sym_eigen_tiny_off_diagonal():
    S = np.array([[1.0, 1e-200, 0.0], [1e-200, 2.0, 1e-170], [0.0, 1e-170, 2.0]])
    w, V = linalg.sym_eigen(S)
    assert np.allclose(w, [1.0, 2.0, 2.0])
    assert np.allclose(V.T @ V, np.eye(3))
