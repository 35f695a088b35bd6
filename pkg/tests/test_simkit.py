import dataclasses

import numpy as np
import pytest
from scipy.integrate import simpson

from compsys import certify, netmodel, simkit
from compsys.certify import LyapunovCertificate
from compsys.polyalg import Polynomial

x = Polynomial.var


def _linear_model(M):
    M = np.asarray(M, float)
    n = len(M)
    fs = [[x(0, 1) * float(M[i, i])] for i in range(n)]
    cps = {}
    for i in range(n):
        for j in range(n):
            if i != j and M[i, j] != 0:
                cps[(i, j)] = [x(1, 2) * float(M[i, j])]
    return netmodel.from_polynomials(fs, cps)


def _expm_series(M, t, terms=60):
    out, term = np.eye(len(M)), np.eye(len(M))
    for k in range(1, terms):
        term = term @ (M * t) / k
        out = out + term
    return out


def test_integrate_scalar_decay():
    model = netmodel.from_polynomials([[-x(0, 1)]], {})
    traj = simkit.integrate(model, [1.0], 1.0, 1e-3)
    assert traj.x[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-8)
    assert np.all(np.diff(traj.t) > 0)
    assert traj.halving_error <= 1e-6


def test_integrate_linear_against_series_exponential():
    M = np.array([[-1.0, 0.4], [0.3, -0.8]])
    model = _linear_model(M)
    x0 = np.array([0.7, -0.2])
    traj = simkit.integrate(model, x0, 2.0, 1e-3)
    assert np.allclose(traj.x[-1], _expm_series(M, 2.0) @ x0, atol=1e-7)


def test_integrate_blowup():
    model = netmodel.from_polynomials([[-x(0, 1) + x(0, 1) ** 3]], {})
    with pytest.raises(simkit.Blowup):
        simkit.integrate(model, [2.0], 5.0, 1e-3, check=False)


def test_integrate_rejects_bad_step():
    model = netmodel.from_polynomials([[-x(0, 1)]], {})
    with pytest.raises(ValueError):
        simkit.integrate(model, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        simkit.integrate(model, [1.0], 1e-4, 1e-3)


def test_simulate_cs_closed_forms():
    r = simkit.simulate_cs(-np.eye(2), [1.0, 1.0], 3.0, 1e-3)
    t = np.arange(len(r)) * 1e-3
    assert np.allclose(r, np.exp(-t)[:, None], atol=1e-10)
    A = np.array([[-2.0, 1.0], [1.0, -2.0]])
    r0 = np.array([0.9, 0.1])
    w, U = np.linalg.eigh(A)
    r = simkit.simulate_cs(A, r0, 2.0, 1e-3)
    for k in (0, 500, 2000):
        exact = U @ (np.exp(w * k * 1e-3) * (U.T @ r0))
        assert np.allclose(r[k], exact, atol=1e-7)


def test_simulate_cs_positive():
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = rng.uniform(0, 1, size=(5, 5))
        np.fill_diagonal(A, -rng.uniform(0.5, 4.0, size=5))
        r = simkit.simulate_cs(A, rng.uniform(0, 1, size=5), 3.0, 1e-2)
        assert r.min() >= -1e-10


def test_sample_level_set():
    lf = LyapunovCertificate(0, np.array([[1.0]]))
    xs = simkit.sample_level_set(lf, 0.25, seed=3)
    assert abs(abs(xs[0]) - 0.5) <= 1e-15
    rng = np.random.default_rng(1)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        B = rng.normal(size=(d, d))
        lf = LyapunovCertificate(0, B @ B.T + 0.1 * np.eye(d))
        level = float(rng.uniform(0.01, 1.0))
        z = simkit.sample_level_set(lf, level, rng)
        assert abs(lf.value(z) - level) <= 1e-10
    assert np.array_equal(simkit.sample_level_set(lf, 0.5, 9), simkit.sample_level_set(lf, 0.5, 9))
    with pytest.raises(ValueError):
        simkit.sample_level_set(lf, 1.5, 0)


def _traj_with_phi(t, phi):
    return simkit.Trajectory(t, np.zeros((len(t), 1)), np.zeros((len(t), 1)), np.column_stack([phi]), [(0, 1)])


def test_measure_flows_quadrature():
    t = np.linspace(0.0, 10.0, 10_001)
    assert simkit.measure_flows(_traj_with_phi(t, np.zeros_like(t))) == {(0, 1): 0.0}
    psi = simkit.measure_flows(_traj_with_phi(t, np.exp(-t)))[(0, 1)]
    assert psi == pytest.approx(1.0 - np.exp(-10.0), abs=1e-5)
    assert psi == pytest.approx(1.0, abs=1e-4)
    model = netmodel.build_vdp_network(9, seed=7)
    lfs = certify.lyapunov_functions(model)
    x0, _ = simkit.draw_initial_states(model, lfs, np.full(9, 0.6), 1, np.random.default_rng(0))
    traj = simkit.integrate(model, x0[0], 5.0, 1e-3, lfs, check=False)
    for k, e in enumerate(traj.edges):
        ref = simpson(np.abs(traj.phi[:, k]), x=traj.t)
        assert simkit.measure_flows(traj)[e] == pytest.approx(ref, rel=1e-5, abs=1e-12)


def test_trajectory_csv_header():
    model = netmodel.load(netmodel.sample_path())
    lfs = certify.lyapunov_functions(model)
    traj = simkit.integrate(model, [0.1, 0.2], 0.01, 1e-3, lfs)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,x1,x2,v1,v2,phi_1_2,phi_2_1"
    assert len(lines) == 12
    assert np.all(traj.v >= 0)


@pytest.fixture(scope="module")
def two_node():
    model = _linear_model([[-1.0, 0.1], [0.1, -1.0]])
    lfs = certify.lyapunov_functions(model)
    cm = certify.comparison_matrix(model, lfs, 1.0)
    flows = certify.flow_bounds(model, lfs, 1.0)
    return model, lfs, cm, flows


def test_validate_two_node_passes(two_node):
    model, lfs, cm, flows = two_node
    rep = simkit.validate(model, lfs, cm, flows, 50, T=20.0, dt=1e-3, seed=0)
    assert rep.passed
    assert rep.cmp_violations == 0 and rep.flow_violations == 0
    assert max(rep.cmp_margin) <= rep.tol_cmp
    assert rep.tail_bound <= 1e-6


def test_validate_detects_corrupted_off_diagonal(two_node):
    model, lfs, cm, flows = two_node
    A = cm.A.copy()
    A[0, 1] = -A[0, 1]
    A[1, 0] = -A[1, 0]
    bad = dataclasses.replace(cm, A=A)
    rep = simkit.validate(model, lfs, bad, flows, 50, T=5.0, dt=1e-3, seed=0)
    assert rep.cmp_violations > 0
    assert not rep.passed


def test_validate_empty(two_node):
    model, lfs, cm, flows = two_node
    rep = simkit.validate(model, lfs, cm, flows, 0)
    assert rep.passed and rep.n_samples == 0
    assert '"passed": true' in rep.to_json()


def test_lv16_small_domain_decays(certified):
    run = certified("lv16", 1, 0.01)
    X0, V0 = simkit.draw_initial_states(run.model, run.lfs, np.full(16, 0.01), 3, np.random.default_rng(2))
    for x0, v0 in zip(X0, V0):
        traj = simkit.integrate(run.model, x0, 20.0, 1e-3, run.lfs, check=False)
        assert np.all(traj.v[-1] < v0)


def test_lv16_flow_quadrature_refinement(certified):
    run = certified("lv16", 1, 0.6)
    X0, _ = simkit.draw_initial_states(run.model, run.lfs, np.full(16, 0.6), 1, np.random.default_rng(4))
    coarse = simkit.measure_flows(simkit.integrate(run.model, X0[0], 20.0, 1e-3, run.lfs, check=False))
    fine = simkit.measure_flows(simkit.integrate(run.model, X0[0], 20.0, 5e-4, run.lfs, check=False))
    for e in coarse:
        assert abs(coarse[e] - fine[e]) <= 1e-4 * max(fine[e], 1e-12) + 1e-12
