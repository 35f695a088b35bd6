"""Acceptance criteria; each test prints one PASS/FAIL line."""

import contextlib
import dataclasses
import filecmp
import time

import numpy as np
import pytest

from compsys import certify, cli, flowgraph, linalg, netmodel, simkit
from compsys.certify import LyapunovCertificate
from compsys.polyalg import Polynomial, monomials_up_to
from compsys.sdpsos.sdp import SdpStatus, solve_sdp
from compsys.sdpsos.sos import SosInfeasible, prove_sos

x = Polynomial.var


@pytest.fixture
def report(capsys):
    @contextlib.contextmanager
    def _report(number, title):
        info = {}
        start = time.perf_counter()
        ok = False
        try:
            yield info
            ok = True
        finally:
            took = time.perf_counter() - start
            detail = ", ".join(f"{k}={v}" for k, v in info.items())
            with capsys.disabled():
                print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title} ({took:.1f}s) {detail}")

    return _report


def _random_sos(rng):
    n = int(rng.integers(2, 4))
    ms = monomials_up_to(range(n), 3)
    p = Polynomial.zero(n)
    for _ in range(int(rng.integers(1, 4))):
        h = Polynomial({m: float(c) for m, c in zip(ms, rng.normal(size=len(ms)))}, n)
        p = p + h * h
    return p


def test_criterion_1_sos_soundness(report):
    with report(1, "SOS soundness") as info:
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(100):
            p = _random_sos(rng)
            cert = prove_sos(p)
            assert cert.verify()
            worst = max(worst, cert.residual.max_abs_coef() / (1 + p.max_abs_coef()))
        assert worst <= 1e-7
        rejected = 0
        for _ in range(50):
            p = _random_sos(rng)
            pt = rng.normal(size=p.nvars)
            q = p - (p.eval(pt) + 0.1 * (1 + p.max_abs_coef()))
            assert q.eval(pt) < 0
            with pytest.raises(SosInfeasible):
                prove_sos(q)
            rejected += 1
        took = time.perf_counter() - start
        info.update(worst_rel_residual=f"{worst:.2e}", rejected=rejected, seconds=f"{took:.1f}")
        assert took < 120


def test_criterion_2_sdp_oracles(report):
    from test_sdpsos import _planted, _residual
    from compsys.sdpsos.sdp import SdpProblem

    with report(2, "SDP analytic and planted oracles") as info:
        prob = SdpProblem()
        b = prob.add_block(2)
        prob.add_constraint([(b, 0, 0, 1.0), (b, 1, 1, -1.0)], rhs=0.0)
        prob.add_constraint([(b, 0, 1, 1.0)], rhs=1.0)
        prob.set_objective([(b, 0, 0, 1.0)])
        sol = solve_sdp(prob)
        assert sol.status is SdpStatus.OPTIMAL and abs(sol.objective - 1.0) <= 1e-6
        analytic = sol.objective
        rng = np.random.default_rng(20)
        worst = 0.0
        for _ in range(20):
            dims = [int(d) for d in rng.integers(1, 7, size=rng.integers(1, 4))]
            prob = _planted(rng, dims, int(rng.integers(1, 10)), nfree=int(rng.integers(0, 3)))
            sol = solve_sdp(prob)
            assert sol.status is SdpStatus.OPTIMAL
            worst = max(worst, _residual(prob, sol))
        assert worst <= 1e-7
        info.update(analytic=f"{analytic:.8f}", worst_residual=f"{worst:.2e}")


def test_criterion_3_comparison_row_oracle(report):
    with report(3, "two-node comparison row vs AM-GM") as info:
        start = time.perf_counter()
        eps = 0.1
        y = x(0, 1)
        model = netmodel.from_polynomials([[-y], [-y]], {(0, 1): [x(1, 2) * eps], (1, 0): [x(1, 2) * eps]})
        lfs = [LyapunovCertificate(i, np.eye(1)) for i in range(2)]
        rows = [certify.cm_row(i, model, lfs, [1.0, 1.0]) for i in range(2)]
        cm = certify.assemble_cm(rows, 1.0)
        A = cm.A
        info.update(a11=f"{A[0, 0]:.6f}", a12=f"{A[0, 1]:.6f}", verdict=cm.hurwitz.value)
        assert A[0, 0] <= -1.9 + 1e-3 and A[0, 1] <= 0.1 + 1e-3
        assert abs(A[0].sum() - (-1.8)) <= 1e-3 and abs(A[1].sum() - (-1.8)) <= 1e-3
        assert cm.hurwitz is linalg.HurwitzVerdict.BY_DOMINANCE
        assert time.perf_counter() - start < 10


RUNS = [("lv16", 1, 0.01), ("lv16", 1, 0.6), ("vdp9", 7, 0.6)]


@pytest.fixture(scope="module")
def validations():
    """Fresh certification plus 50-sample validation for each benchmark run."""
    builders = {"lv16": lambda s: netmodel.build_lotka_volterra(16, s), "vdp9": lambda s: netmodel.build_vdp_network(9, s)}
    start = time.perf_counter()
    out = {}
    lfs_cache = {}
    for name, seed, gamma in RUNS:
        if (name, seed) not in lfs_cache:
            model = builders[name](seed)
            lfs_cache[(name, seed)] = (model, certify.lyapunov_functions(model))
        model, lfs = lfs_cache[(name, seed)]
        cm = certify.comparison_matrix(model, lfs, gamma)
        flows = certify.flow_bounds(model, lfs, gamma)
        assert cm.hurwitz.is_hurwitz
        rep = simkit.validate(model, lfs, cm, flows, 50, T=20.0, dt=1e-3, seed=seed)
        out[(name, seed, gamma)] = rep
    return out, time.perf_counter() - start


def test_criterion_4_comparison_principle(report, validations):
    with report(4, "comparison principle on benchmark runs") as info:
        reps, took = validations
        for key, rep in reps.items():
            info[f"{key[0]}@{key[2]}"] = f"viol={rep.cmp_violations},exits={rep.exits},margin={max(rep.cmp_margin):.1e}"
            assert rep.cmp_violations == 0 and rep.blowups == 0
            assert max(rep.cmp_margin) <= rep.tol_cmp
        info["seconds"] = f"{took:.1f}"
        assert took < 300


def test_criterion_5_energy_bounds(report, validations):
    with report(5, "energy bounds dominate measured flows") as info:
        reps, _ = validations
        for key, rep in reps.items():
            info[f"{key[0]}@{key[2]}"] = f"viol={rep.flow_violations},margin={max(rep.flow_margin.values()):.1e}"
            assert rep.flow_violations == 0
            assert max(rep.flow_margin.values()) <= 1e-6


def test_criterion_6_laplacian_and_clustering(report):
    from test_flowgraph import _random_weights

    with report(6, "normalized Laplacian and planted bipartition") as info:
        rng = np.random.default_rng(6)
        worst_eig, worst_res = np.inf, 0.0
        for _ in range(50):
            m = int(rng.integers(3, 20))
            W = _random_weights(rng, m, 0.4)
            L = flowgraph.normalized_laplacian(W)
            w, V = linalg.sym_eigen(L)
            worst_eig = min(worst_eig, w[0])
            deg = W.sum(axis=1)
            if np.all(deg > 0):
                worst_res = max(worst_res, float(np.max(np.abs(L @ np.sqrt(deg)))))
        assert worst_eig >= -1e-9 and worst_res <= 1e-8
        recovered = 0
        for seed in range(10):
            side = np.zeros(16, int)
            side[np.random.default_rng(seed).permutation(16)[8:]] = 1
            W = np.where(side[:, None] == side[None, :], 1.0, 0.01)
            np.fill_diagonal(W, 0.0)
            a = np.array(flowgraph.spectral_partition(W, 2, seed).assignment)
            recovered += int(np.array_equal(a, side) or np.array_equal(a, 1 - side))
        info.update(min_eig=f"{worst_eig:.1e}", null_residual=f"{worst_res:.1e}", recovered=f"{recovered}/10")
        assert recovered == 10


def test_criterion_7_decomposition_quality(report, certified):
    with report(7, "spectral cut vs random balanced cuts on lv16") as info:
        run = certified("lv16", 1, 0.6)
        start = time.perf_counter()
        W = flowgraph.build_adjacency(flowgraph.EnergyGraph.from_certificates(run.cm, run.flows))
        part = flowgraph.spectral_partition(W, 2, seed=1)
        rng = np.random.default_rng(7)
        best = np.inf
        for _ in range(200):
            a = np.zeros(16, int)
            a[rng.permutation(16)[:8]] = 1
            best = min(best, flowgraph.cut_weight(W, a))
        ratio = part.cut / float(np.triu(W, 1).sum())
        info.update(cut=f"{part.cut:.4f}", best_random=f"{best:.4f}", ratio=f"{ratio:.3f}")
        assert part.cut <= best and ratio <= 0.25
        assert time.perf_counter() - start < 60


def test_criterion_8_falsification_probe(report):
    from test_simkit import _linear_model

    with report(8, "corrupted a_12 is caught") as info:
        model = _linear_model([[-1.0, 0.1], [0.1, -1.0]])
        lfs = certify.lyapunov_functions(model)
        cm = certify.comparison_matrix(model, lfs, 1.0)
        flows = certify.flow_bounds(model, lfs, 1.0)
        assert simkit.validate(model, lfs, cm, flows, 50, seed=0).passed
        A = cm.A.copy()
        A[0, 1] = -A[0, 1]
        rep = simkit.validate(model, lfs, dataclasses.replace(cm, A=A), flows, 50, seed=0)
        info.update(violations=rep.cmp_violations, margin=f"{rep.cmp_margin[0]:.3e}")
        assert rep.cmp_violations >= 1


def test_criterion_9_determinism(report, tmp_path):
    with report(9, "byte-identical CLI artifacts") as info:
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            args = ["--model", "builtin:lv16", "--seed", "1", "--gamma", "0.6", "--k", "2", "--out", str(out)]
            assert cli.main(args) == cli.EXIT_OK
        names = sorted(p.name for p in outs[0].iterdir())
        match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
        info.update(files=len(names), identical=len(match))
        assert not mismatch and not errors and len(names) >= 5
