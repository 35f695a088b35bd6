"""``decompose``: certify a network, then partition it by certified energy flow.

Exit codes: 0 success, 1 configuration or model error, 2 no Hurwitz
comparison matrix (bounds skipped), 3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certify, flowgraph, netmodel, simkit

EXIT_OK, EXIT_CONFIG, EXIT_NOT_HURWITZ, EXIT_VALIDATION = 0, 1, 2, 3
GAMMA_RETRIES = 3
BUILTINS = {"lv16": lambda seed: netmodel.build_lotka_volterra(16, seed), "vdp9": lambda seed: netmodel.build_vdp_network(9, seed)}


class InvalidGamma(ValueError):
    pass


class InvalidLevels(ValueError):
    pass


@dataclass
class ScenarioConfig:
    model: str = "builtin:lv16"
    seed: int = 1
    gamma: object = 0.6
    K: int = 2
    mode: str = "worst"
    levels: list | None = None
    samples: int = 50
    horizon: float = 20.0
    dt: float = 1e-3
    out: str = "out"
    variants: list = field(default_factory=list)
    trajectory: bool = False

    def check(self, m: int) -> tuple[np.ndarray, np.ndarray | None]:
        G = np.broadcast_to(np.asarray(self.gamma, dtype=float), (m,)).copy()
        if np.any(G <= 0) or np.any(G > 1):
            raise InvalidGamma(f"InvalidGamma: entries must lie in (0, 1], got {self.gamma}")
        if self.mode not in ("worst", "initial"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 1 <= self.K <= m:
            raise ValueError(f"K must lie in 1..{m}")
        lv = None
        if self.mode == "initial":
            if self.levels is None:
                raise InvalidLevels("initial mode needs --levels")
            lv = _levels_vector(self.levels, G)
        return G, lv


def _levels_vector(levels, G) -> np.ndarray:
    lv = np.broadcast_to(np.asarray(levels, dtype=float), G.shape).copy()
    if np.any(lv <= 0) or np.any(lv > G):
        raise InvalidLevels("levels must satisfy 0 < v0 <= Gamma elementwise")
    return lv


def load_model(source: str, seed: int) -> netmodel.NetworkModel:
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        if name not in BUILTINS:
            raise ValueError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}")
        return BUILTINS[name](seed)
    return netmodel.load(Path(source))


@dataclass
class Pipeline:
    model: netmodel.NetworkModel
    lfs: list
    Gamma: np.ndarray
    attempts: list
    cm: certify.ComparisonCertificate | None = None
    flows: list | None = None
    graph: flowgraph.EnergyGraph | None = None
    W: np.ndarray | None = None
    partition: flowgraph.Partition | None = None
    levels: np.ndarray | None = None


def certify_with_retry(model, lfs, G, log=print):
    """Comparison matrix and flow bounds, halving Gamma on infeasibility."""
    attempts = []
    for k in range(GAMMA_RETRIES + 1):
        try:
            cm = certify.comparison_matrix(model, lfs, G)
            flows = certify.flow_bounds(model, lfs, G) if cm.hurwitz.is_hurwitz else []
        except (certify.Infeasible, certify.NotProven) as exc:
            attempts.append({"gamma": G.tolist(), "status": "infeasible", "reason": str(exc)})
            log(f"attempt {k + 1}: {exc}; halving Gamma")
            G = G / 2
            continue
        attempts.append({"gamma": G.tolist(), "status": cm.hurwitz.value})
        return cm, flows, G, attempts
    return None, None, G, attempts


def build_pipeline(cfg: ScenarioConfig, log=print) -> Pipeline:
    model = load_model(cfg.model, cfg.seed)
    G, _ = cfg.check(model.m)
    lfs = certify.lyapunov_functions(model)
    cm, flows, G, attempts = certify_with_retry(model, lfs, G, log)
    pipe = Pipeline(model, lfs, G, attempts, cm, flows)
    if cm is None or not cm.hurwitz.is_hurwitz:
        return pipe
    pipe.graph = flowgraph.EnergyGraph.from_certificates(cm, flows)
    if cfg.mode == "initial":
        pipe.levels = _levels_vector(cfg.levels, G)
        pipe.W = flowgraph.build_adjacency(pipe.graph, "initial", pipe.levels)
    else:
        pipe.W = flowgraph.build_adjacency(pipe.graph, "worst_case")
    pipe.partition = flowgraph.spectral_partition(pipe.W, cfg.K, cfg.seed)
    return pipe


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _certificates_doc(pipe: Pipeline) -> dict:
    return {
        "model": pipe.model.to_dict(),
        "lyapunov": [lf.to_dict() for lf in pipe.lfs],
        "gamma": pipe.Gamma.tolist(),
        "gamma_attempts": pipe.attempts,
        "comparison": pipe.cm.to_dict() if pipe.cm is not None else None,
        "flows": [fb.to_dict() for fb in pipe.flows or []],
    }


def _ratio(W, cut) -> float:
    total = float(np.sum(np.triu(W, 1)))
    return cut / total if total > 0 else 0.0


def run(cfg: ScenarioConfig, log=print) -> int:
    out = Path(cfg.out)
    try:
        pipe = build_pipeline(cfg, log)
        scen = _scenarios(pipe, cfg.variants) if cfg.variants and pipe.graph is not None else None
    except (
        netmodel.SchemaError,
        netmodel.InvariantViolation,
        netmodel.EquilibriumNotFound,
        certify.LinearizationNotStable,
        certify.NoCertifiableLevel,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "certificates.json", _certificates_doc(pipe))
    if pipe.cm is None or not pipe.cm.hurwitz.is_hurwitz:
        log("comparison matrix is not Hurwitz; energy bounds skipped")
        return EXIT_NOT_HURWITZ
    W, part = pipe.W, pipe.partition
    (out / "adjacency.csv").write_text(flowgraph.adjacency_csv(W))
    pdoc = part.to_dict()
    pdoc.update({"mode": cfg.mode, "cut_ratio": _ratio(W, part.cut), "seed": cfg.seed})
    _dump(out / "partition.json", pdoc)
    (out / "graph.dot").write_text(flowgraph.to_dot(W, part))
    levels = pipe.levels
    report = simkit.validate(
        pipe.model, pipe.lfs, pipe.cm, pipe.flows, cfg.samples, cfg.horizon, cfg.dt, cfg.seed, levels
    )
    (out / "validation.json").write_text(report.to_json())
    if cfg.trajectory:
        x0, _ = simkit.draw_initial_states(pipe.model, pipe.lfs, pipe.Gamma, 1, np.random.default_rng(cfg.seed), levels)
        traj = simkit.integrate(pipe.model, x0[0], cfg.horizon, cfg.dt, pipe.lfs, check=False)
        (out / "trajectory.csv").write_text(traj.to_csv())
    if scen is not None:
        _dump(out / "scenarios.json", scen)
    log(f"partition {part.clusters()} cut {part.cut:.4g} ratio {_ratio(W, part.cut):.3f}")
    log(f"validation: {'pass' if report.passed else 'FAIL'} ({report.n_samples} samples)")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _scenarios(pipe: Pipeline, variants) -> dict:
    part = pipe.partition
    rows = []
    for v in variants:
        lv = _levels_vector(v, pipe.Gamma)
        Wv = flowgraph.build_adjacency(pipe.graph, "initial", lv)
        cut = flowgraph.cut_weight(Wv, part.assignment)
        intra = float(sum(flowgraph.internal_weights(Wv, part.assignment, part.K)))
        rows.append({"levels": lv.tolist(), "cut": cut, "intra": intra, "cut_intra_ratio": cut / intra if intra > 0 else None})
    return {
        "base": {"assignment": part.assignment, "cut": part.cut, "ratio": _ratio(pipe.W, part.cut)},
        "variants": rows,
    }


def compare_scenarios(base: ScenarioConfig, variants, log=print) -> dict:
    """Per-variant cut weight under the base partition, v(0) in place of Gamma."""
    pipe = build_pipeline(base, log)
    if pipe.graph is None:
        raise flowgraph.NotHurwitz("comparison matrix is not Hurwitz")
    return _scenarios(pipe, list(variants))


def _gamma_arg(text: str):
    vals = [float(t) for t in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _read_json_arg(path: str | None):
    if path is None:
        return None
    doc = json.loads(Path(path).read_text())
    return doc["levels"] if isinstance(doc, dict) and "levels" in doc else doc


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decompose", description=__doc__.splitlines()[0])
    p.add_argument("--model", default="builtin:lv16", help="JSON model file, builtin:lv16 or builtin:vdp9")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--gamma", type=_gamma_arg, default=0.6, help="scalar or comma-separated per-node levels")
    p.add_argument("--k", type=int, default=2, dest="K")
    p.add_argument("--mode", choices=["worst", "initial"], default="worst")
    p.add_argument("--levels", help="JSON list of initial levels v(0) (initial mode)")
    p.add_argument("--variants", help="JSON list of level lists for scenario comparison")
    p.add_argument("--out", default="out")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--trajectory", action="store_true", help="also write one sampled trajectory as CSV")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        levels = _read_json_arg(args.levels)
        variants = _read_json_arg(args.variants) or []
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = ScenarioConfig(
        model=args.model,
        seed=args.seed,
        gamma=args.gamma,
        K=args.K,
        mode=args.mode,
        levels=levels,
        samples=args.samples,
        horizon=args.horizon,
        dt=args.dt,
        out=args.out,
        variants=variants,
        trajectory=args.trajectory,
    )
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
