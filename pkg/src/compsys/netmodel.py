"""Polynomial network models and the two benchmark generators.

Subsystem ``i`` owns ``dim_i`` consecutive global state variables and has
isolated dynamics ``f_i`` written over its local variables ``y1..y_dim``.
A coupling ``g_ij`` (target ``i``, source ``j``) is written over the
concatenation ``(x_i, x_j)``: the first ``dim_i`` variables are the
target's, the rest the source's.  Every term of ``g_ij`` must involve a
source variable, so ``g_ij(x_i, 0) = 0``.

JSON layout (keys sorted, polynomials in the text form of
:mod:`compsys.polyalg`)::

    {"couplings": [{"g": [...], "source": 1, "target": 0}, ...],
     "meta": {"equilibrium": [...], "generator": "...", "seed": 1},
     "subsystems": [{"dim": 1, "f": [...], "id": 0}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import polyalg
from .polyalg import Polynomial

EQUILIBRIUM_TOL = 1e-8


class SchemaError(ValueError):
    pass


class InvariantViolation(ValueError):
    kind = "InvariantViolation"


class FNotZeroAtOrigin(InvariantViolation):
    kind = "FNotZeroAtOrigin"


class GNotZeroAtSourceZero(InvariantViolation):
    kind = "GNotZeroAtSourceZero"


class DimensionMismatch(InvariantViolation):
    kind = "DimensionMismatch"


class NotAnEquilibrium(ValueError):
    pass


class EquilibriumNotFound(RuntimeError):
    pass


@dataclass(frozen=True)
class SubsystemDef:
    id: int
    dim: int
    f: tuple


@dataclass(frozen=True)
class CouplingDef:
    target: int
    source: int
    g: tuple


@dataclass
class NetworkModel:
    subsystems: list
    couplings: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subsystems = sorted(self.subsystems, key=lambda s: s.id)
        self.couplings = sorted(self.couplings, key=lambda c: (c.target, c.source))
        self._validate()
        self.offsets = np.cumsum([0] + [s.dim for s in self.subsystems])[:-1].tolist()
        self._field = None

    # -- structure ----------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.subsystems)

    @property
    def n(self) -> int:
        return sum(s.dim for s in self.subsystems)

    def dim(self, i: int) -> int:
        return self.subsystems[i].dim

    def state_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.subsystems[i].dim)

    def index_map(self) -> list[list[int]]:
        """Global variable indices of each subsystem."""
        return [list(range(self.offsets[i], self.offsets[i] + s.dim)) for i, s in enumerate(self.subsystems)]

    def neighbors(self, i: int) -> list[int]:
        """N_i: i itself followed by the sources coupled into i (sorted)."""
        return [i] + sorted(c.source for c in self.couplings if c.target == i)

    def coupling(self, i: int, j: int) -> CouplingDef | None:
        for c in self.couplings:
            if c.target == i and c.source == j:
                return c
        return None

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(c.target, c.source) for c in self.couplings]

    def _validate(self):
        ids = [s.id for s in self.subsystems]
        if ids != list(range(len(ids))):
            raise SchemaError(f"subsystem ids must be 0..m-1, got {ids}")
        dims = {s.id: s.dim for s in self.subsystems}
        for s in self.subsystems:
            if s.dim < 1 or len(s.f) != s.dim:
                raise DimensionMismatch(f"subsystem {s.id}: dim {s.dim} but {len(s.f)} components")
            for p in s.f:
                if p.nvars != s.dim:
                    raise DimensionMismatch(f"subsystem {s.id}: f over {p.nvars} vars, dim {s.dim}")
                if p.coef(polyalg.ONE) != 0.0:
                    raise FNotZeroAtOrigin(f"subsystem {s.id}: f has constant term {p.coef(polyalg.ONE)}")
        seen = set()
        for c in self.couplings:
            if c.source == c.target:
                raise SchemaError(f"self coupling on {c.target}")
            if c.target not in dims or c.source not in dims:
                raise SchemaError(f"coupling {c.target}<-{c.source} references unknown subsystem")
            if (c.target, c.source) in seen:
                raise SchemaError(f"duplicate coupling {c.target}<-{c.source}")
            seen.add((c.target, c.source))
            di, dj = dims[c.target], dims[c.source]
            if len(c.g) != di:
                raise DimensionMismatch(f"coupling {c.target}<-{c.source}: {len(c.g)} components, need {di}")
            src = set(range(di, di + dj))
            for p in c.g:
                if p.nvars != di + dj:
                    raise DimensionMismatch(f"coupling {c.target}<-{c.source}: g over {p.nvars} vars")
                for mono in p.terms:
                    if not polyalg.mono_vars(mono) & src:
                        raise GNotZeroAtSourceZero(
                            f"coupling {c.target}<-{c.source}: term without source variables"
                        )

    # -- global views -------------------------------------------------
    def local_to_global_f(self, i: int) -> list[Polynomial]:
        idx = self.index_map()[i]
        return [p.remap(dict(enumerate(idx)), self.n) for p in self.subsystems[i].f]

    def local_to_global_g(self, c: CouplingDef) -> list[Polynomial]:
        idx = self.index_map()
        mapping = dict(enumerate(idx[c.target] + idx[c.source]))
        return [p.remap(mapping, self.n) for p in c.g]

    def global_field(self) -> list[Polynomial]:
        """F as n polynomials in the global variables."""
        if self._field is None:
            F = []
            for i in range(self.m):
                comps = self.local_to_global_f(i)
                for c in self.couplings:
                    if c.target == i:
                        comps = [a + b for a, b in zip(comps, self.local_to_global_g(c))]
                F.extend(comps)
            self._field = F
        return self._field

    def field(self, x) -> np.ndarray:
        return np.array([p.eval(x) for p in self.global_field()])

    def jacobian(self, x) -> np.ndarray:
        F = self.global_field()
        return np.array([[p.diff(k).eval(x) for k in range(self.n)] for p in F])

    def compiled_field(self) -> polyalg.CompiledPolys:
        return polyalg.CompiledPolys(self.global_field(), self.n)

    # -- serialisation ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "subsystems": [
                {"id": s.id, "dim": s.dim, "f": [p.to_str() for p in s.f]} for s in self.subsystems
            ],
            "couplings": [
                {"target": c.target, "source": c.source, "g": [p.to_str() for p in c.g]}
                for c in self.couplings
            ],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkModel":
        try:
            subs_doc = doc["subsystems"]
            coup_doc = doc.get("couplings", [])
            meta = dict(doc.get("meta", {}))
            dims = {int(s["id"]): int(s["dim"]) for s in subs_doc}
            subs = [
                SubsystemDef(int(s["id"]), int(s["dim"]), tuple(polyalg.parse(t, int(s["dim"])) for t in s["f"]))
                for s in subs_doc
            ]
            coups = []
            for c in coup_doc:
                t, s = int(c["target"]), int(c["source"])
                if t not in dims or s not in dims:
                    raise SchemaError(f"coupling {t}<-{s} references unknown subsystem")
                nv = dims[t] + dims[s]
                coups.append(CouplingDef(t, s, tuple(polyalg.parse(g, nv) for g in c["g"])))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed model document: {exc}") from exc
        except polyalg.DimensionMismatch as exc:
            raise DimensionMismatch(str(exc)) from exc
        except ValueError as exc:
            if isinstance(exc, InvariantViolation | SchemaError):
                raise
            raise SchemaError(str(exc)) from exc
        return cls(subs, coups, meta)


def load(source) -> NetworkModel:
    """Load a model from a path, a JSON string, or an already-parsed dict."""
    if isinstance(source, dict):
        return NetworkModel.from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    return NetworkModel.from_dict(doc)


def sample_path(name: str = "two_node_linear.json") -> Path:
    return Path(__file__).parent / "data" / name


def shift_equilibrium(model: NetworkModel, xstar) -> NetworkModel:
    """Move ``xstar`` to the origin and re-split the coupling terms.

    Terms of a shifted ``g_ij`` that no longer involve ``x_j`` are moved into
    ``f_i``; constant terms (bounded by the equilibrium residual) are dropped.
    """
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != (model.n,):
        raise DimensionMismatch(f"xstar has shape {xstar.shape}, need ({model.n},)")
    res = np.max(np.abs(model.field(xstar)), initial=0.0)
    if res > EQUILIBRIUM_TOL:
        raise NotAnEquilibrium(f"|F(x*)| = {res:.3e}")
    idx = model.index_map()
    new_f = []
    for i, s in enumerate(model.subsystems):
        new_f.append([p.substitute(xstar[idx[i]]) for p in s.f])
    new_c = []
    for c in model.couplings:
        di = model.dim(c.target)
        shift = np.concatenate([xstar[idx[c.target]], xstar[idx[c.source]]])
        src = range(di, di + model.dim(c.source))
        keep = []
        for k, p in enumerate(c.g):
            touch, free = p.substitute(shift).split_by(src)
            keep.append(touch)
            if not free.is_zero():
                back = free.remap({v: v for v in range(di)}, di)
                new_f[c.target][k] = new_f[c.target][k] + back
        new_c.append(CouplingDef(c.target, c.source, tuple(keep)))
    subs = []
    for s, comps in zip(model.subsystems, new_f):
        comps = [_drop_constant(p) for p in comps]
        subs.append(SubsystemDef(s.id, s.dim, tuple(comps)))
    meta = dict(model.meta)
    prev = np.asarray(meta.get("equilibrium", np.zeros(model.n)), dtype=float)
    meta["equilibrium"] = (prev + xstar).tolist()
    return NetworkModel(subs, new_c, meta)


def _drop_constant(p: Polynomial) -> Polynomial:
    t = p.terms
    c = t.pop(polyalg.ONE, 0.0)
    if abs(c) > EQUILIBRIUM_TOL:
        raise NotAnEquilibrium(f"constant residue {c:.3e} after shift")
    return Polynomial(t, p.nvars)


# -- generators -------------------------------------------------------
def ring_with_chords(n: int, rng: np.random.Generator, n_chords: int | None = None) -> list[tuple[int, int]]:
    """Undirected edge list: a ring plus random short chords (mean degree ~3).

    Chords join nodes 2..max(2, n//4) steps apart on the ring.
    """
    if n < 2:
        return []
    edges = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    if n_chords is None:
        n_chords = n // 2
    span = max(2, n // 4)
    candidates = sorted(
        {tuple(sorted((i, (i + k) % n))) for i in range(n) for k in range(2, span + 1)} - edges
    )
    if candidates and n_chords:
        pick = rng.choice(len(candidates), size=min(n_chords, len(candidates)), replace=False)
        edges |= {candidates[k] for k in sorted(pick)}
    return sorted(edges)


def _newton(model: NetworkModel, x0, max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    x = np.array(x0, dtype=float)
    F = model.field(x)
    for _ in range(max_iter):
        nF = np.linalg.norm(F)
        if nF <= tol:
            return x
        step = np.linalg.solve(model.jacobian(x), -F)
        t = 1.0
        while t > 1e-8:
            xn = x + t * step
            Fn = model.field(xn)
            if np.linalg.norm(Fn) < (1 - 1e-4 * t) * nF:
                break
            t *= 0.5
        x, F = xn, Fn
    if np.linalg.norm(F) <= 1e-10:
        return x
    raise EquilibriumNotFound(f"Newton residual {np.linalg.norm(F):.3e} after {max_iter} iterations")


LV_COUPLING_SCALE = 0.3
# interaction range before scaling; a quarter of (0.05, 0.5) so that a stable
# positive equilibrium exists and the comparison matrix stays Hurwitz on
# wide domains at mean degree ~3
LV_COUPLING_RANGE = (0.0125, 0.125)


def build_lotka_volterra(
    n: int = 16, seed: int = 0, interactions: bool = True, coupling_range: tuple = LV_COUPLING_RANGE
) -> NetworkModel:
    """Competitive Lotka-Volterra network, shifted to its positive equilibrium.

    dx_i/dt = (b_i - x_i) x_i - sum_j x_j (c_ij + d_ij x_i)
    """
    if n < 2:
        raise ValueError("need at least two communities")
    rng = np.random.default_rng(seed)
    b = rng.uniform(1.5, 2.5, size=n)
    und = ring_with_chords(n, rng) if interactions else []
    subs = []
    for i in range(n):
        y = Polynomial.var(0, 1)
        subs.append(SubsystemDef(i, 1, (y * float(b[i]) - y * y,)))
    coups = []
    for i, j in [(i, j) for a, bb in und for i, j in ((a, bb), (bb, a))]:
        c, d = rng.uniform(*coupling_range, size=2) * LV_COUPLING_SCALE
        yi, yj = Polynomial.var(0, 2), Polynomial.var(1, 2)
        coups.append(CouplingDef(i, j, (-(yj * float(c)) - yi * yj * float(d),)))
    raw = NetworkModel(subs, coups, {"generator": "lotka_volterra", "seed": int(seed), "equilibrium": [0.0] * n})
    xstar = _newton(raw, b)
    if np.any(xstar <= 0):
        raise EquilibriumNotFound("equilibrium has non-positive entries")
    return shift_equilibrium(raw, xstar)


def vdp_coefficients(c2: float, beta1: Sequence[float], beta2: Sequence[float]) -> tuple[float, float]:
    """(c1, c3) for a Van der Pol node with offset parameter c2."""
    c1 = 1.0 - (0.5 * c2) ** 2
    c3 = 1.0 - sum(0.5 * b2 * c2 - b1 for b1, b2 in zip(beta1, beta2))
    return c1, c3


def vdp_node(mu: float, c1: float, c2: float, c3: float) -> tuple[Polynomial, Polynomial]:
    """Isolated (reverse-time) Van der Pol vector field in local variables."""
    y1, y2 = Polynomial.var(0, 2), Polynomial.var(1, 2)
    f1 = y2
    f2 = -(y2 * (c1 - c2 * y1 - y1 * y1)) * mu - y1 * c3
    return f1, f2


VDP_MU_RANGE = (0.3, 0.8)
# a tenth of (0.01, 0.1): with quadratic Lyapunov functions the wider range
# gives positive comparison row sums even next to the origin
VDP_BETA_RANGE = (0.001, 0.01)


def build_vdp_network(
    m: int = 9, seed: int = 0, mu_range: tuple = VDP_MU_RANGE, beta_range: tuple = VDP_BETA_RANGE
) -> NetworkModel:
    """Network of coupled Van der Pol oscillators with equilibrium at 0."""
    if m < 2:
        raise ValueError("need at least two oscillators")
    rng = np.random.default_rng(seed)
    mu = rng.uniform(*mu_range, size=m)
    c2 = rng.uniform(0.2, 0.6, size=m)
    und = ring_with_chords(m, rng)
    directed = [(i, j) for a, bb in und for i, j in ((a, bb), (bb, a))]
    betas = {e: rng.uniform(*beta_range, size=2) for e in directed}
    subs = []
    for i in range(m):
        inc = [betas[e] for e in directed if e[0] == i]
        c1, c3 = vdp_coefficients(float(c2[i]), [float(b[0]) for b in inc], [float(b[1]) for b in inc])
        subs.append(SubsystemDef(i, 2, vdp_node(float(mu[i]), c1, float(c2[i]), c3)))
    coups = []
    for (i, j) in directed:
        b1, b2 = (float(v) for v in betas[(i, j)])
        yi1, yj2 = Polynomial.var(0, 4), Polynomial.var(3, 4)
        coups.append(CouplingDef(i, j, (Polynomial.zero(4), yj2 * b1 + yj2 * yi1 * b2)))
    model = NetworkModel(subs, coups, {"generator": "van_der_pol", "seed": int(seed), "equilibrium": [0.0] * (2 * m)})
    res = np.max(np.abs(model.field(np.zeros(model.n))))
    if res > 1e-12:
        raise NotAnEquilibrium(f"origin residual {res:.3e}")
    return model


def from_polynomials(fs: Sequence[Sequence[Polynomial]], couplings: dict, meta: dict | None = None) -> NetworkModel:
    """Convenience constructor: ``fs[i]`` local fields, ``couplings[(i, j)]`` local g."""
    subs = [SubsystemDef(i, len(f), tuple(f)) for i, f in enumerate(fs)]
    coups = [CouplingDef(i, j, tuple(g)) for (i, j), g in sorted(couplings.items())]
    return NetworkModel(subs, coups, dict(meta or {}))
