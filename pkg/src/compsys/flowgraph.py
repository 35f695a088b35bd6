"""Energy-flow bounds and the spectral partition of their weighted graph."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from . import linalg

BOUND_FLOOR = -1e-10
GAP_TOL = 1e-10

PALETTE = ["#8dd3c7", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#bebada", "#fccde5", "#d9d9d9"]


class NotHurwitz(ValueError):
    pass


def edge_energy_bound(u, A, v0) -> float:
    """-u^T A^{-1} v0, computed as u . b with A b = -v0."""
    u = np.asarray(u, dtype=float)
    b = linalg.solve_linear(A, -np.asarray(v0, dtype=float))
    val = float(u @ b)
    if val < BOUND_FLOOR:
        raise NotHurwitz(f"negative energy bound {val:.3e}; -A^-1 is not nonnegative")
    return max(val, 0.0)


@dataclass
class EnergyGraph:
    A: np.ndarray
    Gamma: np.ndarray
    flows: dict  # (target, source) -> u vector
    hurwitz: linalg.HurwitzVerdict

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_certificates(cls, cm, flow_bounds) -> "EnergyGraph":
        flows = {fb.edge: np.asarray(fb.u, dtype=float) for fb in flow_bounds}
        return cls(np.asarray(cm.A, float), np.asarray(cm.Gamma, float), flows, cm.hurwitz)

    def bounds(self, v0=None) -> dict:
        """Per-edge energy bound; v0 defaults to Gamma (worst case)."""
        if not self.hurwitz.is_hurwitz:
            raise NotHurwitz("comparison matrix is not Hurwitz; bounds are infinite")
        v0 = self.Gamma if v0 is None else np.asarray(v0, dtype=float)
        if not self.flows:
            return {}
        b = linalg.solve_linear(self.A, -v0)
        out = {}
        for e in sorted(self.flows):
            val = float(self.flows[e] @ b)
            if val < BOUND_FLOOR:
                raise NotHurwitz(f"negative energy bound on edge {e}")
            out[e] = max(val, 0.0)
        return out


def total_energy_bound(graph: EnergyGraph, v0=None) -> float:
    return float(sum(graph.bounds(v0).values()))


def build_adjacency(graph: EnergyGraph, mode: str = "worst_case", v0=None) -> np.ndarray:
    """Symmetric W with w_ij = max of the two directed edge bounds."""
    if mode == "worst_case":
        vals = graph.bounds(graph.Gamma)
    elif mode == "initial":
        if v0 is None:
            raise ValueError("initial mode needs v0")
        vals = graph.bounds(v0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    W = np.zeros((graph.m, graph.m))
    for (i, j), w in vals.items():
        W[i, j] = W[j, i] = max(W[i, j], w)
    return W


def _check_weights(W) -> np.ndarray:
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    if not np.array_equal(W, W.T):
        raise ValueError("W must be symmetric")
    if np.any(W < 0) or np.any(np.diag(W) != 0):
        raise ValueError("W must be nonnegative with zero diagonal")
    return W


def normalized_laplacian(W) -> np.ndarray:
    """I - D^-1/2 W D^-1/2; zero-degree nodes get a zero scaling entry."""
    W = _check_weights(W)
    deg = W.sum(axis=1)
    s = np.zeros_like(deg)
    s[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    L = np.eye(len(W)) - s[:, None] * W * s[None, :]
    return 0.5 * (L + L.T)


@dataclass
class Partition:
    K: int
    assignment: list
    cut: float
    internal: list
    eigenvalues: list = field(default_factory=list)
    degenerate: bool = False

    def clusters(self) -> list[list[int]]:
        return [[i for i, c in enumerate(self.assignment) if c == k] for k in range(self.K)]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "assignment": self.assignment,
            "clusters": self.clusters(),
            "cut_weight": self.cut,
            "internal_weight": self.internal,
            "eigenvalues": self.eigenvalues,
            "degenerate_embedding": self.degenerate,
        }


def cut_weight(W, assignment: Sequence[int]) -> float:
    W = np.asarray(W, dtype=float)
    a = np.asarray(assignment)
    cross = a[:, None] != a[None, :]
    return float(np.sum(np.triu(W * cross, 1)))


def internal_weights(W, assignment: Sequence[int], K: int) -> list[float]:
    W = np.asarray(W, dtype=float)
    a = np.asarray(assignment)
    return [float(np.sum(np.triu(W * np.outer(a == k, a == k), 1))) for k in range(K)]


def _relabel(labels) -> list[int]:
    seen: dict = {}
    return [seen.setdefault(int(c), len(seen)) for c in labels]


def spectral_partition(W, K: int, seed: int = 0) -> Partition:
    """Normalised spectral clustering: K lowest eigenvectors, unit rows, K-means."""
    W = _check_weights(W)
    m = len(W)
    if not 1 <= K <= m:
        raise ValueError(f"K must lie in 1..{m}")
    w, V = linalg.sym_eigen(normalized_laplacian(W))
    U = V[:, :K].copy()
    norms = np.linalg.norm(U, axis=1)
    U[norms > 0] /= norms[norms > 0, None]
    degenerate = bool((K < m and w[K] - w[K - 1] <= GAP_TOL) or np.linalg.matrix_rank(U, tol=1e-8) < K)
    if K == 1:
        labels = [0] * m
    else:
        km = KMeans(n_clusters=K, init="k-means++", n_init=20, random_state=seed).fit(U)
        labels = _relabel(km.labels_)
    k_eff = max(labels) + 1
    return Partition(
        K=k_eff,
        assignment=labels,
        cut=cut_weight(W, labels),
        internal=internal_weights(W, labels, k_eff),
        eigenvalues=[float(x) for x in w],
        degenerate=degenerate,
    )


# -- export -----------------------------------------------------------
def adjacency_csv(W) -> str:
    buf = io.StringIO()
    for row in np.asarray(W, dtype=float):
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def read_adjacency_csv(text: str) -> np.ndarray:
    return np.array([[float(x) for x in line.split(",")] for line in text.strip().splitlines()])


def to_dot(W, partition: Partition | None = None, labels: Sequence[str] | None = None) -> str:
    """Undirected DOT graph; pen width 0.5 + 4 w/max(w), nodes coloured by cluster."""
    W = np.asarray(W, dtype=float)
    m = len(W)
    wmax = float(W.max()) if m else 0.0
    lines = ["graph energy {", "  node [shape=circle, style=filled];"]
    for i in range(m):
        c = PALETTE[partition.assignment[i] % len(PALETTE)] if partition else PALETTE[-1]
        name = labels[i] if labels else str(i + 1)
        lines.append(f'  n{i} [label="{name}", fillcolor="{c}"];')
    for i in range(m):
        for j in range(i + 1, m):
            if W[i, j] > 0:
                pw = 0.5 + 4.0 * W[i, j] / wmax
                lines.append(f'  n{i} -- n{j} [penwidth={pw:.4f}, label="{W[i, j]:.3g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
