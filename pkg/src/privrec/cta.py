"""Clustering transformation: trust-modulated obfuscation of rating data.

Pipeline per vertical column subset: cluster rows around high-field core
points, estimate geodesic distances over a k-NN graph inside each cluster,
embed the cluster with classical MDS at a trust-selected dimension, bring
the embedding back into the subset's item columns, then apply one random
planar rotation per cluster.  Unrated cells must be imputed by the caller.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from dataclasses import field as dc_field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

log = logging.getLogger(__name__)

# zero-length edges are stored as this so sparse graph routines keep them
_ZERO_EDGE = np.finfo(float).tiny


class CtaError(ValueError):
    pass


@dataclass(frozen=True)
class ObfuscationPlan:
    L: int = 10
    sigma: float = 4.0
    k_core: int = 2
    k_nn: int = 5
    trust_intervals: tuple[tuple[float, float, int], ...] = ((0.0, 0.5, 2), (0.5, 1.0, 10))
    angle_range: tuple[float, float] = (0.0, 2 * math.pi)
    rng_seed: int = 0
    # "procrustes": map the embedding back onto the cluster's item axes and
    # centroid; "none": leave centred, zero-padded MDS coordinates in place
    align: str = "procrustes"

    def __post_init__(self):
        object.__setattr__(
            self, "trust_intervals", tuple(tuple(iv) for iv in self.trust_intervals)
        )
        object.__setattr__(self, "angle_range", tuple(self.angle_range))
        if self.L < 1:
            raise CtaError("L must be >= 1")
        if self.sigma <= 0:
            raise CtaError("sigma must be positive")
        if self.k_core < 1 or self.k_nn < 1:
            raise CtaError("k_core and k_nn must be >= 1")
        lo, hi = self.angle_range
        if lo > hi:
            raise CtaError("angle range is reversed")
        if self.align not in ("procrustes", "none"):
            raise CtaError(f"unknown alignment {self.align!r}")
        ivs = self.trust_intervals
        if not ivs:
            raise CtaError("no trust intervals")
        if ivs[0][0] != 0.0 or ivs[-1][1] != 1.0:
            raise CtaError("trust intervals must cover [0, 1]")
        for (lo1, hi1, d1), (lo2, hi2, d2) in zip(ivs, ivs[1:]):
            if hi1 != lo2:
                raise CtaError("trust intervals must be contiguous and non-overlapping")
            if d2 < d1:
                raise CtaError("higher trust must not get a smaller dimension")
        for lo_, hi_, d in ivs:
            if not lo_ < hi_ or d < 1:
                raise CtaError(f"bad trust interval {(lo_, hi_, d)}")

    @property
    def max_d(self) -> int:
        return self.trust_intervals[-1][2]

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_fixed_d(self, d: int) -> "ObfuscationPlan":
        """Same plan, one interval mapping every trust level to ``d``."""
        return replace(self, trust_intervals=((0.0, 1.0, int(d)),))


@dataclass
class ObfuscatedProfile:
    matrix: np.ndarray
    cluster_assignment: list[np.ndarray]
    subset_layout: list[np.ndarray]
    # columns appended to a short final subset, already owned elsewhere
    duplicated: list[np.ndarray]
    d_used: list[list[int]]
    rotations: list[list[tuple[int, int, float]]]
    plan_fingerprint: str
    d_requested: int
    truncated_mass: list[list[float]] = dc_field(default_factory=list)

    def sidecar(self) -> dict:
        return {
            "plan_fingerprint": self.plan_fingerprint,
            "d_requested": self.d_requested,
            "subset_layout": [s.tolist() for s in self.subset_layout],
            "duplicated": [s.tolist() for s in self.duplicated],
            "cluster_assignment": [c.tolist() for c in self.cluster_assignment],
            "d_used": self.d_used,
            "rotations": [[[a, b, th] for a, b, th in r] for r in self.rotations],
            "truncated_mass": self.truncated_mass,
        }


def partition_vertical(n_cols: int, L: int, rng) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Contiguous column blocks of width ``L``.

    A short final block is topped up with randomly chosen columns that
    already belong to other blocks.  Returns ``(subsets, duplicated)`` where
    ``duplicated[j]`` lists the borrowed columns of subset ``j``.
    """
    if L < 1:
        raise CtaError("L must be >= 1")
    if L > n_cols:
        log.warning("subset width %d exceeds %d columns; using one subset", L, n_cols)
        return [np.arange(n_cols)], [np.zeros(0, dtype=int)]
    subsets, duplicated = [], []
    for start in range(0, n_cols, L):
        block = np.arange(start, min(start + L, n_cols))
        extra = np.zeros(0, dtype=int)
        if block.size < L:
            pool = np.arange(0, start)
            extra = np.sort(rng.choice(pool, size=L - block.size, replace=False))
            block = np.concatenate([block, extra])
        subsets.append(block)
        duplicated.append(extra)
    return subsets, duplicated


def influence(x_i, x_j, sigma: float) -> float:
    d2 = float(np.sum((np.asarray(x_i, float) - np.asarray(x_j, float)) ** 2))
    return math.exp(-d2 / (2.0 * sigma * sigma))


def field(x_j, dataset, sigma: float) -> float:
    pts = np.atleast_2d(np.asarray(dataset, float))
    if pts.shape[0] == 0:
        raise CtaError("empty dataset")
    d2 = np.sum((pts - np.asarray(x_j, float)) ** 2, axis=1)
    return float(np.exp(-d2 / (2.0 * sigma * sigma)).sum())


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def euclidean_matrix(X) -> np.ndarray:
    X = np.asarray(X, float)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def lla_cluster(points, K: int, sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Field-driven clustering.

    The ``K`` rows with the highest field become core points (lowest index
    wins ties); each core owns itself, every other row joins the core with
    the largest influence on it (lowest core wins ties).

    Returns ``(labels, fields, cores)``; labels index into ``cores``.
    """
    X = np.asarray(points, float)
    n = X.shape[0]
    if K > n:
        raise CtaError(f"K={K} exceeds {n} rows")
    d2 = _sq_dists(X)
    fields = np.exp(-d2 / (2.0 * sigma * sigma)).sum(axis=1)
    cores = np.argsort(-fields, kind="stable")[:K]
    # max influence == min distance; comparing distances avoids underflow
    labels = np.argmin(d2[:, cores], axis=1)
    labels[cores] = np.arange(K)
    return labels, fields, cores


def knn_graph(X, k_nn: int) -> np.ndarray:
    """Symmetric k-NN adjacency with Euclidean edge lengths (``inf`` = no edge)."""
    D = euclidean_matrix(X)
    n = D.shape[0]
    W = np.full((n, n), np.inf)
    if n < 2:
        return W
    k = min(k_nn, n - 1)
    for i in range(n):
        order = np.argsort(D[i], kind="stable")
        nbrs = [j for j in order if j != i][:k]
        W[i, nbrs] = D[i, nbrs]
        W[nbrs, i] = D[i, nbrs]
    return W


def bridge_components(W: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Join components by repeatedly adding the shortest inter-component edge."""
    W = W.copy()
    added = []
    while True:
        n_comp, comp = connected_components(_as_sparse(W), directed=False)
        if n_comp <= 1:
            return W, added
        cross = comp[:, None] != comp[None, :]
        cand = np.where(cross, D, np.inf)
        flat = int(np.argmin(cand))  # row-major: lowest (i, j) among ties
        i, j = divmod(flat, D.shape[0])
        W[i, j] = W[j, i] = D[i, j]
        added.append((i, j))


def _as_sparse(W: np.ndarray) -> csr_matrix:
    finite = np.isfinite(W)
    vals = np.where(finite, np.where(W == 0.0, _ZERO_EDGE, W), 0.0)
    return csr_matrix(vals)


def knn_geodesic(points, k_nn: int) -> np.ndarray:
    """All-pairs shortest paths over the symmetric k-NN graph of ``points``."""
    X = np.atleast_2d(np.asarray(points, float))
    n = X.shape[0]
    if n < 2:
        return np.zeros((n, n))
    D = euclidean_matrix(X)
    W, _ = bridge_components(knn_graph(X, k_nn), D)
    G = dijkstra(_as_sparse(W), directed=False)
    G[G <= _ZERO_EDGE * n] = 0.0
    np.fill_diagonal(G, 0.0)
    return G


@dataclass
class Embedding:
    coords: np.ndarray
    eigenvalues: np.ndarray
    d_used: int
    truncated_mass: float


def classical_mds(D, d: int, tol: float = 1e-9) -> Embedding:
    """Classical MDS of a distance matrix into at most ``d`` dimensions.

    Negative eigenvalues are dropped; ``truncated_mass`` reports their share
    of the absolute spectrum.
    """
    D = np.asarray(D, float)
    n = D.shape[0]
    if n < 2:
        return Embedding(np.zeros((n, 0)), np.zeros(0), 0, 0.0)
    if d < 1:
        raise CtaError("target dimension must be >= 1")
    H = np.eye(n) - np.ones((n, n)) / n
    B = -H @ (D ** 2) @ H / 2.0
    B = (B + B.T) / 2.0
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    total = np.abs(evals).sum()
    neg = -evals[evals < 0].sum()
    truncated = float(neg / total) if total > 0 else 0.0
    scale = max(evals[0], 0.0)
    rank = int(np.sum(evals > tol * max(scale, 1e-300))) if scale > 0 else 0
    k = min(d, rank)
    coords = evecs[:, :k] * np.sqrt(evals[:k])
    return Embedding(coords, evals[:k], k, truncated)


def stress(D, coords) -> float:
    """Frobenius gap between the inner-product forms of ``D`` and the embedding."""
    D = np.asarray(D, float)
    n = D.shape[0]
    H = np.eye(n) - np.ones((n, n)) / n
    tau_D = -H @ (D ** 2) @ H / 2.0
    Y = np.asarray(coords, float)
    tau_Y = -H @ _sq_dists(Y) @ H / 2.0 if Y.size else np.zeros_like(tau_D)
    return float(np.linalg.norm(tau_D - tau_Y))


def select_d(plan: ObfuscationPlan, trust) -> int:
    """Embedding dimension for a trust level: half-open intervals, last one closed."""
    t = float(getattr(trust, "value", trust))
    if not 0.0 <= t <= 1.0:
        raise CtaError(f"trust {t} outside [0, 1]")
    ivs = plan.trust_intervals
    for lo, hi, d in ivs:
        if lo <= t < hi:
            return d
    if t == ivs[-1][1]:
        return ivs[-1][2]
    raise CtaError(f"trust {t} not covered by the plan")


def rotate_pair(coords, a: int, b: int, theta: float) -> np.ndarray:
    Y = np.array(coords, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        log.debug("rotation skipped: fewer than two columns")
        return Y
    if a == b or not (0 <= a < Y.shape[1] and 0 <= b < Y.shape[1]):
        raise CtaError("rotation needs two distinct valid columns")
    c, s = math.cos(theta), math.sin(theta)
    va, vb = Y[:, a].copy(), Y[:, b].copy()
    Y[:, a] = c * va - s * vb
    Y[:, b] = s * va + c * vb
    return Y


def pad_columns(coords: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((coords.shape[0], width))
    k = min(coords.shape[1], width)
    out[:, :k] = coords[:, :k]
    return out


def procrustes_rotation(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` minimising ``||source @ R - target||``."""
    U, _, Vt = np.linalg.svd(source.T @ target)
    return U @ Vt


def embed_cluster(points, d: int, k_nn: int, align: str = "procrustes") -> tuple[np.ndarray, int, float]:
    """Geodesic MDS of one cluster, returned in the cluster's own column space.

    Returns ``(coords, d_used, truncated_mass)``; ``coords`` has the same
    shape as ``points``.
    """
    X = np.atleast_2d(np.asarray(points, float))
    n, width = X.shape
    if n < 2:
        return X.copy(), 0, 0.0
    emb = classical_mds(knn_geodesic(X, k_nn), min(d, n - 1, width))
    Y = pad_columns(emb.coords, width)
    if align == "none":
        return Y, emb.d_used, emb.truncated_mass
    centroid = X.mean(axis=0)
    R = procrustes_rotation(Y, X - centroid)
    return Y @ R + centroid, emb.d_used, emb.truncated_mass


def obfuscate(m, plan: ObfuscationPlan, trust=1.0, d: int | None = None) -> ObfuscatedProfile:
    """Obfuscate a dense matrix (rows = records, columns = items).

    ``d`` overrides the trust-selected dimension.  Output has the input's
    shape; a column that appears in several subsets takes its value from the
    subset that owns it.
    """
    X = np.asarray(m, dtype=float)
    if X.ndim != 2:
        raise CtaError("expected a 2-D matrix")
    n_rows, n_cols = X.shape
    d_req = int(d) if d is not None else select_d(plan, trust)
    rng = np.random.default_rng(plan.rng_seed)
    subsets, duplicated = partition_vertical(n_cols, plan.L, rng)
    out = np.empty_like(X)
    assignments, d_used_all, rotations, truncated_all = [], [], [], []
    for cols, dup in zip(subsets, duplicated):
        sub = X[:, cols]
        K = min(plan.k_core, n_rows)
        labels, _, _ = lla_cluster(sub, K, plan.sigma)
        new_sub = np.empty_like(sub)
        d_used, rots, trunc = [], [], []
        for c in range(K):
            members = np.flatnonzero(labels == c)
            coords, du, tm = embed_cluster(sub[members], d_req, plan.k_nn, plan.align)
            a, b = (int(v) for v in rng.choice(sub.shape[1], size=2, replace=False)) if sub.shape[1] >= 2 else (0, 0)
            theta = float(rng.uniform(*plan.angle_range)) if plan.angle_range[0] < plan.angle_range[1] else float(plan.angle_range[0])
            if sub.shape[1] >= 2:
                coords = rotate_pair(coords, a, b, theta)
            new_sub[members] = coords
            d_used.append(du)
            rots.append((a, b, theta))
            trunc.append(tm)
        own = ~np.isin(cols, dup)
        out[:, cols[own]] = new_sub[:, own]
        assignments.append(labels)
        d_used_all.append(d_used)
        rotations.append(rots)
        truncated_all.append(trunc)
    return ObfuscatedProfile(
        out, assignments, subsets, duplicated, d_used_all, rotations,
        plan.fingerprint(), d_req, truncated_all,
    )


def intra_cluster_distortion(original, profile: ObfuscatedProfile) -> float:
    """Mean relative error of within-cluster pairwise distances, per subset."""
    X = np.asarray(original, float)
    Y = profile.matrix
    errs = []
    for cols, dup, labels in zip(profile.subset_layout, profile.duplicated, profile.cluster_assignment):
        own = cols[~np.isin(cols, dup)]
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            if members.size < 2:
                continue
            iu = np.triu_indices(members.size, 1)
            d0 = euclidean_matrix(X[np.ix_(members, own)])[iu]
            d1 = euclidean_matrix(Y[np.ix_(members, own)])[iu]
            keep = d0 > 0
            if keep.any():
                errs.append(np.abs(d1[keep] - d0[keep]) / d0[keep])
    return float(np.concatenate(errs).mean()) if errs else 0.0


def fold(row, width: int) -> np.ndarray:
    """Reshape one profile into rows of ``width`` items, zero-padding the tail."""
    row = np.asarray(row, float)
    n_rows = -(-row.size // width)
    out = np.zeros(n_rows * width)
    out[:row.size] = row
    return out.reshape(n_rows, width)


def unfold(block: np.ndarray, n_items: int) -> np.ndarray:
    return np.asarray(block).reshape(-1)[:n_items]


def obfuscate_profile(row, plan: ObfuscationPlan, trust=1.0, fold_width: int = 10) -> tuple[np.ndarray, ObfuscatedProfile]:
    """Obfuscate a single rating row by treating item blocks as records."""
    block = fold(row, fold_width)
    profile = obfuscate(block, plan, trust)
    return unfold(profile.matrix, len(row)), profile
