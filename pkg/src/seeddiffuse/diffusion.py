"""Gaussian affinities and seeded random-walk diffusion on the superpixel graph.

For a category the label vector ``q`` minimises the graph energy

    E(q) = 1/2 * sum_{i,j} z_ij (q_i - q_j)^2

with seed nodes held at fixed values. Clamping only 1-seeds leaves ``q = 1``
as a trivial minimiser, so competing seeds (other categories, background) are
clamped to 0. The minimiser is then the harmonic function with those boundary
values, i.e. the solution of the reduced Laplacian system
``L_UU q_U = W_UC q_C`` over the unclamped nodes ``U``.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import NonConvergence, NonPositiveSigma, NoPositiveSeeds, TooLarge

AFFINITY_NORMS = ("linear", "squared")
ORACLE_MAX_NODES = 200


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric weighted graph over superpixels.

    ``edges`` is (E, 2) with i < j; ``weights[e]`` is z for ``edges[e]`` and
    stands for both directions.
    """

    n: int
    edges: np.ndarray
    weights: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if edges.shape[0] != weights.shape[0]:
            raise ValueError("one weight per edge required")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise ValueError("edge endpoint outside [0, n)")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if np.any(~(weights > 0)) or np.any(weights > 1):
            raise ValueError("affinities must lie in (0, 1]")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.stack([lo, hi], axis=1)
        for arr in (edges, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    def weight_matrix(self):
        """Symmetric CSR matrix of affinities."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([self.weights, self.weights])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def degrees(self):
        return np.asarray(self.weight_matrix().sum(axis=1)).ravel()


@dataclass(frozen=True)
class SeedAssignment:
    clamp_one: frozenset
    clamp_zero: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        one = frozenset(int(i) for i in self.clamp_one)
        zero = frozenset(int(i) for i in self.clamp_zero)
        if not one:
            raise NoPositiveSeeds("at least one node must be clamped to 1")
        if one & zero:
            raise ValueError(f"nodes clamped to both 0 and 1: {sorted(one & zero)}")
        object.__setattr__(self, "clamp_one", one)
        object.__setattr__(self, "clamp_zero", zero)

    def clamp_vector(self, n):
        """(mask, values) over ``n`` nodes."""
        nodes = self.clamp_one | self.clamp_zero
        if nodes and (min(nodes) < 0 or max(nodes) >= n):
            raise ValueError(f"seed node outside [0, {n})")
        mask = np.zeros(n, dtype=bool)
        values = np.zeros(n)
        mask[list(nodes)] = True
        values[list(self.clamp_one)] = 1.0
        return mask, values


@dataclass(frozen=True)
class DiffusionField:
    q: np.ndarray
    seeds: SeedAssignment
    residual: float
    iterations: int = 0
    converged: bool = True


def build_affinity(adj, feats, sigma, norm="linear"):
    """Gaussian affinities ``z_ij = exp(-d_ij / (2 sigma^2))`` on adjacency edges.

    ``d_ij`` is the Euclidean distance between the superpixel features; with
    ``norm="squared"`` it is the squared distance (the usual Gaussian kernel).
    """
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    if norm not in AFFINITY_NORMS:
        raise ValueError(f"norm must be one of {AFFINITY_NORMS}")
    f = np.asarray(feats.features, dtype=np.float64)
    edges = np.asarray(adj.edges, dtype=np.int64).reshape(-1, 2)
    diff = f[edges[:, 0]] - f[edges[:, 1]]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    if norm == "squared":
        dist = dist * dist
    z = np.exp(-dist / (2.0 * sigma * sigma))
    # keep z in (0, 1] and z == 1 only for identical features
    z = np.maximum(z, np.finfo(np.float64).tiny)
    z[(dist > 0) & (z >= 1.0)] = np.nextafter(1.0, 0.0)
    return AffinityGraph(adj.n, edges, z, float(sigma))


def energy(g, q):
    """1/2 * sum over ordered pairs of z_ij (q_i - q_j)^2 (each edge counted once)."""
    q = np.asarray(q, dtype=np.float64)
    d = q[g.edges[:, 0]] - q[g.edges[:, 1]]
    return float(np.sum(g.weights * d * d))


def harmonic_defect(g, q, seeds):
    """Largest |q_i - weighted neighbour mean| over unclamped nodes with neighbours."""
    q = np.asarray(q, dtype=np.float64)
    mask, _ = seeds.clamp_vector(g.n)
    w = g.weight_matrix()
    deg = np.asarray(w.sum(axis=1)).ravel()
    free = (~mask) & (deg > 0)
    if not free.any():
        return 0.0
    avg = (w @ q)[free] / deg[free]
    return float(np.max(np.abs(q[free] - avg)))


def _component_split(g, mask, values):
    """Classify unclamped nodes by what their connected component holds.

    Returns ``(solve, constant)``: ``solve`` marks unclamped nodes in
    components with both clamp values, ``constant`` maps the remaining
    unclamped nodes to their fixed value (the single clamp value of their
    component, or 0 when the component holds no clamp at all).
    """
    n_comp, comp = connected_components(g.weight_matrix(), directed=False)
    has = np.zeros((n_comp, 2), dtype=bool)
    has[comp[mask], values[mask].astype(np.int64)] = True
    mixed = has[:, 0] & has[:, 1]
    const = np.where(has[:, 1] & ~has[:, 0], 1.0, 0.0)
    free = ~mask
    solve = free & mixed[comp]
    constant = np.where(free & ~mixed[comp], const[comp], 0.0)
    return solve, constant


def _pcg_jacobi(a, b, diag, tol, max_iters):
    """Jacobi-preconditioned conjugate gradient for SPD ``a``.

    Convergence is measured on the diagonally scaled residual
    ``max |r_i / a_ii|`` relative to ``max |b_i / a_ii|``; for the reduced
    Laplacian this is the largest deviation from harmonicity.
    """
    x = np.zeros_like(b)
    scale = np.max(np.abs(b / diag))
    if scale == 0.0:
        return x, 0.0, 0
    inv_d = 1.0 / diag

    def rel(res):
        return float(np.max(np.abs(res * inv_d)) / scale)

    r = b.copy()
    z = r * inv_d
    p = z.copy()
    rz = float(r @ z)
    res = rel(r)
    it = 0
    while it < max_iters and res > tol:
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        res = rel(r)
        if res <= tol:
            # guard against drift of the recursive residual
            r = b - a @ x
            res = rel(r)
            if res <= tol:
                break
            z = r * inv_d
            p = z.copy()
            rz = float(r @ z)
            continue
        z = r * inv_d
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = rel(b - a @ x)
    return x, res, it


def solve_diffusion(g, seeds, tol=1e-8, max_iters=None):
    """Minimise the clamped graph energy by CG on the reduced Laplacian.

    Components whose clamps all share one value are filled with that value
    directly; unclamped nodes in components without any clamped node get 0.

    Raises
    ------
    NonConvergence
        If the scaled residual is still above ``tol`` after ``max_iters``
        iterations; the partial result is attached as ``exc.field``.
    """
    mask, values = seeds.clamp_vector(g.n)
    if max_iters is None:
        max_iters = 10 * g.n
    free, constant = _component_split(g, mask, values)
    q = np.where(mask, values, constant)
    residual, iterations = 0.0, 0
    if free.any():
        w = g.weight_matrix()
        deg = np.asarray(w.sum(axis=1)).ravel()
        w_ff = w[free][:, free]
        a = (sparse.diags(deg[free]) - w_ff).tocsr()
        b = w[free][:, mask] @ values[mask]
        x, residual, iterations = _pcg_jacobi(a, b, deg[free], tol, max_iters)
        q[free] = np.clip(x, 0.0, 1.0)
    q.setflags(write=False)
    converged = residual <= tol
    result = DiffusionField(q, seeds, residual, iterations, converged)
    if not converged:
        raise NonConvergence(
            f"CG residual {residual:.3e} > tol {tol:.1e} after {iterations} iterations",
            field=result,
        )
    return result


def solve_diffusion_oracle(g, seeds):
    """Dense direct solve of the same reduced system; test oracle only.

    Works on an explicit dense matrix with its own reachability search, so
    it shares no code path with :func:`solve_diffusion`.
    """
    n = g.n
    if n > ORACLE_MAX_NODES:
        raise TooLarge(f"dense oracle limited to {ORACLE_MAX_NODES} nodes, got {n}")
    w = np.zeros((n, n))
    for (i, j), z in zip(g.edges.tolist(), g.weights.tolist()):
        w[i, j] += z
        w[j, i] += z
    fixed = {}
    for i in seeds.clamp_zero:
        fixed[i] = 0.0
    for i in seeds.clamp_one:
        fixed[i] = 1.0

    seen = set(fixed)
    queue = deque(fixed)
    while queue:
        u = queue.popleft()
        for v in np.nonzero(w[u])[0].tolist():
            if v not in seen:
                seen.add(v)
                queue.append(v)

    q = np.zeros(n)
    for i, v in fixed.items():
        q[i] = v
    free = [i for i in range(n) if i in seen and i not in fixed]
    if free:
        clamped = sorted(fixed)
        lap = np.diag(w.sum(axis=1)) - w
        a = lap[np.ix_(free, free)]
        b = -lap[np.ix_(free, clamped)] @ q[clamped]
        q[free] = np.linalg.solve(a, b)
    residual = harmonic_defect(g, q, seeds)
    q.setflags(write=False)
    return DiffusionField(q, seeds, residual, 0, True)


def solve_diffusion_jacobi(g, seeds, iters):
    """Fixed-budget diffusion ``q <- D^-1 W q`` from zero, re-clamping each step."""
    mask, values = seeds.clamp_vector(g.n)
    w = g.weight_matrix()
    deg = np.asarray(w.sum(axis=1)).ravel()
    has_nb = deg > 0
    q = np.where(mask, values, 0.0)
    for _ in range(int(iters)):
        nxt = np.zeros_like(q)
        nxt[has_nb] = (w @ q)[has_nb] / deg[has_nb]
        q = np.where(mask, values, nxt)
    residual = harmonic_defect(g, q, seeds)
    q.setflags(write=False)
    return DiffusionField(q, seeds, residual, int(iters), True)


def competing_seeds(per_class_seeds):
    """Add every other class's 1-seeds to each class's 0-clamps."""
    out = {}
    for c, s in per_class_seeds.items():
        others = set()
        for c2, s2 in per_class_seeds.items():
            if c2 != c:
                others |= s2.clamp_one
        out[c] = SeedAssignment(s.clamp_one, (s.clamp_zero | others) - s.clamp_one)
    return out


def diffuse_all_classes(
    g, per_class_seeds, tol=1e-8, max_iters=None, mode="clamped", jacobi_iters=100, workers=1
):
    """Run one independent diffusion per class.

    Parameters
    ----------
    per_class_seeds : dict
        class index -> SeedAssignment. Each class is additionally clamped to
        0 on the other classes' positive seeds.
    mode : {"clamped", "jacobi"}
        Exact CG solve, or the fixed-budget Jacobi iteration.
    workers : int
        Thread count for the per-class solves; results do not depend on it.

    Raises
    ------
    NonConvergence
        After all classes ran, if any of them did not converge. ``exc.fields``
        holds the result for every class.
    """
    if not per_class_seeds:
        raise ValueError("at least one class is required")
    if mode not in ("clamped", "jacobi"):
        raise ValueError(f"unknown diffusion mode {mode!r}")
    seeds = competing_seeds(per_class_seeds)
    classes = sorted(seeds)

    def run(c):
        if mode == "jacobi":
            return solve_diffusion_jacobi(g, seeds[c], jacobi_iters), None
        try:
            return solve_diffusion(g, seeds[c], tol, max_iters), None
        except NonConvergence as exc:
            return exc.field, exc

    if workers and workers > 1 and len(classes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, classes))
    else:
        results = [run(c) for c in classes]

    fields = {c: f for c, (f, _) in zip(classes, results)}
    failed = [c for c, (_, exc) in zip(classes, results) if exc is not None]
    if failed:
        raise NonConvergence(f"diffusion did not converge for classes {failed}", fields=fields)
    return fields
