"""Piecewise linear B-spline graphons with community blocks.

A model is given by boundaries ``zeta`` (0 = zeta_0 < ... < zeta_K = 1), one
equidistant knot vector per segment and a coefficient vector ``gamma`` that
stores, for every ordered block (k, l), an ``L_k x L_l`` coefficient matrix in
row-major order. Blocks are stored in the order (1,1), (1,2), ..., (K,K).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

BlockFunction = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]

_KNOT_SNAP = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def validate_boundaries(zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim != 1 or zeta.size < 2:
        raise ValueError("boundaries need at least the two endpoints 0 and 1")
    if zeta[0] != 0.0 or zeta[-1] != 1.0:
        raise ValueError(f"boundaries must start at 0 and end at 1, got {zeta[0]} and {zeta[-1]}")
    if np.any(np.diff(zeta) <= 0):
        raise ValueError("boundaries must be strictly increasing")
    return zeta


def community_of(u, zeta) -> np.ndarray:
    """0-based community index of each position; u = 1 belongs to the last block."""
    zeta = np.asarray(zeta, dtype=float)
    K = zeta.size - 1
    k = np.searchsorted(zeta[1:-1], np.asarray(u, dtype=float), side="right")
    return np.minimum(k, K - 1)


def allocate_knots(L: int, zeta) -> np.ndarray:
    """Split ``L`` knots over the segments of ``zeta``.

    Minimizes ``sum_k max(width_k * L / L_k, 1) - 1`` subject to
    ``sum L_k = L`` and ``L_k >= 2``. Among (numerically) tied optima the
    lexicographically smallest allocation is returned.
    """
    zeta = validate_boundaries(zeta)
    K = zeta.size - 1
    L = int(L)
    if L < 2 * K:
        raise ValueError(f"knot budget {L} too small for {K} communities (need at least {2 * K})")
    widths = np.diff(zeta)
    counts = np.arange(L + 1)

    def cost(k, n):
        return max(widths[k] * L / n, 1.0) - 1.0

    # best[k][r]: minimal cost of segments k..K-1 using exactly r knots
    best = np.full((K + 1, L + 1), np.inf)
    best[K, 0] = 0.0
    for k in range(K - 1, -1, -1):
        for r in range(2 * (K - k), L + 1):
            best[k, r] = min(cost(k, n) + best[k + 1, r - n] for n in range(2, r - 2 * (K - k - 1) + 1))
    optimum = best[0, L]
    tol = 1e-12 * max(1.0, abs(optimum))

    alloc = []
    remaining = L
    spent = 0.0
    for k in range(K):
        for n in counts[2 : remaining - 2 * (K - k - 1) + 1]:
            if spent + cost(k, n) + best[k + 1, remaining - n] <= optimum + tol:
                alloc.append(int(n))
                spent += cost(k, n)
                remaining -= n
                break
    return np.array(alloc, dtype=int)


def equidistant_knots(zeta, n_knots) -> list[np.ndarray]:
    zeta = np.asarray(zeta, dtype=float)
    return [np.linspace(zeta[k], zeta[k + 1], int(n)) for k, n in enumerate(n_knots)]


def block_offsets(n_knots) -> np.ndarray:
    """Start index of every ordered block (k, l) inside the flat gamma vector."""
    n_knots = np.asarray(n_knots, dtype=int)
    sizes = np.outer(n_knots, n_knots).ravel()
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).reshape(n_knots.size, n_knots.size)


@dataclass(frozen=True)
class SbsgmModel:
    """Blockwise tensor-product linear B-spline graphon."""

    zeta: np.ndarray
    knots: tuple
    gamma: np.ndarray
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        zeta = _frozen(validate_boundaries(self.zeta))
        K = zeta.size - 1
        if len(self.knots) != K:
            raise ValueError(f"expected {K} knot vectors, got {len(self.knots)}")
        knots = []
        for k, tau in enumerate(self.knots):
            tau = np.asarray(tau, dtype=float)
            if tau.size < 2:
                raise ValueError(f"community {k + 1} needs at least 2 knots")
            if not (np.isclose(tau[0], zeta[k], rtol=0, atol=1e-12) and np.isclose(tau[-1], zeta[k + 1], rtol=0, atol=1e-12)):
                raise ValueError(f"knots of community {k + 1} must span [{zeta[k]}, {zeta[k + 1]}]")
            step = np.diff(tau)
            if np.any(step <= 0) or not np.allclose(step, step[0], rtol=1e-9, atol=1e-12):
                raise ValueError(f"knots of community {k + 1} must be strictly increasing and equidistant")
            knots.append(_frozen(tau))
        n_knots = np.array([t.size for t in knots])
        gamma = np.asarray(self.gamma, dtype=float).ravel()
        expected = int(np.sum(np.outer(n_knots, n_knots)))
        if gamma.size != expected:
            raise ValueError(f"gamma has {gamma.size} entries, expected {expected}")
        if np.any(~np.isfinite(gamma)) or np.any(gamma < 0) or np.any(gamma > 1):
            raise ValueError("gamma entries must lie in [0, 1]")
        offsets = block_offsets(n_knots)
        for k, l in itertools.product(range(K), repeat=2):
            if l < k:
                continue
            a = gamma[offsets[k, l] : offsets[k, l] + n_knots[k] * n_knots[l]].reshape(n_knots[k], n_knots[l])
            b = gamma[offsets[l, k] : offsets[l, k] + n_knots[l] * n_knots[k]].reshape(n_knots[l], n_knots[k])
            if not np.array_equal(a, b.T):
                raise ValueError(f"gamma is not symmetric between blocks ({k + 1},{l + 1}) and ({l + 1},{k + 1})")
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "knots", tuple(knots))
        object.__setattr__(self, "gamma", _frozen(gamma))
        object.__setattr__(self, "offsets", _frozen(offsets, dtype=np.int64))

    @property
    def K(self) -> int:
        return self.zeta.size - 1

    @property
    def n_knots(self) -> np.ndarray:
        return np.array([t.size for t in self.knots])

    def block(self, k: int, l: int) -> np.ndarray:
        """Coefficient matrix of the ordered block (k, l), 0-based."""
        Lk, Ll = self.knots[k].size, self.knots[l].size
        start = self.offsets[k, l]
        return self.gamma[start : start + Lk * Ll].reshape(Lk, Ll)

    def __call__(self, u, v):
        return evaluate(self, u, v)


def locate(zeta, n_knots, u):
    """Community, left knot index and local weight of each position.

    Returns ``(k, p, t)`` such that the basis row of ``u`` is zero except for
    ``1 - t`` at knot ``p`` and ``t`` at knot ``p + 1`` of community ``k``.
    """
    zeta = np.asarray(zeta, dtype=float)
    n_knots = np.asarray(n_knots)
    u = np.asarray(u, dtype=float)
    k = community_of(u, zeta)
    Lk = n_knots[k]
    x = (u - zeta[k]) / (zeta[k + 1] - zeta[k]) * (Lk - 1)
    x = np.clip(x, 0.0, Lk - 1)
    r = np.round(x)
    x = np.where(np.abs(x - r) < _KNOT_SNAP, r, x)
    p = np.minimum(np.floor(x).astype(np.int64), Lk - 2)
    t = x - p
    return k, p, t


def basis_row(model: SbsgmModel, k: int, u: float) -> np.ndarray:
    """Hat-function basis values of community ``k`` (0-based) at ``u``."""
    lo, hi = model.zeta[k], model.zeta[k + 1]
    if not lo <= u <= hi:
        raise ValueError(f"position {u} outside segment [{lo}, {hi}] of community {k + 1}")
    Lk = model.knots[k].size
    x = (u - lo) / (hi - lo) * (Lk - 1)
    if abs(x - round(x)) < _KNOT_SNAP:
        x = float(round(x))
    p = min(int(np.floor(x)), Lk - 2)
    t = x - p
    row = np.zeros(Lk)
    row[p] = 1.0 - t
    row[p + 1] += t
    return row


def _bilinear(gamma, offsets, n_knots, ku, pu, tu, kv, pv, tv):
    Ll = n_knots[kv]
    base = offsets[ku, kv] + pu * Ll + pv
    g00 = gamma[base]
    g01 = gamma[base + 1]
    g10 = gamma[base + Ll]
    g11 = gamma[base + Ll + 1]
    su, sv = 1.0 - tu, 1.0 - tv
    # grouped so that swapping (u, v) reproduces the value bit for bit
    return (su * sv * g00 + tu * tv * g11) + (su * tv * g01 + tu * sv * g10)


def evaluate(model: SbsgmModel, u, v):
    """Graphon value w(u, v); broadcasts over array arguments."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    ku, pu, tu = locate(model.zeta, model.n_knots, u)
    kv, pv, tv = locate(model.zeta, model.n_knots, v)
    out = _bilinear(model.gamma, model.offsets, model.n_knots, ku, pu, tu, kv, pv, tv)
    return out if out.ndim else float(out)


def hat_integrals(tau) -> np.ndarray:
    """Integrals of the hat functions on knots ``tau`` (trapezoid weights)."""
    h = np.diff(tau)
    w = np.zeros(tau.size)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def marginal_g(model: SbsgmModel, u):
    """Exact ``g(u) = integral of w(u, v) dv``."""
    u = np.asarray(u, dtype=float)
    ku, pu, tu = locate(model.zeta, model.n_knots, u)
    # per community k, the vector gamma_kl @ integrals_l, concatenated over l
    out = np.zeros(u.shape)
    for k in range(model.K):
        rows = sum(model.block(k, l) @ hat_integrals(model.knots[l]) for l in range(model.K))
        mask = ku == k
        out[mask] = (1 - tu[mask]) * rows[pu[mask]] + tu[mask] * rows[pu[mask] + 1]
    return out if out.ndim else float(out)


def edge_density(model: SbsgmModel) -> float:
    """``double integral of w``: expected edge density."""
    total = 0.0
    for k, l in itertools.product(range(model.K), repeat=2):
        total += hat_integrals(model.knots[k]) @ model.block(k, l) @ hat_integrals(model.knots[l])
    return float(total)


def constant_model(value: float, K: int = 1, n_knots=None, zeta=None) -> SbsgmModel:
    zeta = np.linspace(0, 1, K + 1) if zeta is None else np.asarray(zeta, dtype=float)
    K = zeta.size - 1
    n_knots = [2] * K if n_knots is None else list(n_knots)
    size = int(np.sum(np.outer(n_knots, n_knots)))
    return SbsgmModel(zeta, tuple(equidistant_knots(zeta, n_knots)), np.full(size, float(value)))


def model_from_blocks(zeta, knots, blocks) -> SbsgmModel:
    """Assemble a model from a K x K nested list of coefficient matrices."""
    K = len(knots)
    gamma = np.concatenate([np.asarray(blocks[k][l], dtype=float).ravel() for k in range(K) for l in range(K)])
    return SbsgmModel(np.asarray(zeta, dtype=float), tuple(knots), gamma)


@dataclass(frozen=True)
class BlockGraphonSpec:
    """Community proportions plus per-block functions on local coordinates.

    ``blocks[k][l]`` is a constant or a vectorized callable ``f(x, y)`` on
    ``[0, 1]^2`` giving the connection probability between a node at relative
    position ``x`` in community ``k`` and a node at ``y`` in community ``l``.
    """

    alpha: np.ndarray
    blocks: Sequence[Sequence[BlockFunction]]

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 1:
            raise ValueError("alpha must be a non-empty vector")
        if np.any(alpha <= 0) or not np.isclose(alpha.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("community proportions must be positive and sum to 1")
        K = alpha.size
        if len(self.blocks) != K or any(len(row) != K for row in self.blocks):
            raise ValueError(f"blocks must be a {K}x{K} grid")
        object.__setattr__(self, "alpha", _frozen(alpha))

    @property
    def K(self) -> int:
        return self.alpha.size

    @classmethod
    def sbm(cls, alpha, P):
        P = np.asarray(P, dtype=float)
        return cls(alpha, [[float(P[k, l]) for l in range(P.shape[1])] for k in range(P.shape[0])])


def _sample_block(f: BlockFunction, x, y) -> np.ndarray:
    X, Y = np.meshgrid(x, y, indexing="ij")
    if callable(f):
        return np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape)
    return np.full(X.shape, float(f))


def from_block_spec(spec: BlockGraphonSpec, resolution: int) -> SbsgmModel:
    """Interpolate the block functions of ``spec`` at a knot grid.

    ``resolution`` is the total knot budget, distributed by
    :func:`allocate_knots` over the communities.
    """
    zeta = np.concatenate([[0.0], np.cumsum(spec.alpha)])
    zeta[-1] = 1.0
    n_knots = allocate_knots(resolution, zeta)
    knots = equidistant_knots(zeta, n_knots)
    local = [np.linspace(0.0, 1.0, n) for n in n_knots]
    K = spec.K
    blocks = [[None] * K for _ in range(K)]
    for k in range(K):
        for l in range(k, K):
            G = _sample_block(spec.blocks[k][l], local[k], local[l])
            H = _sample_block(spec.blocks[l][k], local[l], local[k])
            if not np.allclose(G, H.T, rtol=0, atol=1e-12):
                raise ValueError(f"block functions ({k + 1},{l + 1}) and ({l + 1},{k + 1}) are not mirror images")
            if k == l:
                G = np.triu(G) + np.triu(G, 1).T
            if np.any(G < 0) or np.any(G > 1):
                raise ValueError(f"block ({k + 1},{l + 1}) leaves [0, 1]")
            blocks[k][l] = G
            blocks[l][k] = G.T
    return model_from_blocks(zeta, knots, blocks)


@dataclass(frozen=True)
class Network:
    """Undirected simple graph on nodes ``0..N-1``."""

    N: int
    edges: np.ndarray

    def __post_init__(self):
        N = int(self.N)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if N < 1:
            raise ValueError("a network needs at least one node")
        if edges.size and (edges.min() < 0 or edges.max() >= N):
            raise ValueError(f"edge endpoints must lie in 0..{N - 1}")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        edges = np.sort(edges, axis=1)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        if edges.shape[0] > 1 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise ValueError("duplicate edges are not allowed")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "edges", _frozen(edges, dtype=np.int64))

    @classmethod
    def from_adjacency(cls, A) -> "Network":
        A = np.asarray(A)
        if A.shape[0] != A.shape[1] or not np.array_equal(A, A.T):
            raise ValueError("adjacency matrix must be square and symmetric")
        if np.any(np.diag(A)):
            raise ValueError("self-loops are not allowed")
        i, j = np.nonzero(np.triu(A, 1))
        return cls(A.shape[0], np.column_stack([i, j]))

    @property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.N, self.N), dtype=np.int8)
        A[self.edges[:, 0], self.edges[:, 1]] = 1
        A[self.edges[:, 1], self.edges[:, 0]] = 1
        return A

    @property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.N)

    @property
    def density(self) -> float:
        return 2.0 * self.edges.shape[0] / (self.N * (self.N - 1)) if self.N > 1 else 0.0


@dataclass(frozen=True)
class LatentState:
    """Latent positions in [0, 1] with labels derived from boundaries."""

    u: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if np.any(~np.isfinite(u)) or np.any(u < 0) or np.any(u > 1):
            raise ValueError("latent positions must lie in [0, 1]")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "zeta", _frozen(validate_boundaries(self.zeta)))

    @property
    def labels(self) -> np.ndarray:
        return community_of(self.u, self.zeta)


def sample_network(model: SbsgmModel, N: int, seed=None) -> tuple[Network, LatentState]:
    """Draw uniform positions and Bernoulli edges ``y_ij ~ w(U_i, U_j)``, i < j."""
    if N < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    u = rng.random(N)
    i, j = np.triu_indices(N, 1)
    p = evaluate(model, u[i], u[j])
    hit = rng.random(i.size) < p
    return Network(N, np.column_stack([i[hit], j[hit]])), LatentState(u, model.zeta)
