"""M-step: penalized, box- and symmetry-constrained spline fit of gamma.

Likelihood, score and Fisher matrix follow the ordered-pair convention: every
pair {i, j} enters twice, as (i, j) in block (k_i, k_j) and as (j, i) in
block (k_j, k_i). Fitting works on the free parameters of the unordered
blocks k <= l (the upper triangle for k = l), which makes the symmetry
constraint implicit and leaves a pure box-constrained problem per block.
"""
from __future__ import annotations

import functools
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _kernels
from .graphon import Network, SbsgmModel, block_offsets, locate, model_from_blocks, validate_boundaries
from .qp import box_qp, projected_gradient

log = logging.getLogger(__name__)

PROB_EPS = 1e-10
LAMBDA_INF = 1e12
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-2, 6, 12)) + (LAMBDA_INF,)
DF_JITTER = 1e-10
# scoring iterations before switching to observed-information Newton steps
FISHER_STEPS = 10


@dataclass(frozen=True)
class BlockDesign:
    """Ordered pairs (i, j) with i in community k and j in community l.

    Each tensor basis row has at most four nonzeros, stored densely as
    column indices ``cols`` and values ``vals`` of shape (n_pairs, 4).
    """

    k: int
    l: int
    shape: tuple
    i: np.ndarray
    j: np.ndarray
    y: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.y.size

    @property
    def n_coef(self) -> int:
        return self.shape[0] * self.shape[1]

    def basis_matrix(self) -> np.ndarray:
        B = np.zeros((self.n_pairs, self.n_coef))
        rows = np.repeat(np.arange(self.n_pairs), 4)
        np.add.at(B, (rows, self.cols.ravel()), self.vals.ravel())
        return B


@dataclass(frozen=True)
class DesignCache:
    """All ordered node pairs, bucketed by block, with their basis rows."""

    zeta: np.ndarray
    knots: tuple
    u: np.ndarray
    blocks: dict = field(repr=False)

    @property
    def K(self) -> int:
        return self.zeta.size - 1

    @property
    def n_knots(self) -> np.ndarray:
        return np.array([t.size for t in self.knots])

    @property
    def offsets(self) -> np.ndarray:
        return block_offsets(self.n_knots)

    @property
    def n_gamma(self) -> int:
        n = self.n_knots
        return int(np.sum(np.outer(n, n)))

    def gamma_block(self, gamma, k, l) -> np.ndarray:
        start = self.offsets[k, l]
        return np.asarray(gamma)[start : start + self.n_knots[k] * self.n_knots[l]]


def _rows(pk, tk, pl, tl, Ll):
    cols = np.stack([pk * Ll + pl, pk * Ll + pl + 1, (pk + 1) * Ll + pl, (pk + 1) * Ll + pl + 1], axis=1)
    sk, sl = 1.0 - tk, 1.0 - tl
    vals = np.stack([sk * sl, sk * tl, tk * sl, tk * tl], axis=1)
    return cols, vals


def build_design(u, zeta, net: Network, knots) -> DesignCache:
    """Partition ordered pairs by block and precompute their basis rows."""
    zeta = validate_boundaries(zeta)
    u = np.asarray(u, dtype=float)
    if u.size != net.N:
        raise ValueError("positions and network sizes differ")
    knots = tuple(np.asarray(t, dtype=float) for t in knots)
    n_knots = np.array([t.size for t in knots])
    kk, pp, tt = locate(zeta, n_knots, u)
    A = net.adjacency
    blocks = {}
    members = [np.flatnonzero(kk == k) for k in range(zeta.size - 1)]
    for k, l in itertools.product(range(zeta.size - 1), repeat=2):
        I, J = np.meshgrid(members[k], members[l], indexing="ij")
        I, J = I.ravel(), J.ravel()
        keep = I != J
        I, J = I[keep], J[keep]
        cols, vals = _rows(pp[I], tt[I], pp[J], tt[J], n_knots[l])
        blocks[k, l] = BlockDesign(k, l, (int(n_knots[k]), int(n_knots[l])), I, J,
                                   A[I, J].astype(float), cols, vals)
    return DesignCache(zeta, knots, u, blocks)


def _pieces(theta, cols, vals, y, weight=1.0, observed=False):
    """Log-likelihood, score and Fisher (or observed) information of one set of rows."""
    return _kernels.pair_terms(np.ascontiguousarray(theta, dtype=float), cols, vals, y, float(weight),
                               PROB_EPS, 2 if observed else 1)


def _loglik_only(theta, cols, vals, y, weight=1.0):
    return _kernels.pair_loglik(np.ascontiguousarray(theta, dtype=float), cols, vals, y, float(weight), PROB_EPS)


def block_log_likelihoods(gamma, cache: DesignCache) -> np.ndarray:
    """K x K grid of partial log-likelihoods over ordered blocks."""
    gamma = np.asarray(gamma, dtype=float)
    out = np.zeros((cache.K, cache.K))
    for (k, l), b in cache.blocks.items():
        out[k, l] = _loglik_only(cache.gamma_block(gamma, k, l), b.cols, b.vals, b.y)
    return out


def log_likelihood(gamma, cache: DesignCache) -> float:
    """Sum over ordered pairs of ``y log w + (1 - y) log(1 - w)``, w clamped to [eps, 1 - eps]."""
    return float(block_log_likelihoods(gamma, cache).sum())


def score(gamma, cache: DesignCache) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    out = np.zeros(cache.n_gamma)
    for (k, l), b in cache.blocks.items():
        start = cache.offsets[k, l]
        _, s, _ = _pieces(cache.gamma_block(gamma, k, l), b.cols, b.vals, b.y)
        out[start : start + b.n_coef] = s
    return out


def block_fisher(gamma, cache: DesignCache, k: int, l: int) -> np.ndarray:
    b = cache.blocks[k, l]
    return _pieces(cache.gamma_block(gamma, k, l), b.cols, b.vals, b.y)[2]


def fisher(gamma, cache: DesignCache) -> np.ndarray:
    """Expected information; block diagonal over ordered blocks."""
    gamma = np.asarray(gamma, dtype=float)
    out = np.zeros((cache.n_gamma, cache.n_gamma))
    for (k, l), b in cache.blocks.items():
        start = cache.offsets[k, l]
        stop = start + b.n_coef
        out[start:stop, start:stop] = block_fisher(gamma, cache, k, l)
    return out


def difference_matrix(n: int) -> np.ndarray:
    """First-order differences, shape (n - 1, n)."""
    return np.eye(n - 1, n) - np.eye(n - 1, n, k=1)


def penalty_matrix(Lk: int, Ll: int) -> np.ndarray:
    """``Q_kl``: squared first differences along both axes of an Lk x Ll coefficient grid."""
    Dk, Dl = difference_matrix(Lk), difference_matrix(Ll)
    A = np.kron(Dk, np.eye(Ll))
    B = np.kron(np.eye(Lk), Dl)
    return A.T @ A + B.T @ B


def penalty(n_knots, lam) -> np.ndarray:
    """Block-diagonal ``Q_lambda`` over the ordered blocks."""
    n_knots = np.asarray(n_knots, dtype=int)
    lam = np.asarray(lam, dtype=float)
    mats = [lam[k, l] * penalty_matrix(n_knots[k], n_knots[l])
            for k, l in itertools.product(range(n_knots.size), repeat=2)]
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    start = 0
    for m in mats:
        out[start : start + m.shape[0], start : start + m.shape[0]] = m
        start += m.shape[0]
    return out


def _symmetric_index(L: int) -> np.ndarray:
    """Map a flattened L x L grid onto upper-triangle parameter indices."""
    idx = np.zeros((L, L), dtype=np.int64)
    iu = np.triu_indices(L)
    idx[iu] = np.arange(iu[0].size)
    idx.T[iu] = np.arange(iu[0].size)
    return idx.ravel()


@dataclass(frozen=True)
class _FreeBlock:
    """Free parameters of the unordered block (k, l), k <= l, with fitting rows.

    Every unordered node pair contributes once with weight 2, which equals
    its two ordered contributions.
    """

    k: int
    l: int
    shape: tuple
    to_gamma: np.ndarray      # index into theta for each entry of gamma_kl
    cols: np.ndarray
    vals: np.ndarray
    y: np.ndarray
    P: np.ndarray             # theta-space penalty for lambda = 1

    @property
    def n_free(self) -> int:
        return int(self.to_gamma.max()) + 1

    def theta_from_gamma(self, gamma_kl: np.ndarray) -> np.ndarray:
        theta = np.zeros(self.n_free)
        theta[self.to_gamma] = gamma_kl
        return theta


def _free_blocks(cache: DesignCache) -> list[_FreeBlock]:
    n = cache.n_knots
    out = []
    for k in range(cache.K):
        for l in range(k, cache.K):
            b = cache.blocks[k, l]
            Q = penalty_matrix(n[k], n[l])
            if k == l:
                to_gamma = _symmetric_index(n[k])
                keep = b.i < b.j
                cols = to_gamma[b.cols[keep]]
                vals, y = b.vals[keep], b.y[keep]
                E = np.zeros((n[k] * n[k], to_gamma.max() + 1))
                E[np.arange(n[k] * n[k]), to_gamma] = 1.0
                P = E.T @ Q @ E
            else:
                to_gamma = np.arange(n[k] * n[l])
                cols, vals, y = b.cols, b.vals, b.y
                P = 2.0 * Q
            out.append(_FreeBlock(k, l, (int(n[k]), int(n[l])), to_gamma, cols, vals, y, P))
    return out


@dataclass
class BlockFit:
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt: float


def _kkt_residual(theta, grad, H):
    """Projected gradient of the penalized objective, scaled per coordinate by max(1, H_ii)."""
    pg = projected_gradient(theta, -grad, 0.0, 1.0)
    return float(np.max(np.abs(pg) / np.maximum(1.0, np.diag(H)))) if pg.size else 0.0


def _fit_free_block(fb: _FreeBlock, lam: float, theta0, max_iter=100, tol=1e-8, kkt_tol=1e-6) -> BlockFit:
    theta = np.clip(np.asarray(theta0, dtype=float), 0.0, 1.0)
    P = lam * fb.P
    if fb.y.size == 0:
        return BlockFit(theta, 0.0, 0, True, 0.0)
    jitter = DF_JITTER * np.eye(theta.size)

    ll, s, F = _pieces(theta, fb.cols, fb.vals, fb.y, 2.0)
    obj = ll - 0.5 * theta @ P @ theta
    improvement = np.inf
    for it in range(1, max_iter + 1):
        H = F + P + jitter
        grad = s - P @ theta
        kkt = _kkt_residual(theta, grad, H)
        if improvement < tol and kkt < kkt_tol:
            return BlockFit(theta, obj, it - 1, True, kkt)
        step, _ = box_qp(H, -grad, -theta, 1.0 - theta)
        alpha = 1.0
        while True:
            cand = np.clip(theta + alpha * step, 0.0, 1.0)
            cand_obj = _loglik_only(cand, fb.cols, fb.vals, fb.y, 2.0) - 0.5 * cand @ P @ cand
            if cand_obj >= obj or alpha < 2.0**-30:
                break
            alpha *= 0.5
        if cand_obj < obj:
            # no ascent possible within floating precision
            kkt = _kkt_residual(theta, grad, H)
            return BlockFit(theta, obj, it, kkt < kkt_tol, kkt)
        improvement = cand_obj - obj
        theta, obj = cand, cand_obj
        ll, s, F = _pieces(theta, fb.cols, fb.vals, fb.y, 2.0, observed=it >= FISHER_STEPS)
    H = F + P + jitter
    kkt = _kkt_residual(theta, s - P @ theta, H)
    converged = kkt < kkt_tol and improvement < tol
    if not converged:
        log.warning("penalized fit of block (%d,%d) did not converge (kkt %.2e)", fb.k + 1, fb.l + 1, kkt)
    return BlockFit(theta, obj, max_iter, converged, kkt)


def _assemble(cache: DesignCache, thetas: dict) -> np.ndarray:
    gamma = np.zeros(cache.n_gamma)
    for (k, l), (fb, theta) in thetas.items():
        G = theta[fb.to_gamma].reshape(fb.shape)
        start = cache.offsets[k, l]
        gamma[start : start + G.size] = G.ravel()
        start = cache.offsets[l, k]
        gamma[start : start + G.size] = G.T.ravel()
    return gamma


@dataclass
class GammaFit:
    gamma: np.ndarray
    converged: bool
    iterations: int
    kkt: float
    objective: float


def _as_grid(lam, K) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        lam = np.full((K, K), float(lam))
    if lam.shape != (K, K) or np.any(lam < 0):
        raise ValueError(f"lambda must be a nonnegative scalar or {K}x{K} grid")
    return lam


def fit_gamma(cache: DesignCache, lam, gamma_init=None) -> GammaFit:
    """Maximize ``loglik(gamma) - 0.5 gamma' Q_lambda gamma`` under 0 <= gamma <= 1 and symmetry.

    Iterated QP: each step maximizes the penalized Fisher-scoring quadratic
    model within the box, followed by step halving. After ``FISHER_STEPS``
    iterations the observed information replaces the Fisher matrix, since
    scoring converges only linearly when coefficients approach 0 or 1. Lambda is read from the
    upper triangle, ``lambda_lk`` is tied to ``lambda_kl``.
    """
    lam = _as_grid(lam, cache.K)
    if gamma_init is None:
        gamma_init = _default_init(cache)
    thetas = {}
    converged, iters, kkt, obj = True, 0, 0.0, 0.0
    for fb in _free_blocks(cache):
        theta0 = fb.theta_from_gamma(cache.gamma_block(gamma_init, fb.k, fb.l))
        res = _fit_free_block(fb, lam[fb.k, fb.l], theta0)
        thetas[fb.k, fb.l] = (fb, res.theta)
        converged &= res.converged
        iters = max(iters, res.iterations)
        kkt = max(kkt, res.kkt)
        obj += res.objective
    return GammaFit(_assemble(cache, thetas), converged, iters, kkt, obj)


def _default_init(cache: DesignCache) -> np.ndarray:
    gamma = np.zeros(cache.n_gamma)
    for (k, l), b in cache.blocks.items():
        p = b.y.mean() if b.n_pairs else 0.5
        start = cache.offsets[k, l]
        gamma[start : start + b.n_coef] = np.clip(p, 0.01, 0.99)
    return gamma


def block_df(gamma, cache: DesignCache, k: int, l: int, lam: float) -> float:
    """``tr{(F_kl + lambda Q_kl)^-1 F_kl}`` for one ordered block."""
    try:
        return _df_from_rows(cache.gamma_block(gamma, k, l), cache.blocks[k, l], lam)
    except LinAlgError as exc:
        raise LinAlgError(f"penalized Fisher matrix of block ({k + 1},{l + 1}) is singular") from exc


def degrees_of_freedom(gamma, cache: DesignCache, lam):
    """Effective degrees of freedom: ``(total, K x K grid)`` over ordered blocks."""
    lam = _as_grid(lam, cache.K)
    grid = np.zeros((cache.K, cache.K))
    for k, l in itertools.product(range(cache.K), repeat=2):
        if cache.blocks[k, l].n_pairs:
            grid[k, l] = block_df(gamma, cache, k, l, lam[k, l])
    return float(grid.sum()), grid


@dataclass
class LambdaSelection:
    lam: np.ndarray           # K x K, symmetric
    gamma: np.ndarray
    aic: float
    df: float
    df_grid: np.ndarray
    loglik_grid: np.ndarray
    profile: dict             # (k, l) -> list of (lambda, aic of the unordered block)
    converged: bool


def select_lambda(cache: DesignCache, grid=DEFAULT_LAMBDA_GRID) -> LambdaSelection:
    """Per unordered block, pick lambda minimizing ``-2 loglik + 2 df`` over ``grid``.

    The criterion of block (k, l) sums its ordered blocks (k, l) and (l, k).
    Ties go to the larger lambda.
    """
    grid = sorted({float(g) for g in grid}, reverse=True)
    if not grid or grid[-1] < 0:
        raise ValueError("lambda grid must be nonempty and nonnegative")
    K = cache.K
    init = _default_init(cache)
    thetas, profile = {}, {}
    lam_hat = np.zeros((K, K))
    converged = True
    for fb in _free_blocks(cache):
        k, l = fb.k, fb.l
        theta = fb.theta_from_gamma(cache.gamma_block(init, k, l))
        best = None
        profile[k, l] = []
        for lam in grid:
            res = _fit_free_block(fb, lam, theta)
            theta = res.theta
            G = theta[fb.to_gamma]
            aic = 0.0
            for a, b in {(k, l), (l, k)}:
                bd = cache.blocks[a, b]
                gab = G if (a, b) == (k, l) else G.reshape(fb.shape).T.ravel()
                ll = _loglik_only(gab, bd.cols, bd.vals, bd.y)
                df = _df_from_rows(gab, bd, lam)
                aic += -2.0 * ll + 2.0 * df
            profile[k, l].append((lam, aic))
            if best is None or aic < best[0] - 1e-9 * max(1.0, abs(best[0])):
                best = (aic, lam, theta, res.converged)
        thetas[k, l] = (fb, best[2])
        lam_hat[k, l] = lam_hat[l, k] = best[1]
        converged &= best[3]
    gamma = _assemble(cache, thetas)
    df_total, df_grid = degrees_of_freedom(gamma, cache, lam_hat)
    ll_grid = block_log_likelihoods(gamma, cache)
    aic = float(np.sum(-2.0 * ll_grid + 2.0 * df_grid))
    return LambdaSelection(lam_hat, gamma, aic, df_total, df_grid, ll_grid, profile, converged)


def _df_from_rows(gamma_kl, bd: BlockDesign, lam: float) -> float:
    if bd.n_pairs == 0:
        return 0.0
    _, _, F = _pieces(gamma_kl, bd.cols, bd.vals, bd.y)
    return penalized_trace(F, penalty_matrix(*bd.shape), lam)


@functools.lru_cache(maxsize=64)
def _constant_basis(n: int) -> np.ndarray:
    """Orthogonal matrix whose first column is the normalized constant vector."""
    T, _ = np.linalg.qr(np.hstack([np.ones((n, 1)), np.eye(n)[:, : n - 1]]))
    if T[0, 0] < 0:
        T = -T
    T.setflags(write=False)
    return T


def penalized_trace(F, Q, lam: float) -> float:
    """``tr{(F + lam Q)^-1 F}`` for a penalty whose null space is the constant vector.

    For lam near the infinity surrogate the plain system has condition number
    of order lam and loses about six digits. Rotating the constant direction
    onto the first axis, zeroing the penalty there exactly and scaling to unit
    diagonal keeps the Cholesky solve accurate. A ridge ``DF_JITTER * I`` is
    added only when the matrix is singular.
    """
    n = F.shape[0]
    T = _constant_basis(n)
    Fr = T.T @ F @ T
    Qr = T.T @ Q @ T
    Qr[0, :] = 0.0
    Qr[:, 0] = 0.0
    M = Fr + lam * Qr
    for jitter in (0.0, DF_JITTER):
        Mj = M + jitter * np.eye(n)
        d = np.diag(Mj)
        if np.any(d <= 0):
            continue
        s = 1.0 / np.sqrt(d)
        try:
            c = cho_factor(s[:, None] * Mj * s[None, :])
        except LinAlgError:
            continue
        return float(np.trace(cho_solve(c, s[:, None] * Fr * s[None, :])))
    raise LinAlgError("penalized Fisher matrix is singular even after jitter")


def aic_profile_rows(selection: LambdaSelection):
    """Rows ``(k, l, lambda, aic)`` (1-based blocks) for a CSV dump."""
    for (k, l), pts in sorted(selection.profile.items()):
        for lam, aic in sorted(pts):
            yield k + 1, l + 1, lam, aic


def fit_model(cache: DesignCache, grid=DEFAULT_LAMBDA_GRID) -> tuple[SbsgmModel, LambdaSelection]:
    sel = select_lambda(cache, grid)
    n = cache.n_knots
    K = cache.K
    blocks = [[cache.gamma_block(sel.gamma, k, l).reshape(n[k], n[l]) for l in range(K)] for k in range(K)]
    return model_from_blocks(cache.zeta, cache.knots, blocks), sel
