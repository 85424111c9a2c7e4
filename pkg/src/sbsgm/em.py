"""EM-type fitting: initialization, E/M alternation, model selection, alignment."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .gibbs import DeltaSchedule, GibbsConfig, LatentState, adjust_boundaries, adjust_positions, posterior_means, run_chain
from .graphon import Network, SbsgmModel, allocate_knots, community_of, equidistant_knots, evaluate, model_from_blocks
from .mstep import DEFAULT_LAMBDA_GRID, build_design, fit_model, log_likelihood

log = logging.getLogger(__name__)


class IsolatedNodesError(ValueError):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        shown = ", ".join(str(n) for n in self.nodes[:20]) + (" ..." if len(self.nodes) > 20 else "")
        super().__init__(f"{len(self.nodes)} isolated node(s) without any edge: {shown}; "
                         "remove them before fitting")


def default_knot_budget(N: int, K: int) -> int:
    return max(2 * K, int(round(math.sqrt(N) / 2)))


@dataclass(frozen=True)
class FitConfig:
    K: int = 1
    em_iterations: int = 25
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    delta: DeltaSchedule | None = None
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    n_knots: int | None = None
    restarts: int = 5
    tol: float = 1e-4
    patience: int = 3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.K < 1 or self.em_iterations < 0 or self.restarts < 1 or self.patience < 1:
            raise ValueError("need K >= 1, em_iterations >= 0, restarts >= 1 and patience >= 1")
        if self.delta is not None and len(self.delta) != self.em_iterations:
            raise ValueError("delta schedule length must equal em_iterations")
        if self.n_knots is not None and self.n_knots < 2 * self.K:
            raise ValueError(f"knot budget must be at least 2K = {2 * self.K}")

    @property
    def schedule(self) -> DeltaSchedule:
        return self.delta if self.delta is not None else DeltaSchedule.linear(self.em_iterations)

    def knot_budget(self, N: int) -> int:
        return self.n_knots if self.n_knots is not None else default_knot_budget(N, self.K)

    def to_dict(self) -> dict:
        return {
            "K": self.K, "em_iterations": self.em_iterations,
            "gibbs": {"nu": self.gibbs.nu, "sigma": self.gibbs.sigma, "burn_in": self.gibbs.burn_in,
                      "thin": self.gibbs.thin, "keep": self.gibbs.keep, "random_scan": self.gibbs.random_scan},
            "delta": list(self.schedule.values), "lambda_grid": [float(x) for x in self.lambda_grid],
            "n_knots": self.n_knots, "restarts": self.restarts, "tol": self.tol,
            "patience": self.patience, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        d["gibbs"] = GibbsConfig(**d["gibbs"])
        d["delta"] = DeltaSchedule(tuple(d["delta"]))
        d["lambda_grid"] = tuple(d["lambda_grid"])
        d.pop("threads", None)
        return cls(**d)


@dataclass
class FitResult:
    model: SbsgmModel
    positions: np.ndarray
    lambda_hat: np.ndarray
    df: float
    df_grid: np.ndarray
    log_likelihood: float
    aic: float
    criterion: float
    converged: bool
    trace: list
    N: int
    restart_criteria: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.model.K

    @property
    def labels(self) -> np.ndarray:
        return community_of(self.positions, self.model.zeta)


def initialize(N: int, K: int, seed=None):
    """Random permutation of ``i / (N + 1)`` and equidistant boundaries."""
    if N < K:
        raise ValueError(f"need at least K={K} nodes, got {N}")
    rng = np.random.default_rng(seed)
    u0 = rng.permutation(np.arange(1, N + 1) / (N + 1))
    return u0, np.linspace(0.0, 1.0, K + 1)


def criterion_value(loglik: float, df: float, K: int, N: int) -> float:
    return -2.0 * loglik + 2.0 * (df - K**2) + math.log(N * (N - 1)) * K**2 + math.log(N) * (K - 1)


def selection_criterion(fit: FitResult, N: int | None = None) -> float:
    """``-2 loglik + 2 (df - K^2) + log(N(N-1)) K^2 + log(N) (K - 1)``; lower is better."""
    return criterion_value(fit.log_likelihood, fit.df, fit.K, fit.N if N is None else N)


def _mstep(u, zeta, net, config: FitConfig):
    knots = equidistant_knots(zeta, allocate_knots(config.knot_budget(net.N), zeta))
    cache = build_design(u, zeta, net, knots)
    model, sel = fit_model(cache, config.lambda_grid)
    loglik = log_likelihood(sel.gamma, cache)
    return model, sel, loglik


def _trace_row(m, delta, zeta, acc, sel, loglik, crit, clamped):
    return {
        "iteration": m, "delta": delta, "zeta": [float(z) for z in zeta],
        "accept_within": acc[0], "accept_switch": acc[1], "loglik": loglik, "df": sel.df,
        "aic": sel.aic, "criterion": crit, "empty_community_clamped": clamped,
        "mstep_converged": sel.converged,
    }


def _stagnated(values, tol, patience) -> bool:
    if len(values) < patience + 1:
        return False
    recent = values[-(patience + 1):]
    return all(abs(b - a) <= tol * abs(a) for a, b in zip(recent[:-1], recent[1:]))


def _single_run(net: Network, config: FitConfig, seed_seq: np.random.SeedSequence, adjacency) -> FitResult:
    rng = np.random.default_rng(seed_seq)
    K, N = config.K, net.N
    u, zeta = initialize(N, K, rng)
    model, sel, loglik = _mstep(u, zeta, net, config)
    crit = criterion_value(loglik, sel.df, K, N)
    trace = [_trace_row(0, float("nan"), zeta, (float("nan"), float("nan")), sel, loglik, crit, False)]
    snapshot = (model, u, sel, loglik, crit)
    schedule = config.schedule
    converged = config.em_iterations == 0
    best = snapshot if converged else None
    finishing = False
    for m in range(config.em_iterations):
        delta = 1.0 if finishing else schedule[m]
        chain = run_chain(LatentState(u, zeta), net, model, config.gibbs, config.gibbs.n_sweeps, rng, adjacency)
        u_hat = posterior_means(chain.states, config.gibbs)
        zeta_new, clamped = adjust_boundaries(u_hat, zeta, delta, return_clamped=True)
        u = adjust_positions(u_hat, zeta, zeta_new)
        zeta = zeta_new
        model, sel, loglik = _mstep(u, zeta, net, config)
        crit = criterion_value(loglik, sel.df, K, N)
        trace.append(_trace_row(m + 1, delta, zeta, chain.acceptance, sel, loglik, crit, clamped))
        snapshot = (model, u, sel, loglik, crit)
        if delta == 1.0 and (best is None or crit < best[4]):
            best = snapshot
        if finishing:
            converged = True
            best = snapshot
            break
        if _stagnated([row["criterion"] for row in trace[1:]], config.tol, config.patience):
            if delta == 1.0:
                converged = True
                best = snapshot
                break
            finishing = True
    if best is None:
        best = snapshot
    model, u, sel, loglik, crit = best
    return FitResult(model, u, sel.lam, sel.df, sel.df_grid, loglik, sel.aic, crit,
                     converged and sel.converged, trace, N)


def check_isolated(net: Network) -> None:
    isolated = np.flatnonzero(net.degrees == 0)
    if isolated.size:
        raise IsolatedNodesError(isolated)


def em_fit(net: Network, config: FitConfig) -> FitResult:
    """Fit an SBSGM with ``config.K`` communities; best of ``config.restarts`` runs by criterion."""
    check_isolated(net)
    if net.N < config.K:
        raise ValueError(f"need at least K={config.K} nodes")
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    adjacency = net.adjacency
    if config.threads > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            runs = list(pool.map(lambda s: _single_run(net, config, s, adjacency), seeds))
    else:
        runs = [_single_run(net, config, s, adjacency) for s in seeds]
    crits = [r.criterion for r in runs]
    best = runs[int(np.argmin(crits))]
    best.restart_criteria = crits
    return best


def select_k(net: Network, k_range, config: FitConfig):
    """Fit every K in ``k_range``; returns ``(best_K, table, fits)``.

    ``table`` rows are ``(K, -2 loglik, df, criterion)``; ties favour smaller K.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range must not be empty")
    fits, table = {}, []
    for K in ks:
        cfg = replace(config, K=K, n_knots=None if config.n_knots is None else max(config.n_knots, 2 * K))
        fit = em_fit(net, cfg)
        fits[K] = fit
        table.append((K, -2.0 * fit.log_likelihood, fit.df, fit.criterion))
    best_K = min(table, key=lambda row: (row[3], row[0]))[0]
    return best_K, table, fits


def transform_layout(model: SbsgmModel, u, perm, flips):
    """Reorder blocks (slot s gets old block ``perm[s]``) and mirror flipped blocks.

    Returns the transformed ``(model, positions)``; all pairwise graphon
    values between nodes are preserved.
    """
    perm = np.asarray(perm, dtype=int)
    flips = np.asarray(flips, dtype=bool)
    K = model.K
    widths = np.diff(model.zeta)[perm]
    zeta = np.concatenate([[0.0], np.cumsum(widths)])
    zeta[-1] = 1.0
    n_knots = model.n_knots[perm]
    knots = equidistant_knots(zeta, n_knots)
    blocks = [[None] * K for _ in range(K)]
    for s, t in itertools.product(range(K), repeat=2):
        G = model.block(perm[s], perm[t])
        if flips[perm[s]]:
            G = G[::-1, :]
        if flips[perm[t]]:
            G = G[:, ::-1]
        blocks[s][t] = np.ascontiguousarray(G)
    new_model = model_from_blocks(zeta, knots, blocks)
    if u is None:
        return new_model, None
    u = np.asarray(u, dtype=float)
    labels = community_of(u, model.zeta)
    slot = np.argsort(perm)[labels]
    offset = u - model.zeta[labels]
    new_u = np.where(flips[labels], zeta[slot + 1] - offset, zeta[slot] + offset)
    return new_model, np.clip(new_u, 0.0, 1.0)


def _grid_distance(a: SbsgmModel, b: SbsgmModel, n=100) -> float:
    g = (np.arange(n) + 0.5) / n
    U, V = np.meshgrid(g, g, indexing="ij")
    return float(np.mean(np.abs(evaluate(a, U, V) - evaluate(b, U, V))))


def align_to_reference(fit: FitResult, reference, max_k: int = 7):
    """Relabel and mirror blocks of ``fit`` to best match ``reference``.

    ``reference`` is either a vector of reference positions (mean absolute
    position error is minimized) or an :class:`SbsgmModel` with the same K
    (mean absolute surface difference on a grid is minimized). Returns
    ``(aligned_fit, perm, flips)``.
    """
    K = fit.K
    if K > max_k:
        raise ValueError(f"alignment searches K! * 2^K layouts; K={K} exceeds max_k={max_k}")
    if isinstance(reference, SbsgmModel):
        if reference.K != K:
            raise ValueError(f"reference has K={reference.K}, fit has K={K}")

        def cost(perm, flips):
            return _grid_distance(transform_layout(fit.model, None, perm, flips)[0], reference)
    else:
        ref = np.asarray(reference, dtype=float)
        if ref.shape != fit.positions.shape:
            raise ValueError("reference positions must match the fitted node count")
        labels = community_of(fit.positions, fit.model.zeta)
        offset = fit.positions - fit.model.zeta[labels]
        widths = np.diff(fit.model.zeta)

        def cost(perm, flips):
            starts = np.concatenate([[0.0], np.cumsum(widths[list(perm)])])
            slot = np.argsort(perm)[labels]
            new = np.where(flips[labels], starts[slot + 1] - offset, starts[slot] + offset)
            return float(np.mean(np.abs(new - ref)))

    best = None
    for perm in itertools.permutations(range(K)):
        for flips in itertools.product([False, True], repeat=K):
            c = cost(perm, np.array(flips))
            if best is None or c < best[0] - 1e-15:
                best = (c, perm, flips)
    _, perm, flips = best
    model, u = transform_layout(fit.model, fit.positions, perm, flips)
    lam = fit.lambda_hat[np.ix_(perm, perm)]
    df_grid = fit.df_grid[np.ix_(perm, perm)]
    aligned = replace(fit, model=model, positions=u, lambda_hat=lam, df_grid=df_grid)
    return aligned, np.array(perm), np.array(flips)


def mise(estimate: SbsgmModel, truth, n: int = 200) -> float:
    """Mean integrated squared error on an ``n x n`` midpoint grid.

    ``truth`` is a model or a vectorized callable ``w(u, v)``.
    """
    g = (np.arange(n) + 0.5) / n
    U, V = np.meshgrid(g, g, indexing="ij")
    ref = evaluate(truth, U, V) if isinstance(truth, SbsgmModel) else np.asarray(truth(U, V), dtype=float)
    return float(np.mean((evaluate(estimate, U, V) - ref) ** 2))
