"""MCMC E-step: sampling latent positions and the post-hoc adjustments."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .graphon import LatentState, Network, SbsgmModel, community_of, evaluate, validate_boundaries
from .io import write_csv

log = logging.getLogger(__name__)

PROB_EPS = 1e-10
_CHUNK = 2048


@dataclass(frozen=True)
class GibbsConfig:
    """Proposal and chain-summary settings.

    ``nu`` is the probability of a within-community move, ``sigma`` the
    proposal standard deviation on the logit scale. Posterior means average
    ``keep`` states taken every ``thin`` sweeps after ``burn_in`` thinned
    states. With K = 1 every proposal is a within move.
    """

    nu: float = 0.8
    sigma: float = 1.0
    burn_in: int = 50
    thin: int = 1
    keep: int = 200
    random_scan: bool = False

    def __post_init__(self):
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError("nu must lie in [0, 1]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.burn_in < 0 or self.thin < 1 or self.keep < 1:
            raise ValueError("need burn_in >= 0, thin >= 1 and keep >= 1")

    @property
    def n_sweeps(self) -> int:
        return (self.burn_in + self.keep) * self.thin


@dataclass(frozen=True)
class DeltaSchedule:
    """Nondecreasing boundary step sizes, one per EM iteration, ending at 1."""

    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size and (np.any(v < 0) or np.any(v > 1) or np.any(np.diff(v) < 0) or v[-1] != 1.0):
            raise ValueError("delta schedule must be nondecreasing in [0, 1] and end at exactly 1")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def linear(cls, n: int, start: float = 0.5) -> "DeltaSchedule":
        if n <= 0:
            return cls(())
        if n == 1:
            return cls((1.0,))
        return cls(tuple(np.linspace(start, 1.0, n)))

    def __len__(self):
        return len(self.values)

    def __getitem__(self, m):
        return self.values[m]


def log_full_conditional(i: int, u: float, state: LatentState, net: Network, model: SbsgmModel) -> float:
    """Unnormalized log density of ``U_i = u`` given the other positions.

    Probabilities are used unclamped, so a 0/1 model value contradicting an
    observation gives ``-inf``.
    """
    if not np.isfinite(u):
        raise ValueError("candidate position must be finite")
    others = np.delete(np.arange(net.N), i)
    y = net.adjacency[i, others]
    w = np.asarray(evaluate(model, np.full(others.size, u), state.u[others]))
    with np.errstate(divide="ignore"):
        terms = np.where(y == 1, np.log(w), np.log1p(-w))
    return float(terms.sum())


def _segment(u, zeta):
    k = int(community_of(u, zeta))
    return k, zeta[k], zeta[k + 1]


def proposal_log_ratio(u_old: float, u_new: float, zeta) -> float:
    """``log q(u_old | u_new) - log q(u_new | u_old)`` for the mixture proposal."""
    zeta = np.asarray(zeta, dtype=float)
    k, lo, hi = _segment(u_old, zeta)
    k_new, lo_new, hi_new = _segment(u_new, zeta)
    if k_new == k:
        return float(np.log((u_new - lo) * (hi - u_new)) - np.log((u_old - lo) * (hi - u_old)))
    return float(np.log1p(-(hi - lo)) - np.log1p(-(hi_new - lo_new)))


def propose(u_i: float, zeta, config: GibbsConfig, rng: np.random.Generator):
    """Draw a candidate position; returns ``(u_star, log_proposal_ratio)``."""
    zeta = validate_boundaries(zeta)
    k, lo, hi = _segment(u_i, zeta)
    if zeta.size == 2 or rng.random() < config.nu:
        v = np.log((u_i - lo) / (hi - u_i)) + config.sigma * rng.standard_normal()
        u_star = lo + (hi - lo) / (1.0 + np.exp(-v))
    else:
        width = hi - lo
        x = rng.random() * (1.0 - width)
        u_star = min(x if x < lo else x + width, np.nextafter(1.0, 0.0))
    return float(u_star), proposal_log_ratio(u_i, u_star, zeta)


@dataclass(frozen=True)
class Chain:
    """Sampler output: positions after every sweep plus move statistics."""

    states: np.ndarray
    stats: np.ndarray
    zeta: np.ndarray

    @property
    def acceptance(self) -> tuple[float, float]:
        tot = self.stats.sum(axis=0)
        within = tot[1] / tot[0] if tot[0] else float("nan")
        switch = tot[3] / tot[2] if tot[2] else float("nan")
        return float(within), float(switch)

    @property
    def final(self) -> LatentState:
        return LatentState(self.states[-1], self.zeta)


def _model_arrays(model: SbsgmModel):
    return (
        np.ascontiguousarray(model.zeta),
        np.ascontiguousarray(model.n_knots, dtype=np.int64),
        np.ascontiguousarray(model.offsets, dtype=np.int64),
        np.ascontiguousarray(model.gamma),
    )


def run_chain(state: LatentState, net: Network, model: SbsgmModel, config: GibbsConfig, n_sweeps: int,
              rng: np.random.Generator, adjacency: np.ndarray | None = None) -> Chain:
    """Run ``n_sweeps`` full sweeps from ``state`` under ``model``."""
    if state.u.size != net.N:
        raise ValueError("state and network sizes differ")
    zeta, n_knots, offsets, gamma = _model_arrays(model)
    adj = net.adjacency if adjacency is None else adjacency
    u = np.array(state.u, dtype=float)
    N = net.N
    states = np.empty((n_sweeps, N))
    stats = np.zeros((n_sweeps, 4), dtype=np.int64)
    systematic = np.broadcast_to(np.arange(N), (min(n_sweeps, _CHUNK), N))
    for start in range(0, n_sweeps, _CHUNK):
        n = min(_CHUNK, n_sweeps - start)
        if config.random_scan:
            order = np.argsort(rng.random((n, N)), axis=1)
        else:
            order = np.ascontiguousarray(systematic[:n])
        draws = rng.random((3, n, N))
        normals = rng.standard_normal((n, N))
        _kernels.run_sweeps(
            u, adj, zeta, n_knots, offsets, gamma, config.nu, config.sigma, PROB_EPS,
            order, draws[0], normals, draws[1], 1.0 - draws[2],
            states[start : start + n], stats[start : start + n],
        )
    return Chain(states, stats, model.zeta)


def gibbs_sweep(state: LatentState, net: Network, model: SbsgmModel, config: GibbsConfig,
                rng: np.random.Generator) -> LatentState:
    """One sweep over all nodes; each update accepted with the MH probability."""
    return run_chain(state, net, model, config, 1, rng).final


def posterior_means(states, config: GibbsConfig) -> np.ndarray:
    """Average of the states after sweeps ``s * thin``, ``s = burn_in+1 .. burn_in+keep``.

    ``states[t - 1]`` is the state after sweep ``t``.
    """
    states = np.asarray(states, dtype=float)
    need = config.n_sweeps
    if states.shape[0] < need:
        raise ValueError(f"chain too short: {states.shape[0]} sweeps recorded, {need} needed")
    sweeps = np.arange(config.burn_in + 1, config.burn_in + config.keep + 1) * config.thin
    return states[sweeps - 1].mean(axis=0)


def _enforce_min_width(widths: np.ndarray, min_width: float) -> np.ndarray:
    widths = widths.copy()
    fixed = np.zeros(widths.size, dtype=bool)
    while True:
        small = (widths < min_width) & ~fixed
        if not small.any():
            return widths
        fixed |= small
        widths[fixed] = min_width
        free_total = 1.0 - min_width * fixed.sum()
        widths[~fixed] *= free_total / widths[~fixed].sum()


def adjust_boundaries(u_hat, zeta_old, delta: float, return_clamped: bool = False):
    """Move boundaries towards the realized community proportions.

    ``zeta_k <- delta * #{u_hat < zeta_old_k} / N + (1 - delta) * k / K``.
    Communities narrower than ``1/N`` are widened to ``1/N`` and the other
    widths shrunk proportionally.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    u_hat = np.asarray(u_hat, dtype=float)
    zeta_old = validate_boundaries(zeta_old)
    K = zeta_old.size - 1
    N = u_hat.size
    if N < K:
        raise ValueError(f"cannot keep {K} communities of width >= 1/N with only N={N} positions")
    counts = np.array([np.count_nonzero(u_hat < z) for z in zeta_old[1:-1]])
    inner = delta * counts / N + (1 - delta) * np.arange(1, K) / K
    zeta = np.concatenate([[0.0], inner, [1.0]])
    widths = np.diff(zeta)
    clamped = bool(np.any(widths < 1.0 / N))
    if clamped:
        log.debug("community narrower than 1/N after boundary update; widening")
        widths = _enforce_min_width(widths, 1.0 / N)
        zeta = np.concatenate([[0.0], np.cumsum(widths)[:-1], [1.0]])
    return (zeta, clamped) if return_clamped else zeta


def adjust_positions(u_hat, zeta_old, zeta_new) -> np.ndarray:
    """Rank-rescale positions into the new segments, equidistant per community.

    Members of old community k get ``rank / (N_k + 1)`` of the new segment,
    ranks ascending with ties broken by node index.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    zeta_old = validate_boundaries(zeta_old)
    zeta_new = validate_boundaries(zeta_new)
    if zeta_old.size != zeta_new.size:
        raise ValueError("old and new boundaries differ in length")
    labels = community_of(u_hat, zeta_old)
    out = np.empty_like(u_hat)
    for k in range(zeta_old.size - 1):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            continue
        ranked = members[np.argsort(u_hat[members], kind="stable")]
        ranks = np.arange(1, members.size + 1)
        out[ranked] = ranks / (members.size + 1) * (zeta_new[k + 1] - zeta_new[k]) + zeta_new[k]
    return out


def write_diagnostics(path, chain: Chain) -> None:
    """Per-sweep acceptance rates by move type and community occupancy."""
    K = chain.zeta.size - 1
    occupancy = np.stack([np.bincount(community_of(s, chain.zeta), minlength=K) for s in chain.states])
    header = ["sweep", "within_proposed", "within_rate", "switch_proposed", "switch_rate"]
    header += [f"occupancy_{k + 1}" for k in range(K)]
    rows = []
    for s, (pw, aw, ps, as_) in enumerate(chain.stats):
        rows.append([s + 1, int(pw), aw / pw if pw else float("nan"), int(ps), as_ / ps if ps else float("nan")]
                    + [int(c) for c in occupancy[s]])
    write_csv(path, header, rows)
