"""Compiled inner loops for the latent-position sampler."""
import math

import numpy as np
from numba import njit

# largest double below 1
_ONE_MINUS = 1.0 - 2.0**-53


@njit(cache=True)
def locate1(u, zeta, n_knots):
    K = zeta.size - 1
    k = 0
    while k < K - 1 and u >= zeta[k + 1]:
        k += 1
    Lk = n_knots[k]
    x = (u - zeta[k]) / (zeta[k + 1] - zeta[k]) * (Lk - 1)
    if x < 0.0:
        x = 0.0
    elif x > Lk - 1:
        x = float(Lk - 1)
    r = math.floor(x + 0.5)
    if abs(x - r) < 1e-12:
        x = r
    p = int(math.floor(x))
    if p > Lk - 2:
        p = Lk - 2
    return k, p, x - p


@njit(cache=True)
def bilinear(gamma, offsets, n_knots, ku, pu, tu, kv, pv, tv):
    Ll = n_knots[kv]
    base = offsets[ku, kv] + pu * Ll + pv
    su = 1.0 - tu
    sv = 1.0 - tv
    return (su * sv * gamma[base] + tu * tv * gamma[base + Ll + 1]) + (
        su * tv * gamma[base + 1] + tu * sv * gamma[base + Ll]
    )


@njit(cache=True)
def _clamp(w, eps):
    if w < eps:
        return eps
    if w > 1.0 - eps:
        return 1.0 - eps
    return w


@njit(cache=True)
def _pair_term(y, w, eps):
    w = _clamp(w, eps)
    return math.log(w) if y else math.log1p(-w)


@njit(cache=True, nogil=True)
def run_sweeps(u, adj, zeta, n_knots, offsets, gamma, nu, sigma, eps,
               order, r_type, r_norm, r_switch, r_accept, states, stats):
    """Metropolis-within-Gibbs sweeps, updating ``u`` in place.

    ``states[s]`` receives the positions after sweep ``s``; ``stats[s]``
    holds (within proposals, within accepts, switch proposals, switch accepts).
    The per-pair log-likelihood terms of the current state are cached, so a
    proposal only evaluates the graphon at the candidate position.
    """
    N = u.size
    K = zeta.size - 1
    ks = np.empty(N, np.int64)
    ps = np.empty(N, np.int64)
    ts = np.empty(N)
    for j in range(N):
        ks[j], ps[j], ts[j] = locate1(u[j], zeta, n_knots)
    terms = np.zeros((N, N))
    for i in range(N):
        for j in range(i + 1, N):
            t = _pair_term(adj[i, j], bilinear(gamma, offsets, n_knots, ks[i], ps[i], ts[i], ks[j], ps[j], ts[j]), eps)
            terms[i, j] = t
            terms[j, i] = t
    buf = np.zeros(N)
    row_start = np.zeros(K + 1, np.int64)
    for l in range(K):
        row_start[l + 1] = row_start[l] + n_knots[l]
    row = np.zeros(row_start[K])

    for s in range(order.shape[0]):
        for step in range(N):
            i = order[s, step]
            ui = u[i]
            k = ks[i]
            lo = zeta[k]
            hi = zeta[k + 1]
            within = K == 1 or r_type[s, step] < nu
            if within:
                stats[s, 0] += 1
                v = math.log((ui - lo) / (hi - ui)) + sigma * r_norm[s, step]
                if v >= 0.0:
                    ustar = lo + (hi - lo) / (1.0 + math.exp(-v))
                else:
                    e = math.exp(v)
                    ustar = lo + (hi - lo) * e / (1.0 + e)
                if not (lo < ustar < hi):
                    continue
                log_q = math.log((ustar - lo) * (hi - ustar)) - math.log((ui - lo) * (hi - ui))
            else:
                stats[s, 2] += 1
                width = hi - lo
                x = r_switch[s, step] * (1.0 - width)
                ustar = x if x < lo else x + width
                if ustar > _ONE_MINUS:
                    ustar = _ONE_MINUS
            kk, pp, tt = locate1(ustar, zeta, n_knots)
            if not within:
                if kk == k:
                    continue
                log_q = math.log(1.0 - (hi - lo)) - math.log(1.0 - (zeta[kk + 1] - zeta[kk]))

            # coefficients of w(ustar, .) interpolated along the first axis
            for l in range(K):
                Ll = n_knots[l]
                base = offsets[kk, l] + pp * Ll
                for q in range(Ll):
                    row[row_start[l] + q] = (1.0 - tt) * gamma[base + q] + tt * gamma[base + Ll + q]
            log_lik = 0.0
            for j in range(N):
                if j == i:
                    continue
                c = row_start[ks[j]] + ps[j]
                t = _pair_term(adj[i, j], (1.0 - ts[j]) * row[c] + ts[j] * row[c + 1], eps)
                buf[j] = t
                log_lik += t - terms[i, j]
            log_alpha = log_lik + log_q
            if log_alpha >= 0.0 or math.log(r_accept[s, step]) < log_alpha:
                u[i] = ustar
                ks[i] = kk
                ps[i] = pp
                ts[i] = tt
                for j in range(N):
                    if j != i:
                        terms[i, j] = buf[j]
                        terms[j, i] = buf[j]
                stats[s, 1 if within else 3] += 1
        states[s, :] = u


@njit(cache=True)
def pair_terms(theta, cols, vals, y, weight, eps, curvature):
    """Log-likelihood, score and a curvature matrix of basis rows.

    ``curvature`` 0 skips the matrix, 1 gives the Fisher (expected)
    information, 2 the observed information.
    """
    m = theta.size
    s = np.zeros(m)
    F = np.zeros((m, m))
    ll = 0.0
    for r in range(y.size):
        w = 0.0
        for a in range(4):
            w += vals[r, a] * theta[cols[r, a]]
        # clamp only on the side where the log diverges, so the score stays
        # the exact derivative of the returned log-likelihood
        if y[r] > 0.5:
            if w < eps:
                ll += math.log(eps)
                res = 0.0
            else:
                ll += math.log(w)
                res = 1.0 / w
        else:
            if w > 1.0 - eps:
                ll += math.log1p(-(1.0 - eps))
                res = 0.0
            else:
                ll += math.log1p(-w)
                res = -1.0 / (1.0 - w)
        for a in range(4):
            s[cols[r, a]] += weight * vals[r, a] * res
        if curvature:
            wc = _clamp(w, eps)
            c = weight / (wc * (1.0 - wc)) if curvature == 1 else weight * res * res
            for a in range(4):
                ca = cols[r, a]
                va = vals[r, a] * c
                for b in range(4):
                    F[ca, cols[r, b]] += va * vals[r, b]
    return weight * ll, s, F


@njit(cache=True)
def pair_loglik(theta, cols, vals, y, weight, eps):
    ll = 0.0
    for r in range(y.size):
        w = 0.0
        for a in range(4):
            w += vals[r, a] * theta[cols[r, a]]
        if y[r] > 0.5:
            ll += math.log(max(w, eps))
        else:
            ll += math.log1p(-min(w, 1.0 - eps))
    return weight * ll
