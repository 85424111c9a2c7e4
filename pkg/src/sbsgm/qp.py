"""Box-constrained convex quadratic programs."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


def _solve_pd(H, b):
    try:
        return cho_solve(cho_factor(H), b)
    except LinAlgError:
        jitter = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        return np.linalg.solve(H + jitter * np.eye(H.shape[0]), b)


def projected_gradient(x, grad, lo, hi):
    """Gradient components not blocked by an active bound (minimization sense)."""
    pg = grad.copy()
    pg[(x <= lo) & (grad > 0)] = 0.0
    pg[(x >= hi) & (grad < 0)] = 0.0
    return pg


def box_qp(H, g, lo, hi, x0=None, max_iter=200, tol=1e-13):
    """Minimize ``0.5 x'Hx + g'x`` subject to ``lo <= x <= hi``.

    Projected Newton with an active set of variables clamped at a bound whose
    gradient pushes outward; the free block takes a Newton step followed by
    projection and Armijo backtracking. ``H`` must be positive definite on
    the free variables.

    Returns ``(x, n_iter)``.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), g.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), g.shape)
    x = np.clip(np.zeros_like(g) if x0 is None else np.asarray(x0, dtype=float), lo, hi)

    def f(z):
        return 0.5 * z @ H @ z + g @ z

    value = f(x)
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        clamped = ((x <= lo) & (grad > 0)) | ((x >= hi) & (grad < 0))
        free = ~clamped
        if not free.any() or np.max(np.abs(grad[free])) <= tol * (1.0 + np.max(np.abs(g))):
            return x, it
        step = np.zeros_like(x)
        step[free] = -_solve_pd(H[np.ix_(free, free)], grad[free])
        alpha = 1.0
        while True:
            x_new = np.clip(x + alpha * step, lo, hi)
            new_value = f(x_new)
            if new_value <= value + 0.1 * grad @ (x_new - x) or alpha < 1e-20:
                break
            alpha *= 0.5
        improvement = value - new_value
        if improvement < 0:
            return x, it
        x, value = x_new, new_value
        if improvement <= 1e-15 * (1.0 + abs(value)):
            return x, it
    return x, max_iter
