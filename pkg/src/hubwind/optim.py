"""Quasi-Newton minimisation with finite-difference gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool
    message: str


def central_gradient(f, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (f(x + e) - f(x - e)) / (2 * step)
    return grad


def bfgs_minimize(f, x0, grad=None, max_iter=500, ftol=1e-8, gtol=1e-6, fd_step=1e-5,
                  max_step=2.0):
    """Minimise ``f`` with BFGS and a backtracking Armijo line search.

    ``f`` may return ``inf`` for infeasible points; the line search backs off.
    Stops when the relative change in ``f`` over an accepted step falls below
    ``ftol`` or the gradient norm drops below ``gtol``. The best point seen
    is returned whether or not the run converged.
    """
    nfev = 0

    def fun(x):
        nonlocal nfev
        nfev += 1
        return float(f(x))

    if grad is None:
        def grad(x):
            nonlocal nfev
            nfev += 2 * len(x)
            return central_gradient(f, x, fd_step)

    x = np.asarray(x0, dtype=float).copy()
    fx = fun(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    g = grad(x)
    n = len(x)
    H = np.eye(n)
    best_x, best_f = x.copy(), fx

    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) < gtol:
            return OptimResult(best_x, best_f, it - 1, nfev, True, "gradient norm below tolerance")
        p = -H @ g
        if g @ p >= 0:
            H = np.eye(n)
            p = -g
        norm = np.linalg.norm(p)
        if norm > max_step:
            p *= max_step / norm

        t, slope = 1.0, g @ p
        accepted = False
        for _ in range(50):
            x_new = x + t * p
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if np.allclose(H, np.eye(n)):
                return OptimResult(best_x, best_f, it, nfev, True,
                                   "line search cannot improve further")
            H = np.eye(n)
            continue

        g_new = grad(x_new)
        s, y = x_new - x, g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)

        rel_change = abs(fx - f_new) / max(abs(fx), abs(f_new), 1e-300)
        x, fx, g = x_new, f_new, g_new
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        if rel_change < ftol:
            return OptimResult(best_x, best_f, it, nfev, True, "relative change below tolerance")

    logger.warning("BFGS stopped after %d iterations without converging", max_iter)
    return OptimResult(best_x, best_f, max_iter, nfev, False, "iteration limit reached")
