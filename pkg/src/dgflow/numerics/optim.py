"""Adam and limited-memory BFGS."""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment estimates for a fixed list of parameter arrays."""

    lr: float = 5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        state = cls(**kwargs)
        state.m = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
        state.v = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
        return state


def adam_step(state, params, grads):
    """Apply one Adam update in place to the numpy arrays in ``params``.

    ``params`` may hold numpy arrays or tensors exposing ``.data``.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state have different lengths")
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = np.asarray(g, dtype=float)
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {arr.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    nit: int
    status: str  # "converged" | "max-iter" | "line-search-failed"
    history: list = field(default_factory=list)


def lbfgs_minimize(f, grad_f, x0, tol=1e-8, max_iter=500, m=10, c1=1e-4, c2=0.9):
    """Minimize ``f`` with L-BFGS (two-loop recursion, strong-Wolfe line search).

    Parameters
    ----------
    f, grad_f : callable
        Objective and its gradient, both taking a flat float array.
    x0 : array_like
        Starting point; flattened internally, reshaped on return.
    tol : float
        Stop when the gradient 2-norm is at most ``tol``.
    max_iter : int
        Maximum number of accepted steps.
    m : int
        Number of curvature pairs kept.

    Returns
    -------
    LbfgsResult
        Best iterate seen. ``history`` holds the objective after every
        accepted step, which is non-increasing.
    """
    x0 = np.asarray(x0, dtype=float)
    shape = x0.shape
    fun = lambda z: float(f(z.reshape(shape)))
    jac = lambda z: np.asarray(grad_f(z.reshape(shape)), dtype=float).ravel()

    x = x0.ravel().copy()
    fx = fun(x)
    g = jac(x)
    pairs = deque(maxlen=m)
    history = [fx]
    status = "max-iter"
    nit = 0
    gnorm = np.linalg.norm(g)
    if gnorm <= tol:
        return LbfgsResult(x.reshape(shape), fx, gnorm, 0, "converged", history)

    for nit in range(1, max_iter + 1):
        d = -_two_loop(g, pairs)
        if g @ d >= 0:
            # stale curvature; restart from steepest descent
            pairs.clear()
            d = -g
        alpha, f_new, g_new = _wolfe(fun, jac, x, d, g, fx, c1, c2)
        if alpha is None:
            pairs.clear()
            d = -g / max(1.0, np.linalg.norm(g))
            alpha, f_new, g_new = _wolfe(fun, jac, x, d, g, fx, c1, c2)
            if alpha is None:
                status = "line-search-failed"
                log.warning("L-BFGS line search failed at iteration %d (f=%g, |g|=%g)", nit, fx, gnorm)
                nit -= 1
                break
        s = alpha * d
        x_new = x + s
        if g_new is None:
            g_new = jac(x_new)
        if f_new > fx:
            status = "line-search-failed"
            nit -= 1
            break
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, fx, g = x_new, float(f_new), g_new
        history.append(fx)
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            status = "converged"
            break
    return LbfgsResult(x.reshape(shape), fx, float(np.linalg.norm(g)), nit, status, history)


def _wolfe(fun, jac, x, d, g, fx, c1, c2):
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The line search algorithm")
        alpha, _, _, f_new, _, g_new = line_search(fun, jac, x, d, gfk=g, old_fval=fx, c1=c1, c2=c2)
    return alpha, f_new, g_new


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q
