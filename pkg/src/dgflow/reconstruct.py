"""Recover Cartesian coordinates from a (possibly non-Euclidean) distance matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import check_distance_matrix, pairwise_distances
from .numerics import lbfgs_minimize, sym_eigen

MIN_DISTANCE = 1e-6
MAX_WEIGHT = 1e12


@dataclass
class ReconstructResult:
    coords: np.ndarray
    stress: float
    initial_stress: float
    status: str
    nit: int


def embed_mds(D, dim=3):
    """Classical (Torgerson) MDS embedding of ``D`` into ``dim`` dimensions.

    Negative Gram eigenvalues are clamped to zero. Each output axis is
    flipped so its largest-magnitude coordinate is positive.
    """
    D = check_distance_matrix(D, tol=1e-8)
    n = D.shape[0]
    if n < 1:
        raise ValueError("empty distance matrix")
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D ** 2) @ J
    w, V = sym_eigen(0.5 * (B + B.T))
    order = np.argsort(w)[::-1][:dim]
    lam = np.clip(w[order], 0.0, None)
    X = np.zeros((n, dim))
    X[:, :len(order)] = V[:, order] * np.sqrt(lam)
    for k in range(dim):
        col = X[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            X[:, k] = -col
    return X - X.mean(axis=0)


def stress_weights(D):
    """``1 / d^2`` off the diagonal, capped at ``MAX_WEIGHT`` for tiny targets."""
    D = np.asarray(D, dtype=float)
    W = 1.0 / np.maximum(D, MIN_DISTANCE) ** 2
    W = np.minimum(W, MAX_WEIGHT)
    np.fill_diagonal(W, 0.0)
    return W


def weighted_stress(D, coords, W=None):
    """``sum_{i<j} w_ij (D_ij - |r_i - r_j|)^2``."""
    W = stress_weights(D) if W is None else W
    R = pairwise_distances(coords)
    return 0.5 * float(np.sum(W * (D - R) ** 2))


def _stress_and_grad(D, W, X):
    diff = X[:, None, :] - X[None, :, :]
    R = np.sqrt(np.sum(diff ** 2, axis=-1))
    resid = D - R
    f = 0.5 * np.sum(W * resid ** 2)
    coef = -2.0 * W * resid / np.where(R > 0, R, 1.0)
    coef[R == 0] = 0.0
    g = np.sum(coef[:, :, None] * diff, axis=1)
    return f, g


def refine_coordinates(D, init, tol=1e-8, max_iter=500):
    """Minimize the weighted stress from ``init`` with L-BFGS."""
    D = np.asarray(D, dtype=float)
    X0 = np.asarray(init, dtype=float)
    W = stress_weights(D)
    s0 = _stress_and_grad(D, W, X0)[0]
    if len(D) < 2:
        return ReconstructResult(X0 - X0.mean(axis=0), 0.0, 0.0, "converged", 0)
    res = lbfgs_minimize(lambda x: _stress_and_grad(D, W, x)[0],
                         lambda x: _stress_and_grad(D, W, x)[1],
                         X0, tol=tol, max_iter=max_iter)
    X = res.x
    s = res.fun
    if s > s0:
        X, s = X0, s0
    return ReconstructResult(X - X.mean(axis=0), float(s), float(s0), res.status, res.nit)


def reconstruct(D, full=False, tol=1e-8, max_iter=500):
    """MDS initialization followed by weighted-stress refinement.

    Returns an (n, 3) coordinate array centred at the origin, or the whole
    :class:`ReconstructResult` when ``full`` is true.
    """
    res = refine_coordinates(D, embed_mds(D), tol=tol, max_iter=max_iter)
    return res if full else res.coords
