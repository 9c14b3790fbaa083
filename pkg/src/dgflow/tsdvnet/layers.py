"""Building blocks of the two-branch velocity network.

Every function takes a parameter mapping ``p`` (name -> Tensor) and a name
prefix, and works on batched arrays: atoms ``X`` (B, n, dx), pairs ``P``
(B, n, n, dp), distances ``D`` (B, n, n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx


def time_embed(t, dim):
    """Sinusoidal embedding of flow time ``t`` (scalar or (B,)) into ``dim`` features."""
    if dim % 2 or dim < 4:
        raise ValueError(f"time embedding dimension must be even and >= 4, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) / (half - 1) * np.arange(half))
    m = np.multiply.outer(np.asarray(t, dtype=float), freqs)
    return np.concatenate([np.sin(m), np.cos(m)], axis=-1)


def cosine_cutoff(D, cutoff):
    D = np.asarray(D, dtype=float)
    return np.where(D <= cutoff, 0.5 * (np.cos(np.pi * D / cutoff) + 1.0), 0.0)


def rbf_expand(D, mu, beta, cutoff):
    """``phi(d) * exp(-beta_k (exp(-d) - mu_k)^2)`` for every distance, K features last.

    ``mu`` and ``beta`` may be Tensors (trainable) or arrays.
    """
    D = np.asarray(D, dtype=float)
    phi = cosine_cutoff(D, cutoff)[..., None]
    diff = np.exp(-D)[..., None] - mu
    return nx.exp(-(beta * diff * diff)) * phi


@dataclass
class Geometry:
    """Per-molecule constants: distances, cutoff envelope and RBF features."""

    D: np.ndarray          # (B, n, n)
    envelope: np.ndarray   # (B, n, n, 1): phi(d_ij) on neighbours, 0 on the diagonal / beyond cutoff
    mask: np.ndarray       # (B, n, n, 1): 1 for neighbours j != i with d_ij <= cutoff
    rbf: nx.Tensor         # (B, n, n, K)


def make_geometry(p, prefix, D, cutoff):
    D = np.asarray(D, dtype=float)
    n = D.shape[-1]
    mask = ((D <= cutoff) & ~np.eye(n, dtype=bool)).astype(float)[..., None]
    envelope = cosine_cutoff(D, cutoff)[..., None] * mask
    rbf = rbf_expand(D, p[prefix + "rbf.mu"], p[prefix + "rbf.beta"], cutoff)
    return Geometry(D, envelope, mask, rbf)


def linear(p, name, x):
    return x @ p[name + ".W"] + p[name + ".b"]


def layer_norm(p, name, x):
    return nx.layer_norm(x, p[name + ".scale"], p[name + ".offset"], eps=1e-5)


def atom_embed(p, prefix, Z, geo, t):
    """Embed atom types, time and neighbour RBF features into (B, n, dx)."""
    Z = np.asarray(Z)
    if np.any((Z < 1) | (Z > 118)):
        raise ValueError("atomic numbers must lie in 1..118")
    x = nx.take(p[prefix + "embed"], Z)
    dx = x.shape[-1]
    x = x + time_embed(t, dx)[..., None, :]
    nbr = nx.take(p[prefix + "nbr_embed"], Z).expand_dims(1)          # (B, 1, n, dx)
    filt = geo.rbf @ p[prefix + "filter.W"]                          # (B, n, n, dx)
    agg = (nbr * filt * geo.mask).sum(axis=2)
    return linear(p, prefix + "mix", nx.concat([x, agg], axis=-1))


def pair_embed(p, prefix, X, geo):
    """``W_E [W_S x_i + b_S, W_D x_j + b_D, W_r e(d_ij) + b_r] + b_E`` for all i, j."""
    src = linear(p, prefix + "pair_src", X)
    dst = linear(p, prefix + "pair_dst", X)
    rad = linear(p, prefix + "pair_rbf", geo.rbf)
    W = p[prefix + "pair_out.W"]
    dp = W.shape[1]
    out = (src @ W[:dp]).expand_dims(2) + (dst @ W[dp:2 * dp]).expand_dims(1) + rad @ W[2 * dp:]
    return out + p[prefix + "pair_out.b"]


def attn(p, name, Xq, Xk, P, geo):
    """Summed attention messages from key atoms j to query atoms i, (B, n, dx).

    Per pair: ``V * D_V * SiLU(Q * K * D_K + D_P) * phi(d_ij)``, where Q comes
    from ``Xq[i]`` and K, V from ``Xk[j]``; pair terms use ``P`` and ``geo``.
    """
    Q = linear(p, name + ".q", Xq).expand_dims(2)
    K = linear(p, name + ".k", Xk).expand_dims(1)
    V = linear(p, name + ".v", Xk).expand_dims(1)
    DK = linear(p, name + ".dk", geo.rbf)
    DV = linear(p, name + ".dv", geo.rbf)
    DP = linear(p, name + ".dp", P)
    msg = V * DV * nx.silu(Q * K * DK + DP) * geo.envelope
    return msg.sum(axis=2)


def cross_molecule_mp(p, name, X, P, geo, Xa, Xb):
    """``LN(X + (Attn(Xa -> X) + Attn(Xb -> X)))`` with keys from the updated molecule.

    The two message sums are added before the residual, so exchanging
    ``Xa`` and ``Xb`` gives a bit-identical result.
    """
    msg = attn(p, name + ".attn", Xa, X, P, geo) + attn(p, name + ".attn", Xb, X, P, geo)
    return layer_norm(p, name + ".norm", X + msg)


def inner_molecule_mp(p, name, X, P, geo):
    return layer_norm(p, name + ".norm", X + attn(p, name + ".attn", X, X, P, geo))


def _pair_kron(p, name, X, P):
    Wm = p[name + ".map.W"]
    dx = X.shape[-1]
    xm = (X @ Wm[:dx]).expand_dims(2) + (X @ Wm[dx:]).expand_dims(1) + p[name + ".map.b"]
    h = nx.concat([xm, P], axis=-1)
    a = linear(p, name + ".a", h)
    b = linear(p, name + ".b", h)
    B, n, _, f = a.shape
    kron = nx.einsum("bija,bijc->bijac", a, b).reshape(B, n, n, f * f)
    return linear(p, name + ".ab", kron)


def edge_update(p, name, X, P):
    """Kronecker-product mixing of ``x_i``, ``x_j`` and ``p_ij`` with residual + LayerNorm."""
    return layer_norm(p, name + ".norm", P + _pair_kron(p, name, X, P))


def triangular_update(p, name, P):
    """Gated triangular aggregation over the third atom k (all k included)."""
    pm = nx.sigmoid(linear(p, name + ".m1", P)) * linear(p, name + ".m2", P)
    pn = nx.sigmoid(linear(p, name + ".n1", P)) * linear(p, name + ".n2", P)
    o = nx.einsum("bikc,bjkc->bijc", pm, pn) + nx.einsum("bkic,bkjc->bijc", pm, pn)
    o = layer_norm(p, name + ".onorm", o)
    gate = nx.sigmoid(linear(p, name + ".o1", P))
    return layer_norm(p, name + ".norm", P + gate * linear(p, name + ".o2", o))


def flow_head(p, name, X, P):
    """Pairwise velocity (B, n, n), symmetrized with a zero diagonal."""
    v = _pair_kron(p, name, X, P)
    B, n = v.shape[0], v.shape[1]
    v = v.reshape(B, n, n)
    off = 1.0 - np.eye(n)
    return (v + v.swapaxes(1, 2)) * (0.5 * off)
