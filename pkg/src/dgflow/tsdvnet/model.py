"""Two-branch velocity network over reactant, product and transition-state distances."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import numerics as nx
from . import layers as L

MAX_Z = 118


@dataclass(frozen=True)
class NetConfig:
    n_blocks: int = 6
    atom_dim: int = 128
    pair_dim: int = 128
    n_rbf: int = 64
    cutoff: float = 20.0

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        for name in ("atom_dim", "pair_dim"):
            v = getattr(self, name)
            if v < 2 or v % 2:
                raise ValueError(f"{name} must be even and >= 2, got {v}")
        if self.atom_dim < 4:
            raise ValueError("atom_dim must be >= 4 (it is also the time-embedding size)")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.n_rbf < 1:
            raise ValueError("n_rbf must be >= 1")

    @property
    def kron_dim(self):
        """Size of each factor in the Kronecker-product pair mixers."""
        return math.ceil(math.sqrt(self.pair_dim))

    def to_dict(self):
        return asdict(self)


def _param_shapes(cfg):
    """Ordered ``(name, shape, kind)`` for every parameter; kind drives initialization."""
    dx, dp, K, f = cfg.atom_dim, cfg.pair_dim, cfg.n_rbf, cfg.kron_dim
    shapes = []

    def lin(name, fan_in, fan_out):
        shapes.append((name + ".W", (fan_in, fan_out), "weight"))
        shapes.append((name + ".b", (fan_out,), "bias"))

    def norm(name, dim):
        shapes.append((name + ".scale", (dim,), "one"))
        shapes.append((name + ".offset", (dim,), "bias"))

    def attn(name):
        lin(name + ".q", dx, dx)
        lin(name + ".k", dx, dx)
        lin(name + ".v", dx, dx)
        lin(name + ".dk", K, dx)
        lin(name + ".dv", K, dx)
        lin(name + ".dp", dp, dx)

    def kron(name, out):
        lin(name + ".map", 2 * dx, dx)
        lin(name + ".a", dx + dp, f)
        lin(name + ".b", dx + dp, f)
        lin(name + ".ab", f * f, out)

    for br in ("ts.", "cond."):
        shapes.append((br + "embed", (MAX_Z + 1, dx), "embed"))
        shapes.append((br + "nbr_embed", (MAX_Z + 1, dx), "embed"))
        shapes.append((br + "rbf.mu", (K,), "rbf_mu"))
        shapes.append((br + "rbf.beta", (K,), "rbf_beta"))
        shapes.append((br + "filter.W", (K, dx), "weight"))
        lin(br + "mix", 2 * dx, dx)
        lin(br + "pair_src", dx, dp)
        lin(br + "pair_dst", dx, dp)
        lin(br + "pair_rbf", K, dp)
        lin(br + "pair_out", 3 * dp, dp)
        for i in range(cfg.n_blocks):
            blk = f"{br}block{i}."
            attn(blk + "cross.attn")
            norm(blk + "cross.norm", dx)
            attn(blk + "inner.attn")
            norm(blk + "inner.norm", dx)
            kron(blk + "edge", dp)
            norm(blk + "edge.norm", dp)
            for g in ("m1", "m2", "n1", "n2", "o1"):
                lin(blk + "tri." + g, dp, dp)
            lin(blk + "tri.o2", dp, dp)
            norm(blk + "tri.onorm", dp)
            norm(blk + "tri.norm", dp)
    kron("ts.head", 1)
    return shapes


def init_params(cfg, seed=0):
    """Fan-in uniform weights, zero biases, unit LayerNorm scales, N(0,1) embeddings.

    RBF centres are spread uniformly over ``[exp(-cutoff), 1]`` with a shared
    width ``beta = (2 (1 - exp(-cutoff)) / K)^-2``.
    """
    gen = nx.rng(seed)
    K = cfg.n_rbf
    lo = math.exp(-cfg.cutoff)
    params = {}
    for name, shape, kind in _param_shapes(cfg):
        if kind == "weight":
            bound = 1.0 / math.sqrt(shape[0])
            arr = gen.uniform(-bound, bound, size=shape)
        elif kind == "bias":
            arr = np.zeros(shape)
        elif kind == "one":
            arr = np.ones(shape)
        elif kind == "embed":
            arr = gen.normal(size=shape)
        elif kind == "rbf_mu":
            arr = np.linspace(lo, 1.0, K)
        elif kind == "rbf_beta":
            arr = np.full(K, (2.0 / K * (1.0 - lo)) ** -2)
        params[name] = nx.Tensor(arr, requires_grad=True)
    return params


class TSDVNet:
    """Velocity field ``v(D_t, t | Z, D_R, D_P)`` on pairwise distances.

    Parameters live in ``self.params`` (name -> Tensor). Call the model on
    single reactions (``Z`` (n,), matrices (n, n), scalar ``t``) or on a batch
    of equal-size reactions (leading batch axis everywhere).
    """

    def __init__(self, config=None, seed=0, params=None):
        self.config = config or NetConfig()
        self.params = params if params is not None else init_params(self.config, seed)
        expected = [n for n, _, _ in _param_shapes(self.config)]
        if list(self.params) != expected:
            raise ValueError("parameter names do not match the network configuration")

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def __call__(self, Z, D_R, D_P, D_t, t, grad=False):
        return self.forward(Z, D_R, D_P, D_t, t, grad=grad)

    def forward(self, Z, D_R, D_P, D_t, t, grad=False):
        """Predicted velocity; a Tensor when ``grad`` is true, else an ndarray."""
        Z = np.asarray(Z)
        D_R, D_P, D_t = (np.asarray(a, dtype=float) for a in (D_R, D_P, D_t))
        single = Z.ndim == 1
        if single:
            Z, D_R, D_P, D_t = Z[None], D_R[None], D_P[None], D_t[None]
        B, n = Z.shape
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        for M in (D_R, D_P, D_t):
            if M.shape != (B, n, n):
                raise ValueError(f"distance matrix shape {M.shape} does not match {(B, n, n)}")
        if grad:
            p = self.params
        else:
            p = {k: nx.Tensor(v.data) for k, v in self.params.items()}
        v = _forward(p, self.config, Z, D_R, D_P, D_t, t)
        out = v if grad else v.data
        return out[0] if single else out


def _forward(p, cfg, Z, D_R, D_P, D_t, t):
    B = Z.shape[0]
    # reactant and product share the condition branch; stack them on the batch axis
    Zc = np.concatenate([Z, Z])
    Dc = np.concatenate([D_R, D_P])
    tc = np.concatenate([t, t])
    geo_ts = L.make_geometry(p, "ts.", D_t, cfg.cutoff)
    geo_c = L.make_geometry(p, "cond.", Dc, cfg.cutoff)

    X_ts = L.atom_embed(p, "ts.", Z, geo_ts, t)
    P_ts = L.pair_embed(p, "ts.", X_ts, geo_ts)
    X_c = L.atom_embed(p, "cond.", Zc, geo_c, tc)
    P_c = L.pair_embed(p, "cond.", X_c, geo_c)

    for i in range(cfg.n_blocks):
        X_R, X_P = X_c[:B], X_c[B:]
        ts_blk, c_blk = f"ts.block{i}.", f"cond.block{i}."
        new_ts = L.cross_molecule_mp(p, ts_blk + "cross", X_ts, P_ts, geo_ts, X_R, X_P)
        # R is queried by (TS, P) and P by (TS, R), in that order
        X_TS2 = nx.concat([X_ts, X_ts], axis=0)
        X_other = nx.concat([X_P, X_R], axis=0)
        X_c = L.cross_molecule_mp(p, c_blk + "cross", X_c, P_c, geo_c, X_TS2, X_other)
        X_ts = new_ts

        X_ts = L.inner_molecule_mp(p, ts_blk + "inner", X_ts, P_ts, geo_ts)
        X_c = L.inner_molecule_mp(p, c_blk + "inner", X_c, P_c, geo_c)
        P_ts = L.edge_update(p, ts_blk + "edge", X_ts, P_ts)
        P_c = L.edge_update(p, c_blk + "edge", X_c, P_c)
        P_ts = L.triangular_update(p, ts_blk + "tri", P_ts)
        P_c = L.triangular_update(p, c_blk + "tri", P_c)

    return L.flow_head(p, "ts.head", X_ts, P_ts)
