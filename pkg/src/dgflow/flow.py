"""Conditional flow matching on distance matrices: loss, training and Euler inference."""

from __future__ import annotations

import copy
import csv
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .geom import Conformer, pairwise_distances
from .reconstruct import reconstruct

log = logging.getLogger(__name__)


def initial_guess(D_R, D_P):
    """Elementwise mean of reactant and product distances."""
    D_R, D_P = np.asarray(D_R, dtype=float), np.asarray(D_P, dtype=float)
    if D_R.shape != D_P.shape:
        raise ValueError(f"shape mismatch {D_R.shape} vs {D_P.shape}")
    return 0.5 * (D_R + D_P)


def _clean(D):
    """Symmetrize, zero the diagonal and clamp negative entries (in place)."""
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    n = D.shape[-1]
    D[..., np.arange(n), np.arange(n)] = 0.0
    np.maximum(D, 0.0, out=D)
    return D


def symmetric_noise(shape, gen):
    """Gaussian noise drawn on the strict upper triangle and mirrored."""
    n = shape[-1]
    E = gen.normal(size=shape)
    E = np.triu(E, 1)
    return E + np.swapaxes(E, -1, -2)


def sample_path_point(D0, D1, t, sigma, gen):
    """Draw ``D_t ~ N(t D1 + (1 - t) D0, sigma^2)`` on the upper triangle.

    ``t`` may be a scalar or one value per leading batch entry.
    """
    D0, D1 = np.asarray(D0, dtype=float), np.asarray(D1, dtype=float)
    t = np.asarray(t, dtype=float)
    tt = t.reshape(t.shape + (1, 1)) if t.ndim else t
    Dt = tt * D1 + (1.0 - tt) * D0
    if sigma > 0:
        Dt = Dt + sigma * symmetric_noise(Dt.shape, gen)
    return _clean(Dt)


# ---------------------------------------------------------------------------
# batches

@dataclass
class Batch:
    Z: np.ndarray    # (B, n)
    D_R: np.ndarray  # (B, n, n)
    D_P: np.ndarray
    D_TS: np.ndarray

    @property
    def D0(self):
        return initial_guess(self.D_R, self.D_P)

    @property
    def target(self):
        return self.D_TS - self.D0


def make_batch(records):
    n = {r.n for r in records}
    if len(n) != 1:
        raise ValueError("a batch must contain reactions with equal atom counts")
    return Batch(np.stack([r.Z for r in records]),
                 np.stack([pairwise_distances(r.reactant) for r in records]),
                 np.stack([pairwise_distances(r.product) for r in records]),
                 np.stack([pairwise_distances(r.ts) for r in records]))


def _upper_mean_sq(diff, n):
    iu = np.triu(np.ones((n, n)), 1)
    count = diff.shape[0] * n * (n - 1) / 2
    return ((diff * diff) * iu).sum() * (1.0 / count)


def cfm_loss(model, batch, t, sigma, gen, grad=True):
    """Mean squared velocity error over upper-triangle entries and the batch.

    ``model(Z, D_R, D_P, D_t, t, grad=...)`` must return (B, n, n).
    Returns a Tensor when ``grad`` is true, else a float.
    """
    D_t = sample_path_point(batch.D0, batch.D_TS, t, sigma, gen)
    v = model(batch.Z, batch.D_R, batch.D_P, D_t, t, grad=grad)
    n = batch.Z.shape[1]
    loss = _upper_mean_sq(v - batch.target, n)
    return loss if grad else float(np.asarray(loss))


def zero_model_loss(batch):
    """Loss of the model that always predicts zero velocity (independent of t and noise)."""
    n = batch.Z.shape[1]
    return float(_upper_mean_sq(batch.target, n))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    sigma: float = 0.1
    batch_size: int = 32
    lr: float = 5e-4
    decay_factor: float = 0.8
    patience: int = 40
    epochs: int = 1000
    seed: int = 0
    val_samples: int = 4  # t-draws per validation reaction

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay factor must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be positive and epochs non-negative")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, lr
    best_epoch: int = -1
    best_val: float = math.inf


def _batches(records, batch_size, gen):
    groups = defaultdict(list)
    for i in gen.permutation(len(records)):
        groups[records[i].n].append(records[i])
    out = []
    for n in sorted(groups):
        rs = groups[n]
        out.extend(rs[k:k + batch_size] for k in range(0, len(rs), batch_size))
    order = gen.permutation(len(out))
    return [out[i] for i in order]


def evaluate_loss(model, records, sigma, seed, samples=4, batch_size=64):
    """Deterministic CFM loss: fixed ``t`` and noise draws for a given ``seed``."""
    gen = nx.rng(seed)
    total, count = 0.0, 0
    groups = defaultdict(list)
    for r in records:
        groups[r.n].append(r)
    for n in sorted(groups):
        rs = groups[n]
        for k in range(0, len(rs), batch_size):
            batch = make_batch(rs[k:k + batch_size])
            for _ in range(samples):
                t = gen.random(len(batch.Z))
                total += cfm_loss(model, batch, t, sigma, gen, grad=False) * len(batch.Z)
                count += len(batch.Z)
    return total / count


def train(model, train_set, val_set, cfg, log_path=None, checkpoint_dir=None):
    """Adam + plateau decay on the CFM loss, keeping the best-validation parameters."""
    from .tsdvnet import checkpoint

    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    gen = nx.rng(cfg.seed)
    params = model.parameters()
    opt = nx.AdamState.for_params([p.data for p in params], lr=cfg.lr)
    result = TrainResult(model)
    best = [p.data.copy() for p in params]
    bad_epochs = 0
    val_seed = cfg.seed + 7919

    writer = None
    if log_path:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
    try:
        for epoch in range(cfg.epochs):
            losses = []
            for recs in _batches(train_set, cfg.batch_size, gen):
                batch = make_batch(recs)
                t = gen.random(len(recs))
                loss = cfm_loss(model, batch, t, cfg.sigma, gen, grad=True)
                lv = float(loss.data)
                if not math.isfinite(lv):
                    path = None
                    if checkpoint_dir:
                        path = os.path.join(checkpoint_dir, "diverged.ckpt")
                        checkpoint.save(path, model, {"epoch": epoch})
                    raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", path)
                grads = nx.grad(loss, params)
                nx.adam_step(opt, params, grads)
                losses.append(lv * len(recs))
            train_loss = sum(losses) / len(train_set)
            val_loss = evaluate_loss(model, val_set, cfg.sigma, val_seed, cfg.val_samples)
            row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": opt.lr}
            result.log.append(row)
            if writer:
                writer.writerow([epoch, repr(train_loss), repr(val_loss), repr(opt.lr)])
            if val_loss < result.best_val:
                result.best_val, result.best_epoch = val_loss, epoch
                best = [p.data.copy() for p in params]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs > cfg.patience:
                    opt.lr *= cfg.decay_factor
                    bad_epochs = 0
            log.debug("epoch %d train %.5g val %.5g lr %.3g", epoch, train_loss, val_loss, opt.lr)
    finally:
        if writer:
            fh.close()
    for p, b in zip(params, best):
        p.data[...] = b
    return result


# ---------------------------------------------------------------------------
# inference

class ZeroVelocity:
    """Velocity model that always returns zero; predicts the initial guess."""

    def __call__(self, Z, D_R, D_P, D_t, t, grad=False):
        return np.zeros_like(np.asarray(D_t, dtype=float))


def integrate(model, Z, D_R, D_P, dt=0.1, trajectory=False):
    """Explicit Euler from the initial guess at t = 0 to t = 1.

    The last step is shortened if ``dt`` does not divide 1. Every state is
    symmetrized, given a zero diagonal and clamped at zero.
    """
    if not 0 < dt <= 1:
        raise ValueError("dt must lie in (0, 1]")
    n_steps = max(1, math.ceil(1.0 / dt - 1e-9))
    D = initial_guess(D_R, D_P).copy()
    states = [D.copy()]
    t = 0.0
    for k in range(n_steps):
        h = dt if k < n_steps - 1 else 1.0 - t
        v = np.asarray(model(Z, D_R, D_P, D, t))
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite velocity at t={t:.3f}")
        D = _clean(D + h * v)
        t = (k + 1) * dt if k < n_steps - 1 else 1.0
        states.append(D.copy())
    return (D, states) if trajectory else D


@dataclass
class Prediction:
    ts: Conformer
    D: np.ndarray
    steps: int
    stress: float
    status: str


def predict_ts(model, record, dt=0.1):
    """Integrate the flow for ``record`` and rebuild Cartesian coordinates."""
    D_R = pairwise_distances(record.reactant)
    D_P = pairwise_distances(record.product)
    D_hat = integrate(model, record.Z, D_R, D_P, dt)
    res = reconstruct(D_hat, full=True)
    steps = max(1, math.ceil(1.0 / dt - 1e-9))
    return Prediction(Conformer(record.Z, res.coords), D_hat, steps, res.stress, res.status)
