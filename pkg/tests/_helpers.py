"""Shared oracles for the test suite (imported by several test modules)."""

import numpy as np

from dgflow import numerics as nx
from dgflow.flow import Batch, cfm_loss


def random_coords(gen, n, scale=1.5, min_dist=0.7):
    """Random non-overlapping point cloud."""
    while True:
        R = gen.normal(scale=scale, size=(n, 3))
        D = np.linalg.norm(R[:, None] - R[None], axis=-1) + np.eye(n) * 1e9
        if D.min() > min_dist:
            return R


def dist(R):
    """Brute-force pairwise distances, independent of geom.pairwise_distances."""
    R = np.asarray(R, dtype=float)
    n = len(R)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = np.sqrt(np.sum((R[i] - R[j]) ** 2))
    return D


def toy_instance(gen, n=3, batch=1, elements=(1, 6, 7, 8)):
    Z = gen.choice(elements, size=(batch, n))
    DR = np.stack([dist(random_coords(gen, n)) for _ in range(batch)])
    DP = np.stack([dist(random_coords(gen, n)) for _ in range(batch)])
    DT = np.stack([dist(random_coords(gen, n)) for _ in range(batch)])
    return Z, DR, DP, DT


def model_gradient_error(model, gen, n=3, batch=2, h=1e-5, per_tensor=3):
    """Largest relative error between autodiff and central differences of the CFM loss.

    Every parameter tensor contributes its largest-gradient entry plus
    ``per_tensor - 1`` random entries.
    """
    Z, DR, DP, DT = toy_instance(gen, n, batch)
    b = Batch(Z, DR, DP, DT)
    t = gen.random(batch)
    seed = int(gen.integers(1 << 30))

    def loss(grad):
        return cfm_loss(model, b, t, 0.1, nx.rng(seed), grad=grad)

    params = model.parameters()
    grads = nx.grad(loss(True), params)
    worst_num, worst_den = 0.0, 1e-12
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        idx = {int(np.argmax(np.abs(g)))}
        idx.update(int(i) for i in gen.integers(flat.size, size=per_tensor - 1))
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = loss(False)
            flat[i] = old - h
            fm = loss(False)
            flat[i] = old
            fd = (fp - fm) / (2 * h)
            worst_num = max(worst_num, abs(fd - g.reshape(-1)[i]))
        worst_den = max(worst_den, np.max(np.abs(g)))
    return worst_num / worst_den


def permutation_error(model, gen, n):
    Z, DR, DP, DT = (a[0] for a in toy_instance(gen, n, 1))
    t = gen.random()
    perm = gen.permutation(n)
    v = model(Z, DR, DP, DT, t)
    ix = np.ix_(perm, perm)
    vp = model(Z[perm], DR[ix], DP[ix], DT[ix], t)
    return np.max(np.abs(v[ix] - vp))


def swap_error(model, gen, n):
    Z, DR, DP, DT = (a[0] for a in toy_instance(gen, n, 1))
    t = gen.random()
    return np.max(np.abs(model(Z, DR, DP, DT, t) - model(Z, DP, DR, DT, t)))


# ---------------------------------------------------------------------------
# Muller-Brown oracle: symbolic derivatives, dense grid seeds, Newton polish

_MB = None


def _mb_symbolic():
    global _MB
    if _MB is None:
        import sympy as sp
        x, y = sp.symbols("x y")
        A = [-200, -100, -170, 15]
        a = [-1, -1, sp.Rational(-13, 2), sp.Rational(7, 10)]
        b = [0, 0, 11, sp.Rational(3, 5)]
        c = [-10, -10, sp.Rational(-13, 2), sp.Rational(7, 10)]
        x0 = [1, 0, sp.Rational(-1, 2), -1]
        y0 = [0, sp.Rational(1, 2), sp.Rational(3, 2), 1]
        E = sum(A[k] * sp.exp(a[k] * (x - x0[k]) ** 2 + b[k] * (x - x0[k]) * (y - y0[k])
                              + c[k] * (y - y0[k]) ** 2) for k in range(4))
        grad = [sp.diff(E, v) for v in (x, y)]
        hess = [[sp.diff(g, v) for v in (x, y)] for g in grad]
        _MB = (sp.lambdify((x, y), E, "numpy"), sp.lambdify((x, y), grad, "numpy"),
               sp.lambdify((x, y), hess, "numpy"))
    return _MB


def mb_energy(p):
    return float(_mb_symbolic()[0](*p))


def mb_gradient(p):
    return np.array(_mb_symbolic()[1](*p), dtype=float)


def mb_hessian(p):
    return np.array(_mb_symbolic()[2](*p), dtype=float)


def _newton(p, iters=50):
    p = np.asarray(p, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iters):
            step = np.linalg.solve(mb_hessian(p), mb_gradient(p))
            p = p - step
            if not np.all(np.isfinite(p)) or np.linalg.norm(step) < 1e-14:
                break
    return p


def mb_stationary_points(h=0.01):
    """``(minima, saddles)`` of the Muller-Brown surface, each sorted by energy.

    Seeds are grid points where the squared gradient norm is a local minimum
    on a dense grid; Newton on grad E = 0 polishes them and the Hessian
    spectrum classifies them.
    """
    E, G, _ = _mb_symbolic()
    xs = np.arange(-1.6, 1.2 + h / 2, h)
    ys = np.arange(-0.6, 2.1 + h / 2, h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    gx, gy = G(X, Y)
    S = np.asarray(gx) ** 2 + np.asarray(gy) ** 2
    core = S[1:-1, 1:-1]
    is_min = np.ones_like(core, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_min &= core < S[1 + dx:S.shape[0] - 1 + dx, 1 + dy:S.shape[1] - 1 + dy]
    minima, saddles = [], []
    for i, j in zip(*np.nonzero(is_min)):
        p = _newton((X[i + 1, j + 1], Y[i + 1, j + 1]))
        if not np.all(np.isfinite(p)) or np.abs(p).max() > 5 or np.linalg.norm(mb_gradient(p)) > 1e-8:
            continue
        w = np.linalg.eigvalsh(mb_hessian(p))
        bucket = minima if np.all(w > 0) else saddles if w[0] < 0 < w[1] else None
        if bucket is not None and all(np.linalg.norm(p - q) > 1e-6 for q in bucket):
            bucket.append(p)
    return sorted(minima, key=mb_energy), sorted(saddles, key=mb_energy)


# ---------------------------------------------------------------------------
# exploration oracles

def two_families(seed, per_family=20, n=6, noise=0.05):
    """Perturbations of two random conformers; returns (conformers, true labels)."""
    from dgflow.geom import Conformer
    gen = np.random.default_rng(seed)
    Z = gen.choice([1, 6, 7, 8], size=n)
    bases = [random_coords(gen, n), random_coords(gen, n)]
    confs, labels = [], []
    for lab, base in enumerate(bases):
        for _ in range(per_family):
            confs.append(Conformer(Z, base + gen.normal(scale=noise, size=base.shape)))
            labels.append(lab)
    return confs, np.array(labels)


def signed_rank_enumeration(deltas):
    """Two-sided exact p-value by enumerating all 2^n sign patterns of the ranks."""
    import itertools
    d = np.asarray(deltas, dtype=float)
    d = d[d != 0]
    a = np.abs(d)
    ranks = np.array([np.sum(a < v) + (np.sum(a == v) + 1) / 2 for v in a])
    w = ranks[d > 0].sum()
    stats = np.array([ranks[np.array(s, dtype=bool)].sum()
                      for s in itertools.product([0, 1], repeat=len(d))])
    lo, hi = np.mean(stats <= w + 1e-9), np.mean(stats >= w - 1e-9)
    return min(1.0, 2 * min(lo, hi))
