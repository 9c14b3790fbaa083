"""Analysis of many sampled transition states: descriptors, PCA, k-means and paired tests."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .geom import coulomb_matrix, dmae, pairwise_distances, rmsd


# ---------------------------------------------------------------------------
# features and projection

def coulomb_features(conformers, sort=False):
    """One row per structure: upper triangle (with diagonal) of its Coulomb matrix.

    With ``sort`` the rows and columns are first ordered by decreasing row
    norm, which makes the features invariant to atom ordering.
    """
    rows = []
    for c in conformers:
        C = coulomb_matrix(c)
        if sort:
            order = np.argsort(-np.linalg.norm(C, axis=1), kind="stable")
            C = C[np.ix_(order, order)]
        rows.append(C[np.triu_indices(len(C))])
    if len({len(r) for r in rows}) > 1:
        raise ValueError("all structures must have the same number of atoms")
    return np.array(rows)


@dataclass
class PCAResult:
    projected: np.ndarray   # (m, n_components)
    components: np.ndarray  # (n_components, f), orthonormal rows
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T


def pca(X, n_components=2):
    """Principal components of the mean-centred data via SVD.

    Each component is signed so its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=float)
    m, f = X.shape
    if m < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= n_components <= min(m - 1, f):
        raise ValueError(f"n_components must lie in 1..{min(m - 1, f)}")
    mean = X.mean(axis=0)
    U, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = Vt[:n_components]
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(n_components), idx])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    var = s ** 2
    total = var.sum()
    ratio = var[:n_components] / total if total > 0 else np.zeros(n_components)
    return PCAResult((X - mean) @ comps.T, comps, ratio, mean)


# ---------------------------------------------------------------------------
# k-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list)  # inertia after every Lloyd step of the chosen run
    restart: int = 0


def _kmeanspp(X, k, gen):
    m = len(X)
    centres = [X[gen.integers(m)]]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = gen.integers(m) if total <= 0 else gen.choice(m, p=d2 / total)
        centres.append(X[i])
        d2 = np.minimum(d2, np.sum((X - X[i]) ** 2, axis=1))
    return np.array(centres)


def _assign(X, C):
    d2 = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(len(X)), labels].sum())


def _lloyd(X, C, max_iter):
    labels, inertia = _assign(X, C)
    history = [inertia]
    for _ in range(max_iter):
        C_new = C.copy()
        for j in range(len(C)):
            members = X[labels == j]
            if len(members):
                C_new[j] = members.mean(axis=0)
        labels_new, inertia_new = _assign(X, C_new)
        history.append(inertia_new)
        converged = np.array_equal(labels_new, labels) and np.allclose(C_new, C, rtol=0, atol=0)
        C, labels, inertia = C_new, labels_new, inertia_new
        if converged:
            break
    return labels, C, inertia, history


def kmeans(X, k, seed=0, restarts=10, max_iter=300):
    """Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins.

    Ties go to the earliest restart, so the result depends only on ``seed``.
    """
    X = np.asarray(X, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(X) < k:
        raise ValueError(f"need at least k={k} points, got {len(X)}")
    best = None
    for r, gen in enumerate(nx.spawn(nx.rng(seed), restarts)):
        labels, C, inertia, history = _lloyd(X, _kmeanspp(X, k, gen), max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, C, inertia, history, r)
    return best


def silhouette_score(X, labels):
    """Mean silhouette coefficient; points in singleton clusters score 0."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if not 2 <= len(uniq) <= len(X) - 1:
        raise ValueError("silhouette needs between 2 and m-1 clusters")
    D = np.sqrt(np.maximum(np.sum((X[:, None] - X[None]) ** 2, axis=-1), 0.0))
    scores = np.zeros(len(X))
    for i in range(len(X)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == u].mean() for u in uniq if u != labels[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


# ---------------------------------------------------------------------------
# cluster report

def _summary(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.all(np.isnan(v)):
        return None
    return {"mean": float(np.mean(v)), "median": float(np.median(v)),
            "min": float(np.min(v)), "max": float(np.max(v))}


@dataclass
class ClusterReport:
    labels: np.ndarray
    centroids: np.ndarray     # in PCA space
    pcs: np.ndarray           # (m, 2)
    rmsd: np.ndarray
    dmae: np.ndarray
    delta_e: np.ndarray       # |E - E_ref|, NaN when energies are unavailable
    energies: np.ndarray | None
    explained_variance_ratio: np.ndarray

    def clusters(self):
        """Per-cluster statistics, one dict per non-empty cluster in label order."""
        out = []
        for j in range(len(self.centroids)):
            members = np.nonzero(self.labels == j)[0]
            if members.size == 0:
                continue
            entry = {"cluster": j, "size": int(members.size), "members": members.tolist(),
                     "rmsd": _summary(self.rmsd[members]), "dmae": _summary(self.dmae[members]),
                     "abs_delta_e": _summary(self.delta_e[members])}
            if self.energies is not None:
                entry["lowest_energy_member"] = int(members[np.argmin(self.energies[members])])
            out.append(entry)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "cluster", "pc1", "pc2", "rmsd", "dmae", "delta_e"])
            for i in range(len(self.labels)):
                w.writerow([i, int(self.labels[i]), repr(float(self.pcs[i, 0])),
                            repr(float(self.pcs[i, 1])), repr(float(self.rmsd[i])),
                            repr(float(self.dmae[i])), repr(float(self.delta_e[i]))])

    def summary(self):
        return {"n_structures": int(len(self.labels)), "k": int(len(self.centroids)),
                "explained_variance_ratio": [float(v) for v in self.explained_variance_ratio],
                "clusters": self.clusters()}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def cluster_ts_samples(structures, reference_ts, k, energies=None, reference_energy=None,
                       seed=0, sort=False, restarts=10):
    """Coulomb features -> 2-D PCA -> k-means, with metrics against a reference TS.

    Identical structures have no variance to project; they all land at the
    origin of PCA space and therefore in one effective cluster.
    """
    structures = list(structures)
    if len(structures) < k:
        raise ValueError("need at least k structures")
    for s in structures:
        if s.n != reference_ts.n:
            raise ValueError("all structures must match the reference atom count")
    X = coulomb_features(structures, sort=sort)
    m, f = X.shape
    n_comp = min(2, m - 1, f)
    if np.allclose(X, X[0], rtol=0, atol=0):
        pcs = np.zeros((m, 2))
        ratio = np.zeros(2)
    else:
        res = pca(X, n_comp)
        pcs = np.zeros((m, 2))
        pcs[:, :n_comp] = res.projected
        ratio = np.zeros(2)
        ratio[:n_comp] = res.explained_variance_ratio
    km = kmeans(pcs, k, seed=seed, restarts=restarts)
    D_ref = pairwise_distances(reference_ts)
    r = np.array([rmsd(reference_ts.R, s.R) for s in structures])
    d = np.array([dmae(pairwise_distances(s), D_ref) for s in structures])
    if energies is not None:
        energies = np.asarray(energies, dtype=float)
        dE = np.abs(energies - reference_energy) if reference_energy is not None else np.full(m, np.nan)
    else:
        dE = np.full(m, np.nan)
    return ClusterReport(km.labels, km.centroids, pcs, r, d, dE, energies, ratio)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test

@dataclass
class WilcoxonResult:
    p_value: float
    rank_biserial: float
    percent_positive: float
    w_plus: float
    w_minus: float
    n: int
    method: str


def _midranks(a):
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sa = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_null(doubled_ranks):
    """Null distribution of 2*W+ as counts over all sign patterns."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(deltas, exact_max=25):
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zeros are dropped and ties get mid-ranks. For up to ``exact_max``
    non-zero differences the p-value comes from the exact null distribution
    (enumerated by dynamic programming over the actual ranks), otherwise
    from the normal approximation with tie and continuity corrections.
    The effect size is the rank-biserial correlation ``(W+ - W-)/(W+ + W-)``.
    """
    d = np.asarray(deltas, dtype=float).reshape(-1)
    if d.size == 0 or np.all(d == 0):
        raise ValueError("all differences are zero")
    pct = 100.0 * float(np.mean(d > 0))
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise ValueError(f"need at least 5 non-zero differences, got {n}")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    rbc = (w_plus - w_minus) / (w_plus + w_minus)
    if n <= exact_max:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_null(doubled)
        total = sum(counts)
        k = int(round(2 * w_plus))
        lower = sum(counts[: k + 1])
        upper = sum(counts[k:])
        p = min(1.0, 2.0 * float(min(lower, upper)) / float(total))
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        diff = w_plus - mu
        z = (abs(diff) - 0.5) / math.sqrt(var) if abs(diff) > 0.5 else 0.0
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
        method = "normal"
    return WilcoxonResult(p, rbc, pct, w_plus, w_minus, n, method)
