"""Conformers, distance matrices and the structural metrics built on them."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources

import numpy as np

SYMBOLS = (
    "X H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {s: z for z, s in enumerate(SYMBOLS) if z > 0}


def _load_elements():
    masses, radii = {}, {}
    text = resources.files("dgflow.data").joinpath("elements.txt").read_text()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        z, _, mass, radius = line.split()
        masses[int(z)] = float(mass)
        radii[int(z)] = float(radius)
    return masses, radii


MASSES, COVALENT_RADII = _load_elements()
BOND_SCALE = 1.2


@dataclass(frozen=True)
class Conformer:
    """Atomic numbers ``Z`` (n,) and Cartesian coordinates ``R`` (n, 3) in Angstrom."""

    Z: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=int).reshape(-1)
        R = np.asarray(self.R, dtype=float)
        if R.ndim != 2 or R.shape[1] != 3:
            raise ValueError(f"coordinates must have shape (n, 3), got {R.shape}")
        if len(Z) != len(R) or len(Z) < 1:
            raise ValueError(f"{len(Z)} atom types for {len(R)} positions")
        if np.any((Z < 1) | (Z > 118)):
            raise ValueError(f"atomic numbers must lie in 1..118, got {Z.tolist()}")
        if not np.all(np.isfinite(R)):
            raise ValueError("coordinates must be finite")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "R", R)

    @property
    def n(self):
        return len(self.Z)

    @property
    def symbols(self):
        return [SYMBOLS[z] for z in self.Z]

    def with_coords(self, R):
        return Conformer(self.Z, R)


def _coords(c):
    return c.R if isinstance(c, Conformer) else np.asarray(c, dtype=float)


class BondChange(enum.Enum):
    UNCHANGED = "unchanged-bond"
    BROKEN = "broken"
    FORMED = "formed"
    NEVER = "never-bonded"


# ---------------------------------------------------------------------------
# distances

def pairwise_distances(c):
    """Distance matrix from the Gram identity ``|a|^2 + |b|^2 - 2 a.b``.

    Accepts a :class:`Conformer` or an (n, dim) array. Leading batch axes are
    allowed for arrays. Negative radicands from cancellation are clamped to 0.
    """
    R = _coords(c)
    G = R @ np.swapaxes(R, -1, -2)
    sq = np.diagonal(G, axis1=-2, axis2=-1)
    D2 = sq[..., :, None] + sq[..., None, :] - 2.0 * G
    D = np.sqrt(np.clip(D2, 0.0, None))
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    idx = np.arange(D.shape[-1])
    D[..., idx, idx] = 0.0
    return D


def check_distance_matrix(D, tol=1e-10):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"distance matrix must be square, got {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix has non-finite entries")
    if np.max(np.abs(D - D.T), initial=0.0) > tol:
        raise ValueError("distance matrix is not symmetric")
    if np.max(np.abs(np.diag(D)), initial=0.0) > tol:
        raise ValueError("distance matrix diagonal is not zero")
    if np.min(D, initial=0.0) < -tol:
        raise ValueError("distance matrix has negative entries")
    return D


# ---------------------------------------------------------------------------
# alignment and metrics

def _check_pair(ref, mov):
    if isinstance(ref, Conformer) and isinstance(mov, Conformer):
        if ref.n != mov.n or np.any(ref.Z != mov.Z):
            raise ValueError("conformers differ in atom count or atom types")
    A, B = _coords(ref), _coords(mov)
    if A.shape != B.shape:
        raise ValueError(f"coordinate shapes differ: {A.shape} vs {B.shape}")
    return A, B


def kabsch_align(ref, mov):
    """Superimpose ``mov`` onto ``ref`` with the optimal proper rotation.

    Returns
    -------
    aligned : (n, dim) array
        ``mov`` after rotation and translation onto ``ref``.
    rotation : (dim, dim) array
        Proper rotation (det = +1) applied as ``(mov - mov_c) @ rotation.T``.
    rmsd : float
    """
    A, B = _check_pair(ref, mov)
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    P, Q = B - cb, A - ca
    H = P.T @ Q
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    corr = np.ones(len(S))
    corr[-1] = d
    rot = Vt.T @ np.diag(corr) @ U.T
    aligned = P @ rot.T + ca
    value = float(np.sqrt(np.mean(np.sum((aligned - A) ** 2, axis=1))))
    return aligned, rot, value


def rmsd(ref, mov):
    """Root-mean-square deviation after Kabsch alignment."""
    return kabsch_align(ref, mov)[2]


def dmae(a, b):
    """Mean absolute difference of off-diagonal entries of two distance matrices."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"distance matrices must be square and equal in size: {a.shape}, {b.shape}")
    n = a.shape[0]
    if n < 2:
        return 0.0
    off = ~np.eye(n, dtype=bool)
    return float(np.abs(a - b)[off].sum() / (n * (n - 1)))


def force_metrics(forces):
    """Return ``(f_max, F_rms)`` for per-atom force vectors of shape (n, dim)."""
    F = np.asarray(forces, dtype=float)
    norms = np.linalg.norm(F.reshape(F.shape[0], -1), axis=1)
    return float(norms.max()), float(np.sqrt(np.mean(norms ** 2)))


# ---------------------------------------------------------------------------
# descriptors and bonding

def coulomb_matrix(c):
    """Coulomb matrix: ``0.5 Z_i^2.4`` on the diagonal, ``Z_i Z_j / d_ij`` elsewhere."""
    Z = c.Z.astype(float)
    D = pairwise_distances(c)
    n = len(Z)
    off = ~np.eye(n, dtype=bool)
    if np.any(D[off] == 0.0):
        raise ValueError("coincident atoms: Coulomb matrix undefined")
    C = np.zeros((n, n))
    C[off] = (np.outer(Z, Z)[off]) / D[off]
    C[np.diag_indices(n)] = 0.5 * Z ** 2.4
    return C


def infer_bonds(c, scale=BOND_SCALE):
    """Bonded pairs ``(i, j)``, i < j, with ``d_ij <= scale * (r_i + r_j)``."""
    missing = sorted({int(z) for z in c.Z if int(z) not in COVALENT_RADII})
    if missing:
        raise KeyError(f"no covalent radius for elements {[SYMBOLS[z] for z in missing]}")
    r = np.array([COVALENT_RADII[int(z)] for z in c.Z])
    D = pairwise_distances(c)
    cut = scale * (r[:, None] + r[None, :])
    i, j = np.nonzero(np.triu(D <= cut, k=1))
    return {(int(a), int(b)) for a, b in zip(i, j)}


def classify_bond_changes(reactant, product, scale=BOND_SCALE):
    """Label every unordered pair by how its bond changes from reactant to product."""
    if reactant.n != product.n or np.any(reactant.Z != product.Z):
        raise ValueError("reactant and product must share atom ordering")
    br, bp = infer_bonds(reactant, scale), infer_bonds(product, scale)
    labels = {}
    for i in range(reactant.n):
        for j in range(i + 1, reactant.n):
            in_r, in_p = (i, j) in br, (i, j) in bp
            if in_r and in_p:
                labels[i, j] = BondChange.UNCHANGED
            elif in_r:
                labels[i, j] = BondChange.BROKEN
            elif in_p:
                labels[i, j] = BondChange.FORMED
            else:
                labels[i, j] = BondChange.NEVER
    return labels


def distance_percentage_errors(pred, truth, bin_width=0.5):
    """Relative distance errors ``|pred - truth| / truth`` over the upper triangle.

    Returns ``(per_pair, bins)``: ``per_pair`` maps ``(i, j)`` to the error and
    ``bins`` is a list of ``(lo, hi, mean_error, count)`` over truth-distance
    intervals of width ``bin_width`` (empty bins omitted).
    """
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("matrices differ in size")
    i, j = np.triu_indices(truth.shape[0], k=1)
    t = truth[i, j]
    if np.any(t <= 0):
        raise ValueError("reference distance is zero off the diagonal")
    err = np.abs(pred[i, j] - t) / t
    per_pair = {(int(a), int(b)): float(e) for a, b, e in zip(i, j, err)}
    which = np.floor(t / bin_width).astype(int)
    bins = []
    for k in np.unique(which):
        sel = which == k
        bins.append((k * bin_width, (k + 1) * bin_width, float(err[sel].mean()), int(sel.sum())))
    return per_pair, bins
