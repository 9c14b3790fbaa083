"""Reaction-path tools on pluggable potentials.

Coordinates are arrays of shape ``(n, dim)``: ``n`` particles in ``dim``
dimensions (the Muller-Brown surface is one particle in two dimensions).
Energies and forces are in the natural units of each surface; thresholds
such as ``fmax`` are interpreted in those units.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .geom import COVALENT_RADII, Conformer, dmae, pairwise_distances

log = logging.getLogger(__name__)

KB_EV = 8.617333262e-5  # Boltzmann constant, eV/K


# ---------------------------------------------------------------------------
# calculators

class Calculator:
    """Potential energy surface interface: ``energy(x)`` and ``forces(x) = -dE/dx``."""

    def energy(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def forces(self, x):
        return -self.gradient(x)

    def energy_and_forces(self, x):
        return self.energy(x), self.forces(x)


class MullerBrown(Calculator):
    """The Muller-Brown surface, one pseudo-particle with coordinates ``(1, 2)``."""

    A = np.array([-200.0, -100.0, -170.0, 15.0])
    a = np.array([-1.0, -1.0, -6.5, 0.7])
    b = np.array([0.0, 0.0, 11.0, 0.6])
    c = np.array([-10.0, -10.0, -6.5, 0.7])
    x0 = np.array([1.0, 0.0, -0.5, -1.0])
    y0 = np.array([0.0, 0.5, 1.5, 1.0])

    def _terms(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (2,):
            raise ValueError("Muller-Brown coordinates must have shape (1, 2)")
        dx, dy = x[0] - self.x0, x[1] - self.y0
        e = self.A * np.exp(self.a * dx * dx + self.b * dx * dy + self.c * dy * dy)
        return dx, dy, e

    def energy(self, x):
        return float(self._terms(x)[2].sum())

    def gradient(self, x):
        dx, dy, e = self._terms(x)
        gx = np.sum(e * (2 * self.a * dx + self.b * dy))
        gy = np.sum(e * (self.b * dx + 2 * self.c * dy))
        return np.array([[gx, gy]])


class Harmonic(Calculator):
    """``E = 1/2 sum k (x - center)^2`` with scalar or per-coordinate stiffness."""

    def __init__(self, k=1.0, center=0.0):
        self.k = np.asarray(k, dtype=float)
        self.center = np.asarray(center, dtype=float)

    def energy(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return float(0.5 * np.sum(self.k * d * d))

    def gradient(self, x):
        return self.k * (np.asarray(x, dtype=float) - self.center)


class SeparableToy(Calculator):
    """Separable n-atom surface: a Morse well along x and harmonic wells along y and z.

    ``E = sum_i De (1 - exp(-a (x_i - r0)))^2 + k/2 (y_i^2 + z_i^2)``. The
    minimum is ``x_i = r0``, ``y_i = z_i = 0`` and the Hessian is diagonal.
    """

    def __init__(self, De=1.0, a=1.5, r0=1.0, k=2.0):
        self.De, self.a, self.r0, self.k = float(De), float(a), float(r0), float(k)

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        s = 1.0 - np.exp(-self.a * (x[:, 0] - self.r0))
        return float(np.sum(self.De * s * s) + 0.5 * self.k * np.sum(x[:, 1:] ** 2))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        ex = np.exp(-self.a * (x[:, 0] - self.r0))
        g = self.k * x.copy()
        g[:, 0] = 2.0 * self.De * self.a * (1.0 - ex) * ex
        return g


class MorseCluster(Calculator):
    """Pairwise Morse potential with equilibrium lengths from covalent radii.

    ``E = sum_{i<j} De [(1 - exp(-a (r_ij - r0_ij)))^2 - 1]`` with
    ``r0_ij = rad(Z_i) + rad(Z_j)``. A cheap stand-in surface for molecules.
    """

    def __init__(self, Z, De=1.0, a=1.5):
        self.Z = np.asarray(Z, dtype=int)
        rad = np.array([COVALENT_RADII[int(z)] for z in self.Z])
        self.r0 = rad[:, None] + rad[None, :]
        self.De, self.a = float(De), float(a)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.Z), 3):
            raise ValueError(f"expected coordinates of shape {(len(self.Z), 3)}, got {x.shape}")
        return x

    def energy(self, x):
        D = pairwise_distances(self._check(x))
        s = 1.0 - np.exp(-self.a * (D - self.r0))
        iu = np.triu_indices(len(self.Z), 1)
        return float(self.De * np.sum(s[iu] ** 2 - 1.0))

    def gradient(self, x):
        x = self._check(x)
        diff = x[:, None, :] - x[None, :, :]
        D = np.sqrt(np.sum(diff * diff, axis=-1))
        np.fill_diagonal(D, 1.0)
        ex = np.exp(-self.a * (D - self.r0))
        dEdr = 2.0 * self.De * self.a * (1.0 - ex) * ex
        np.fill_diagonal(dEdr, 0.0)
        return np.sum((dEdr / D)[..., None] * diff, axis=1)


def _max_atom_force(F):
    return float(np.max(np.linalg.norm(np.atleast_2d(F), axis=-1)))


# ---------------------------------------------------------------------------
# relaxation

@dataclass
class RelaxResult:
    coords: np.ndarray
    energy: float
    fmax: float
    steps: int
    converged: bool

    @property
    def status(self):
        return "converged" if self.converged else "max-steps"


def relax(calc, coords, fmax=0.01, steps=500, alpha=70.0, maxstep=0.2):
    """Quasi-Newton (BFGS) minimisation until the largest per-atom force is below ``fmax``.

    The Hessian estimate starts at ``alpha * I``; each step is scaled so no
    atom moves more than ``maxstep`` and halved while the energy rises, so
    the returned iterate is always the lowest one visited.
    """
    x = np.array(coords, dtype=float)
    shape = x.shape
    e, F = calc.energy_and_forces(x)
    if not math.isfinite(e):
        raise FloatingPointError("energy is not finite at the starting geometry")
    H = alpha * np.eye(x.size)
    for step in range(steps + 1):
        fm = _max_atom_force(F)
        if fm <= fmax:
            return RelaxResult(x, e, fm, step, True)
        if step == steps:
            break
        w, V = np.linalg.eigh(H)
        dr = (V @ ((F.reshape(-1) @ V) / np.abs(w))).reshape(shape)
        longest = np.max(np.linalg.norm(dr, axis=-1))
        if longest > maxstep:
            dr *= maxstep / longest
        for _ in range(60):
            x_new = x + dr
            e_new, F_new = calc.energy_and_forces(x_new)
            if not math.isfinite(e_new):
                raise FloatingPointError(f"energy became non-finite at step {step}")
            if e_new <= e and np.any(x_new != x):
                break
            dr = 0.5 * dr
        else:
            break  # no downhill step left at machine precision
        s, y = dr.reshape(-1), (F - F_new).reshape(-1)
        sy = s @ y
        if sy > 1e-16:
            Hs = H @ s
            H = H + np.outer(y, y) / sy - np.outer(Hs, Hs) / (s @ Hs)
        else:
            H = alpha * np.eye(x.size)
        x, e, F = x_new, e_new, F_new
    return RelaxResult(x, e, _max_atom_force(F), step, False)


# ---------------------------------------------------------------------------
# IDPP interpolation

def idpp_stress(x, D_target):
    """``sum_{i<j} (D_ij - d_ij)^2 / d_ij^4`` for coordinates ``x`` (n, dim)."""
    d = pairwise_distances(x)
    iu = np.triu_indices(len(x), 1)
    r = d[iu]
    return float(np.sum((D_target[iu] - r) ** 2 / r ** 4))


def _idpp_grad(x, D_target):
    n = len(x)
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1)) + np.eye(n)
    T = D_target + np.eye(n)
    # d/dd of (T - d)^2 / d^4
    dSdd = (-2.0 * (T - d) * d - 4.0 * (T - d) ** 2) / d ** 5
    np.fill_diagonal(dSdd, 0.0)
    return np.sum((dSdd / d)[..., None] * diff, axis=1)


def _idpp_segment(R0, R1, n_images, tol):
    D0, D1 = pairwise_distances(R0), pairwise_distances(R1)
    images = [R0.copy()]
    shape = R0.shape
    for k in range(1, n_images - 1):
        s = k / (n_images - 1)
        target = D0 + s * (D1 - D0)
        start = R0 + s * (R1 - R0)
        f = lambda v: idpp_stress(v.reshape(shape), target)
        g = lambda v: _idpp_grad(v.reshape(shape), target).reshape(-1)
        res = nx.lbfgs_minimize(f, g, start.reshape(-1), tol=tol, max_iter=2000)
        x = res.x.reshape(shape)
        images.append(x if f(res.x) <= f(start.reshape(-1)) else start)
    images.append(R1.copy())
    return images


def _split_counts(total, weights):
    """Distribute ``total`` items proportionally to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    w = np.full(len(w), 1.0 / len(w)) if w.sum() <= 0 else w / w.sum()
    raw = total * w
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return counts


def idpp_interpolate(R_start, R_end, n_images=11, anchors=(), tol=1e-10):
    """Initial band whose images follow linearly interpolated pair distances.

    Each interior image minimises the IDPP stress, starting from the linear
    Cartesian interpolation. Anchor geometries (for example a predicted TS)
    are kept fixed; the remaining interior images are shared between the
    segments in proportion to the DMAE between consecutive anchor points.
    """
    R_start, R_end = np.asarray(R_start, dtype=float), np.asarray(R_end, dtype=float)
    anchors = [np.asarray(a, dtype=float) for a in anchors]
    for a in [R_end, *anchors]:
        if a.shape != R_start.shape:
            raise ValueError(f"geometry shape {a.shape} does not match {R_start.shape}")
    if n_images < 3 + len(anchors):
        raise ValueError("too few images for the requested anchors")
    nodes = [R_start, *anchors, R_end]
    if not anchors:
        return _idpp_segment(R_start, R_end, n_images, tol)
    free = n_images - len(nodes)
    gaps = [dmae(pairwise_distances(a), pairwise_distances(b)) for a, b in zip(nodes, nodes[1:])]
    counts = _split_counts(free, gaps)
    path = [nodes[0].copy()]
    for a, b, c in zip(nodes, nodes[1:], counts):
        path.extend(_idpp_segment(a, b, int(c) + 2, tol)[1:])
    return path


# ---------------------------------------------------------------------------
# nudged elastic band

def _tangent(x_prev, x, x_next, e_prev, e, e_next):
    """Improved tangent: follow the higher-energy neighbour, mix at extrema."""
    t_plus, t_minus = x_next - x, x - x_prev
    if e_next > e > e_prev:
        tau = t_plus
    elif e_next < e < e_prev:
        tau = t_minus
    else:
        dmax = max(abs(e_next - e), abs(e_prev - e))
        dmin = min(abs(e_next - e), abs(e_prev - e))
        if e_next > e_prev:
            tau = t_plus * dmax + t_minus * dmin
        else:
            tau = t_plus * dmin + t_minus * dmax
    norm = np.linalg.norm(tau)
    return tau / norm if norm > 0 else tau


@dataclass
class NEBResult:
    images: list
    energies: np.ndarray
    climbing: int | None
    converged: bool
    steps: int
    trace: list = field(default_factory=list)  # (step, E_max, F_perp_max)

    @property
    def ts(self):
        i = self.climbing if self.climbing is not None else int(np.argmax(self.energies[1:-1])) + 1
        return self.images[i]

    @property
    def status(self):
        return "converged" if self.converged else "max-steps"


def neb_forces(images, energies, true_forces, k, climbing=None):
    """NEB force on every interior image and the largest perpendicular true force.

    Regular images feel the perpendicular true force plus the spring force
    along the tangent; the climbing image feels the true force with its
    tangential part inverted and no spring.
    """
    out = [np.zeros_like(images[0])]
    fperp = 0.0
    for i in range(1, len(images) - 1):
        tau = _tangent(images[i - 1], images[i], images[i + 1],
                       energies[i - 1], energies[i], energies[i + 1])
        F = true_forces[i]
        par = np.sum(F * tau)
        perp = F - par * tau
        fperp = max(fperp, _max_atom_force(perp))
        if i == climbing:
            out.append(F - 2.0 * par * tau)
        else:
            spring = k * (np.linalg.norm(images[i + 1] - images[i]) -
                          np.linalg.norm(images[i] - images[i - 1]))
            out.append(perp + spring * tau)
    out.append(np.zeros_like(images[0]))
    return out, fperp


def cineb(calc, images, k=0.1, fmax=0.05, steps=1000, climb=True, ci_after=10,
          ci_fperp=0.5, dt=0.1, dtmax=1.0, maxstep=0.2, trace_path=None):
    """Climbing-image NEB with a FIRE optimiser; the endpoints never move.

    Climbing starts after ``ci_after`` steps or as soon as the largest
    perpendicular force drops below ``ci_fperp``, whichever comes first.
    Converged when the largest per-atom NEB force (which includes the
    climbing image's full force) is at most ``fmax``.
    """
    path = [np.array(x, dtype=float) for x in images]
    if len(path) < 3:
        raise ValueError("a band needs at least three images")
    n_min, f_inc, f_dec, a_start, f_a = 5, 1.1, 0.5, 0.1, 0.99
    ends = [calc.energy_and_forces(path[0]), calc.energy_and_forces(path[-1])]
    v = None
    alpha, n_pos = a_start, 0
    trace = []
    climbing = None
    converged = False

    def evaluate(path):
        ef = [ends[0]] + [calc.energy_and_forces(x) for x in path[1:-1]] + [ends[1]]
        E = np.array([e for e, _ in ef])
        if not np.all(np.isfinite(E)):
            raise FloatingPointError("non-finite energy on the band")
        return E, [f for _, f in ef]

    E, TF = evaluate(path)
    step = 0
    for step in range(steps + 1):
        _, fperp = neb_forces(path, E, TF, k)
        if climb and climbing is None and (step >= ci_after or fperp < ci_fperp):
            climbing = int(np.argmax(E[1:-1])) + 1
        if climbing is not None:
            climbing = int(np.argmax(E[1:-1])) + 1
        F, fperp = neb_forces(path, E, TF, k, climbing)
        fnorm = max(_max_atom_force(f) for f in F[1:-1])
        trace.append((step, float(E[1:-1].max()), fperp))
        if fnorm <= fmax and (climbing is not None or not climb):
            converged = True
            break
        if step == steps:
            break
        f = np.concatenate([x.reshape(-1) for x in F[1:-1]])
        if v is None:
            v = np.zeros_like(f)
        else:
            vf = v @ f
            if vf > 0.0:
                v = (1.0 - alpha) * v + alpha * f / np.linalg.norm(f) * np.linalg.norm(v)
                if n_pos > n_min:
                    dt = min(dt * f_inc, dtmax)
                    alpha *= f_a
                n_pos += 1
            else:
                v[:] = 0.0
                alpha = a_start
                dt *= f_dec
                n_pos = 0
        v = v + dt * f
        dr = dt * v
        norm = np.linalg.norm(dr)
        if norm > maxstep:
            dr *= maxstep / norm
        off = 0
        for i in range(1, len(path) - 1):
            size = path[i].size
            path[i] = path[i] + dr[off:off + size].reshape(path[i].shape)
            off += size
        E, TF = evaluate(path)
    if trace_path:
        write_trace(trace_path, trace)
    return NEBResult(path, E, climbing, converged, step, trace)


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "E_max", "F_perp_max"])
        for s, e, f in trace:
            w.writerow([s, repr(e), repr(f)])


def path_frames(images, Z, energies=None):
    """Conformers for an XYZ dump; 1-D and 2-D coordinates are zero-padded to 3-D."""
    frames, comments = [], []
    for i, x in enumerate(images):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        R = np.zeros((len(x), 3))
        R[:, : min(3, x.shape[1])] = x[:, :3]
        frames.append(Conformer(Z, R))
        comments.append(f"image={i}" + (f" energy={energies[i]!r}" if energies is not None else ""))
    return frames, comments


# ---------------------------------------------------------------------------
# Hessians and normal modes

def hessian_fd(calc, coords, h=1e-4):
    """Central-difference Hessian from forces, symmetrised; shape ``(size, size)``."""
    x = np.array(coords, dtype=float)
    flat = x.reshape(-1)
    H = np.empty((flat.size, flat.size))
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = calc.forces(x).reshape(-1)
        flat[k] = old - h
        fm = calc.forces(x).reshape(-1)
        flat[k] = old
        H[:, k] = -(fp - fm) / (2.0 * h)
    return 0.5 * (H + H.T)


@dataclass
class HarmonicReport:
    eigenvalues: np.ndarray   # ascending, mass-weighted
    eigenvectors: np.ndarray  # columns, mass-weighted coordinates
    n_negative: int
    masses: np.ndarray        # per coordinate
    floor: float = 1e-6

    @property
    def is_saddle(self):
        return self.n_negative == 1

    @property
    def frequencies(self):
        """Angular frequencies; imaginary modes are reported as negative numbers."""
        return np.sign(self.eigenvalues) * np.sqrt(np.abs(self.eigenvalues))

    def mode(self, index=0):
        """Cartesian displacement direction of a mode (unit length in mass-weighted space)."""
        return self.eigenvectors[:, index] / np.sqrt(self.masses)


def _rigid_basis(coords, m):
    """Orthonormal mass-weighted translations and rotations of a 3-D structure."""
    x = np.asarray(coords, dtype=float)
    n = len(x)
    sm = np.sqrt(m.reshape(n, 3)[:, 0])
    com = np.sum(sm[:, None] ** 2 * x, axis=0) / np.sum(sm ** 2)
    r = x - com
    vecs = []
    for a in range(3):
        t = np.zeros((n, 3))
        t[:, a] = sm
        vecs.append(t.reshape(-1))
        e = np.zeros(3)
        e[a] = 1.0
        vecs.append((np.cross(e, r) * sm[:, None]).reshape(-1))
    U, s, _ = np.linalg.svd(np.array(vecs).T, full_matrices=False)
    return U[:, s > 1e-8 * s.max()]


def harmonic_analysis(H, masses=None, floor=1e-6, coords=None):
    """Eigen-decomposition of the mass-weighted Hessian ``M^-1/2 H M^-1/2``.

    ``masses`` may be given per atom (expanded over each atom's coordinates)
    or per coordinate. Eigenvalues below ``-floor`` count as negative. With
    3-D ``coords`` the rigid translations and rotations are projected out
    first, so they show up as exact zeros instead of spurious modes.
    """
    H = np.asarray(H, dtype=float)
    size = H.shape[0]
    if masses is None:
        m = np.ones(size)
    else:
        m = np.asarray(masses, dtype=float).reshape(-1)
        if m.size != size:
            if size % m.size:
                raise ValueError(f"{m.size} masses do not fit a {size}x{size} Hessian")
            m = np.repeat(m, size // m.size)
    if np.any(m <= 0):
        raise ValueError("masses must be positive")
    s = 1.0 / np.sqrt(m)
    Hmw = H * s[:, None] * s[None, :]
    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.size != size:
            raise ValueError("rigid-motion projection needs (n, 3) coordinates matching the Hessian")
        Q = _rigid_basis(coords, m)
        P = np.eye(size) - Q @ Q.T
        Hmw = P @ Hmw @ P
        Hmw = 0.5 * (Hmw + Hmw.T)
    w, V = nx.sym_eigen(Hmw, tol=1e-8 * max(1.0, np.abs(H).max()))
    return HarmonicReport(w, V, int(np.sum(w < -floor)), m, floor)


def normal_mode_sample(report, coords, T=300.0, gen=None, size=None, kB=KB_EV):
    """Thermal displacement along mass-weighted normal modes.

    Each mode with eigenvalue above the floor gets an amplitude drawn from
    ``N(0, kB T / lambda)`` in mass-weighted coordinates; modes at or below
    the floor are skipped (with a warning if any are negative).
    """
    x0 = np.asarray(coords, dtype=float)
    gen = gen if gen is not None else nx.rng()
    w = report.eigenvalues
    keep = w > report.floor
    if np.any(w < -report.floor):
        warnings.warn(f"skipping {int(np.sum(w < -report.floor))} negative mode(s)", RuntimeWarning)
    shape = (() if size is None else (size,))
    amp = np.zeros(shape + (keep.sum(),))
    if T > 0:
        amp = gen.normal(size=shape + (keep.sum(),)) * np.sqrt(kB * T / w[keep])
    q = amp @ report.eigenvectors[:, keep].T
    dx = q / np.sqrt(report.masses)
    return x0 + dx.reshape(shape + x0.shape)


# ---------------------------------------------------------------------------
# intrinsic reaction coordinate

class IRCDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class IRCResult:
    forward: list   # geometries, starting at the saddle
    reverse: list
    forward_energies: list
    reverse_energies: list

    @property
    def endpoints(self):
        return (self.forward[-1] if self.forward else None,
                self.reverse[-1] if self.reverse else None)


def _descend(calc, x, m, step, max_steps, fmax, relax_fmax):
    path = [x.copy()]
    e, F = calc.energy_and_forces(x)
    energies = [e]
    length = step
    for _ in range(max_steps):
        if _max_atom_force(F) <= fmax:
            break
        d = F / m  # steepest descent in mass-weighted coordinates, back in Cartesian
        dn = np.linalg.norm(d * np.sqrt(m))
        for _attempt in range(60):
            x_new = x + d * (length / dn)
            e_new, F_new = calc.energy_and_forces(x_new)
            if e_new <= e and np.any(x_new != x):
                break
            length *= 0.5
        else:
            raise IRCDiverged("energy keeps rising; step halving exhausted", list(zip(path, energies)))
        x, e, F = x_new, e_new, F_new
        path.append(x.copy())
        energies.append(e)
        length = min(step, 1.5 * length)
    res = relax(calc, x, fmax=relax_fmax)
    if res.energy <= e and np.any(res.coords != x):
        path.append(res.coords)
        energies.append(res.energy)
    return path, energies


def irc(calc, saddle, mode, step=0.01, max_steps=1000, fmax=0.1, masses=None, delta=None,
        relax_fmax=0.01):
    """Mass-weighted steepest descent from a saddle along both directions of ``mode``.

    The start is displaced by ``delta`` (default ``step``) along the
    normalised mode, then each branch descends with step halving whenever
    the energy would rise, until the largest force is below ``fmax``; the
    branch end is then relaxed. A zero mode gives empty paths.
    """
    x0 = np.asarray(saddle, dtype=float)
    mode = np.asarray(mode, dtype=float).reshape(x0.shape)
    if masses is None:
        m = np.ones_like(x0)
    else:
        m = np.broadcast_to(np.asarray(masses, dtype=float).reshape(len(x0), -1), x0.shape)
    mw_norm = np.linalg.norm(mode * np.sqrt(m))
    if mw_norm == 0.0:
        return IRCResult([], [], [], [])
    direction = mode / mw_norm
    delta = step if delta is None else delta
    e0 = calc.energy(x0)
    branches = []
    for sign in (1.0, -1.0):
        start = x0 + sign * delta * direction
        path, energies = _descend(calc, start, m, step, max_steps, fmax, relax_fmax)
        branches.append(([x0.copy()] + path, [e0] + energies))
    (fp, fe), (rp, re) = branches
    return IRCResult(fp, rp, fe, re)
