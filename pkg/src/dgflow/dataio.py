"""Reaction records, XYZ files, dataset directories and the synthetic reaction oracle."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .geom import ATOMIC_NUMBER, SYMBOLS, Conformer, pairwise_distances
from .reconstruct import reconstruct


class XYZFormatError(ValueError):
    pass


@dataclass
class ReactionRecord:
    id: str
    reactant: Conformer
    product: Conformer
    ts: Conformer
    energies: dict = field(default_factory=dict)
    provenance: str = ""

    def __post_init__(self):
        for c in (self.product, self.ts):
            if c.n != self.reactant.n or np.any(c.Z != self.reactant.Z):
                raise ValueError(f"record {self.id}: conformers do not share atom types")

    @property
    def Z(self):
        return self.reactant.Z

    @property
    def n(self):
        return self.reactant.n


# ---------------------------------------------------------------------------
# XYZ

def format_xyz(frames, comments=None):
    """Multi-frame XYZ text; coordinates written with 17 significant digits."""
    if isinstance(frames, Conformer):
        frames = [frames]
    comments = comments or [""] * len(frames)
    lines = []
    for c, comment in zip(frames, comments):
        lines.append(str(c.n))
        lines.append(comment.replace("\n", " "))
        for s, (x, y, z) in zip(c.symbols, c.R):
            lines.append(f"{s} {x:.17g} {y:.17g} {z:.17g}")
    return "\n".join(lines) + "\n"


def parse_xyz(text, source="<string>"):
    """Parse every frame of an XYZ document. Returns ``(conformers, comments)``."""
    lines = text.splitlines()
    frames, comments = [], []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i].strip())
        except ValueError:
            raise XYZFormatError(f"{source}:{i + 1}: expected an atom count, got {lines[i]!r}")
        if n < 1:
            raise XYZFormatError(f"{source}:{i + 1}: atom count must be positive")
        if i + 1 >= len(lines):
            raise XYZFormatError(f"{source}:{i + 1}: missing comment line")
        comments.append(lines[i + 1])
        Z, R = [], []
        for k in range(n):
            ln = i + 2 + k
            if ln >= len(lines) or not lines[ln].strip():
                raise XYZFormatError(f"{source}:{ln + 1}: frame declares {n} atoms but has {k}")
            parts = lines[ln].split()
            if len(parts) < 4:
                raise XYZFormatError(f"{source}:{ln + 1}: expected 'symbol x y z'")
            sym = parts[0]
            if sym in ATOMIC_NUMBER:
                Z.append(ATOMIC_NUMBER[sym])
            elif sym.isdigit() and 1 <= int(sym) <= 118:
                Z.append(int(sym))
            else:
                raise XYZFormatError(f"{source}:{ln + 1}: unknown element {sym!r}")
            try:
                R.append([float(v) for v in parts[1:4]])
            except ValueError:
                raise XYZFormatError(f"{source}:{ln + 1}: malformed coordinates")
        nxt = i + 2 + n
        if nxt < len(lines) and lines[nxt].strip():
            try:
                int(lines[nxt].strip())
            except ValueError:
                raise XYZFormatError(f"{source}:{nxt + 1}: frame declares {n} atoms but has more")
        frames.append(Conformer(Z, R))
        i = nxt
    return frames, comments


def write_xyz(path, frames, comments=None):
    with open(path, "w") as fh:
        fh.write(format_xyz(frames, comments))


def read_xyz(path):
    with open(path) as fh:
        return parse_xyz(fh.read(), source=str(path))[0]


# ---------------------------------------------------------------------------
# dataset directories

INDEX = "index.jsonl"


def save_dataset(directory, records):
    """Write ``records`` as one XYZ file per structure plus a JSON-lines index."""
    os.makedirs(os.path.join(directory, "xyz"), exist_ok=True)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    with open(os.path.join(directory, INDEX), "w") as fh:
        for rec in records:
            entry = {"id": rec.id}
            for role in ("reactant", "product", "ts"):
                rel = f"xyz/{rec.id}_{role}.xyz"
                write_xyz(os.path.join(directory, rel), getattr(rec, role))
                entry[role] = rel
            if rec.energies:
                entry["energies"] = {k: float(v) for k, v in sorted(rec.energies.items())}
            if rec.provenance:
                entry["provenance"] = rec.provenance
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def load_dataset(directory):
    path = os.path.join(directory, INDEX)
    records, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if entry["id"] in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {entry['id']!r}")
            seen.add(entry["id"])
            confs = {}
            for role in ("reactant", "product", "ts"):
                frames = read_xyz(os.path.join(directory, entry[role]))
                if len(frames) != 1:
                    raise ValueError(f"{entry[role]}: expected a single frame")
                confs[role] = frames[0]
            records.append(ReactionRecord(entry["id"], confs["reactant"], confs["product"],
                                          confs["ts"], entry.get("energies", {}),
                                          entry.get("provenance", "")))
    return records


# ---------------------------------------------------------------------------
# synthetic reactions

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic reaction generator.

    The transition state is ``reconstruct(W)`` with
    ``W = (D_R + D_P)/2 + amp * tanh((rate * (D_R - D_P))^2)``; ``amp`` and
    ``rate`` are drawn once from ``warp_seed``. The warp is even in
    ``D_R - D_P``, so the target is unchanged when reactant and product swap.
    """

    n_atoms: tuple = (5, 5)
    displacement: float = 0.6
    warp_seed: int = 0
    size: int = 200
    elements: tuple = (1, 6, 7, 8)
    min_distance: float = 0.7
    density: float = 0.1  # atoms per cubic Angstrom
    warp: bool = True

    def __post_init__(self):
        lo, hi = self.n_atoms
        if lo < 3 or hi < lo:
            raise ValueError("atom counts must satisfy 3 <= lo <= hi")
        if self.displacement <= 0 or self.density <= 0 or self.min_distance <= 0:
            raise ValueError("scales must be positive")
        if self.size < 1:
            raise ValueError("size must be positive")

    def warp_constants(self):
        if not self.warp:
            return 0.0, 0.0
        g = nx.rng(self.warp_seed)
        return float(g.uniform(0.3, 0.5)), float(g.uniform(0.8, 1.2))


def warp_midpoint(D_R, D_P, amp, rate):
    return 0.5 * (D_R + D_P) + amp * np.tanh((rate * (D_R - D_P)) ** 2)


def _point_cloud(gen, n, spec):
    side = (n / spec.density) ** (1.0 / 3.0)
    pts = []
    for _ in range(n):
        for _attempt in range(100):
            p = gen.uniform(0.0, side, size=3)
            if all(np.linalg.norm(p - q) >= spec.min_distance for q in pts):
                pts.append(p)
                break
        else:
            raise RuntimeError("overlap rejection exhausted while placing atoms")
    R = np.array(pts)
    return R - R.mean(axis=0)


def _smooth_displacement(gen, R, scale, modes=3):
    """Sum of a few random long-wavelength Fourier modes evaluated at ``R``."""
    U = np.zeros_like(R)
    for _ in range(modes):
        k = gen.normal(scale=0.5, size=3)
        amp = gen.normal(size=3)
        U += np.sin(R @ k + gen.uniform(0, 2 * np.pi))[:, None] * amp
    return scale * U / np.sqrt(modes)


def synth_reactions(spec, seed=0):
    """Generate ``spec.size`` reproducible synthetic reactions."""
    gen = nx.rng(seed)
    amp, rate = spec.warp_constants()
    records = []
    lo, hi = spec.n_atoms
    for k in range(spec.size):
        n = int(gen.integers(lo, hi + 1))
        Z = gen.choice(np.asarray(spec.elements), size=n)
        for _attempt in range(100):
            R_r = _point_cloud(gen, n, spec)
            R_p = R_r + _smooth_displacement(gen, R_r, spec.displacement)
            R_p -= R_p.mean(axis=0)
            Dp = pairwise_distances(R_p)
            if np.min(Dp + np.eye(n) * 1e9) >= spec.min_distance:
                break
        else:
            raise RuntimeError("overlap rejection exhausted for the product geometry")
        D_R = pairwise_distances(R_r)
        W = warp_midpoint(D_R, Dp, amp, rate)
        R_ts = reconstruct(W)
        records.append(ReactionRecord(f"syn{k:05d}", Conformer(Z, R_r), Conformer(Z, R_p),
                                      Conformer(Z, R_ts), provenance=f"synthetic:{seed}"))
    return records


# ---------------------------------------------------------------------------
# splitting

def split(records, fractions=(0.8, 0.1, 0.1), seed=0):
    """Deterministic disjoint partition ordered by a seeded hash of each id."""
    fractions = np.asarray(fractions, dtype=float)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    keyed = sorted(records, key=lambda r: hashlib.sha256(f"{seed}:{r.id}".encode()).hexdigest())
    n = len(keyed)
    bounds = np.round(np.cumsum(fractions) * n).astype(int)
    bounds[-1] = n
    parts, start = [], 0
    for frac, stop in zip(fractions, bounds):
        part = keyed[start:stop]
        if frac > 0 and not part:
            raise ValueError(f"dataset of {n} records too small for fractions {fractions.tolist()}")
        parts.append(part)
        start = stop
    return parts
