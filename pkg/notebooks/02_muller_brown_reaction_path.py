"""Climbing-image NEB, Hessian check and IRC on the Muller-Brown surface.

Run with ``python3 notebooks/02_muller_brown_reaction_path.py``; takes a second.
"""

import numpy as np

from dgflow import pathband as pb

mb = pb.MullerBrown()

# %% relax the two end points from rough guesses
A = pb.relax(mb, np.array([[-0.5, 1.5]])).coords
B = pb.relax(mb, np.array([[0.6, 0.0]])).coords
print(f"minimum A {A[0].round(5)}  E = {mb.energy(A):.3f}")
print(f"minimum B {B[0].round(5)}  E = {mb.energy(B):.3f}")

# %% eleven images, spring constant 0.1
images = [A + (B - A) * k / 10 for k in range(11)]
band = pb.cineb(mb, images, k=0.1, fmax=0.05)
print(f"CI-NEB {band.status} after {band.steps} steps; climbing image at {band.ts[0].round(5)}, "
      f"E = {band.energies[band.climbing]:.3f}")
print("band energies:", np.round(band.energies, 2))

# %% harmonic analysis at the climbing image
report = pb.harmonic_analysis(pb.hessian_fd(mb, band.ts))
print(f"Hessian eigenvalues {report.eigenvalues.round(2)}; first-order saddle: {report.is_saddle}")

# %% follow the unstable mode downhill in both directions
res = pb.irc(mb, band.ts, report.mode(0))
for name, path, energies in (("forward", res.forward, res.forward_energies),
                             ("reverse", res.reverse, res.reverse_energies)):
    print(f"{name:7s} IRC: {len(path)} points, ends at {path[-1][0].round(4)}, E {energies[0]:.2f} -> {energies[-1]:.2f}")
# The top saddle of this band sits between A and the shallow middle minimum,
# so one branch ends in that intermediate rather than at B.
