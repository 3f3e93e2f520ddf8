"""Radial distribution functions and inverse Boltzmann pair potentials.

An ideal gas in a hard-wall box has g(r) = 1 once the normalization
accounts for the finite box; a harmonic pair recovers its spring from
-log g(r).
"""

import numpy as np

from cgmatch import microsys, refmethods, sampler

# %% ideal gas, 10 particles in a box of side 5
gas = microsys.ideal_gas(10, 5.0)
s = sampler.metropolis_sample(gas, 1.0, 11000, step_size=2.0, seed=20261016, n_burn=1000,
                              n_chains=100)
edges = np.linspace(1.0, 3.0, 9)
boxed = refmethods.radial_distribution(s.samples, edges, box=5.0, blocks=s.chain)
# bulk normalization with the pair density (N - 1)/V ignores the walls
bulk = refmethods.radial_distribution(s.samples, edges, density=9 / 125.0)
print("   r     g (box-corrected)   g (bulk normalization)")
for r, g1, e1, g2 in zip(boxed.r, boxed.g, boxed.stderr, bulk.g):
    print(f"  {r:.2f}   {g1:.4f} +- {e1:.4f}      {g2:.4f}")

# %% harmonic pair, k = 10 and rest length 1.5
k, r0 = 10.0, 1.5
pair = microsys.harmonic_pair(k, r0)
s = sampler.metropolis_sample(pair, 1.0, 11000, seed=20261016, n_burn=1000, n_chains=100)
r = np.linalg.norm(s.samples[:, 3:] - s.samples[:, :3], axis=1)
lo, hi = np.percentile(r, [10, 90])
rdf = refmethods.radial_distribution(s.samples, np.linspace(lo, hi, 11), density=1.0,
                                     blocks=s.chain)
v = refmethods.inverse_boltzmann(rdf, 1.0)
spring = 0.5 * k * (v.r - r0) ** 2
shift = np.mean(v.v - spring)
print("\n   r     v(r)      k/2 (r - r0)^2")
for ri, vi, si in zip(v.r, v.v - shift, spring):
    print(f"  {ri:.3f}  {vi:7.4f}   {si:7.4f}")
