"""Force matching on a harmonic dimer.

Two particles on a line, U = (x1^2 + x2^2)/2, coarse-grained to their
centre of mass z.  The marginal of z is Gaussian with variance 1/2, so the
mean force is exactly -2z and the PMF is z^2.

Run with ``python3 demos/dimer_force_matching.py``.
"""

import numpy as np

from cgmatch import cgmap, fmatch, meanforce, microsys, refmethods, sampler

# %% sample the Gibbs measure: 100 chains, 1e5 retained states
system = microsys.harmonic_dimer(k=1.0)
com = cgmap.center_of_mass([[0, 1]], system.masses, dim=1)
samples = sampler.metropolis_sample(system, beta=1.0, n_steps=11000, step_size=0.5,
                                    seed=20261016, n_burn=1000, n_thin=10, n_chains=100)
print(f"{len(samples)} samples, acceptance {samples.acceptance_rate:.2f}")

# %% two local mean forces with the same conditional mean
# W = T gives h = f1 + f2 = -2z exactly; W = (1, 0) gives the noisy h = 2 f1.
for label, w in [("W = T", meanforce.WSpec.equals_jacobian()),
                 ("W = (1, 0)", meanforce.WSpec.constant_matrix([[1.0, 0.0]]))]:
    lf = meanforce.evaluate_over_samples(system, com, w, 1.0, samples)
    bc = sampler.conditional_average(lf.z, lf.h, 10, blocks=samples.chain)
    zc = bc.centers[0]
    print(f"\n{label}: binned E[h|z] against -2z")
    for z, m, s in zip(zc, bc.means[:, 0], bc.stderr[:, 0]):
        print(f"  z {z:+.3f}   E[h|z] {m:+.4f} +- {s:.4f}   -2z {-2 * z:+.4f}")

# %% least-squares projection onto a spline potential basis
lf = meanforce.evaluate_over_samples(system, com, meanforce.WSpec.equals_jacobian(), 1.0, samples)
basis = fmatch.SplinePotentialBasis(np.linspace(-2, 2, 21))
model = fmatch.fit_force(lf.z, lf.h, basis)
zz = np.linspace(-1.5, 1.5, 7)
print("\nfitted G(z) + 2z:", np.round(model.force(zz) + 2 * zz, 10))

# %% the fitted potential against a histogram PMF
table = fmatch.integrate_model(model)
pmf = refmethods.histogram_pmf(lf.z[:, 0], np.linspace(-1.5, 1.5, 13), blocks=samples.chain)
shift = np.mean(table(pmf.z) - pmf.A)
print("\n   z      U_fm(z)   A_hist(z)")
for z, a in zip(pmf.z, pmf.A):
    print(f"  {z:+.2f}   {table(z) - shift:7.4f}   {a:7.4f}")
