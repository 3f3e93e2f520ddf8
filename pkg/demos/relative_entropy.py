"""Relative entropy and force matching on the same coarse family.

With the quadratic family U(z; theta) = theta z^2 / 2, both methods should
find theta = 2 for the dimer, and the fitted potentials differ only by a
constant.  The second part checks the small-perturbation expansion of the
relative entropy on an exact Gaussian PMF.
"""

import numpy as np

from cgmatch import cgmap, fmatch, meanforce, microsys, refmethods, sampler

system = microsys.harmonic_dimer(1.0)
com = cgmap.center_of_mass([[0, 1]], system.masses, dim=1)
samples = sampler.metropolis_sample(system, 1.0, 11000, seed=20261016, n_burn=1000,
                                    n_chains=100)
lf = meanforce.evaluate_over_samples(system, com, meanforce.WSpec.equals_jacobian(), 1.0, samples)

# %% force matching on the monomial z^2/2, relative entropy on the same family
theta_fm = fmatch.fit_force(lf.z, lf.h, fmatch.MonomialPotentialBasis((2,)), ridge=0).coeffs[0, 0]
rep = refmethods.minimize_relative_entropy(lf.z[:, 0], refmethods.CGPotentialFamily.quadratic(),
                                           [1.0], 1.0, (-5.0, 5.0))
print(f"theta_FM = {theta_fm:.4f}   theta_RE = {rep.theta_star[0]:.4f} "
      f"({rep.n_iter} iterations)")

# %% expansion: D - (beta^2/2) Var(dU) should fall by ~8 per halving
pmf = refmethods.PMFTable.from_function(np.linspace(-3.5, 3.5, 2001), lambda z: z**2, 1.0)
fam = refmethods.CGPotentialFamily.quadratic()
print("\n  eps        D          (b^2/2)Var    b^2 E[dU^2]   remainder")
prev = None
for eps in (0.08, 0.04, 0.02, 0.01):
    r = refmethods.expansion_check(pmf, fam, [2.0 + eps], 1.0)
    ratio = "" if prev is None else f"  (ratio {prev / r.remainder:.2f})"
    print(f"  {eps:.2f}  {r.D:.4e}   {r.half_beta2_variance:.4e}   "
          f"{r.paper_form_beta2_meansquare:.4e}   {r.remainder:+.3e}{ratio}")
    prev = r.remainder
