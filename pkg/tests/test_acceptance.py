"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line, printed at the end of the session.
"""

import hashlib
import time
import warnings

import numpy as np
import pytest
import yaml

from cgmatch import cgmap as cgm
from cgmatch import cli
from cgmatch import fmatch as fm
from cgmatch import meanforce as mf
from cgmatch import microsys as ms
from cgmatch import refmethods as rm
from cgmatch import sampler as sp

from conftest import SEED

N_CHAINS = 100
N_STEPS = 11000  # 1000 burn-in + 10000 production, thinned by 10: 1e5 samples
MIN_COUNT = 100


def sample(system, step_size=0.5):
    return sp.metropolis_sample(system, 1.0, N_STEPS, step_size=step_size, seed=SEED,
                                n_burn=1000, n_thin=10, n_chains=N_CHAINS)


def force_matching_condition(lf, chains, bins=50):
    """Fraction of populated bins where E[h|z] and -dA/dz agree within 3 se."""
    z, h = lf.z[:, 0], lf.h[:, 0]
    blocks = chains[lf.index]
    edges = sp.default_edges(z, bins)
    pmf = rm.histogram_pmf(z, edges, blocks=blocks)
    F = rm.mean_force_reference(pmf)
    bc = sp.conditional_average(z, h, [edges], blocks)
    ok = (bc.counts >= MIN_COUNT) & bc.interior & np.isfinite(F.F)
    se = np.hypot(F.stderr, bc.stderr[:, 0])[ok]
    hit = np.abs(F.F - bc.means[:, 0])[ok] <= 3 * se
    return float(hit.mean()), int(ok.sum())


# ---------------------------------------------------------------------------
# 1. dimer mean-force recovery


def test_criterion_1_dimer_recovery(acceptance):
    t0 = time.perf_counter()
    dimer = ms.harmonic_dimer(1.0)
    cg = cgm.center_of_mass([[0, 1]], [1.0, 1.0], dim=1)
    s = sample(dimer)
    lf = mf.evaluate_over_samples(dimer, cg, mf.WSpec.equals_jacobian(), 1.0, s)
    model = fm.fit_force(lf.z, lf.h, fm.SplinePotentialBasis(np.linspace(-2, 2, 21)))
    elapsed = time.perf_counter() - t0

    z = lf.z[:, 0]
    edges = sp.default_edges(z, 50)
    counts = np.histogram(z, edges)[0]
    zc = 0.5 * (edges[1:] + edges[:-1])[counts >= MIN_COUNT]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dev = float(np.max(np.abs(model.force(zc) + 2 * zc)))
    ok = len(s) == 100_000 and dev <= 0.1 and elapsed <= 10.0
    acceptance(1, ok, f"max|G*+2z| = {dev:.2e} on {len(zc)} bins, {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------------------
# 2. force-matching condition on the dimer and the bending angle


def test_criterion_2_force_matching_condition(acceptance, dimer, dimer_com):
    t0 = time.perf_counter()
    s = sample(dimer)
    lf = mf.evaluate_over_samples(dimer, dimer_com, mf.WSpec.equals_jacobian(), 1.0, s)
    frac_dimer, nb_dimer = force_matching_condition(lf, s.chain)

    mol = ms.three_atom_molecule(k_b=50.0, r0=1.0, k_theta=2.0)
    sm = sample(mol, step_size=0.2)
    lfa = mf.evaluate_over_samples(mol, cgm.bending_angle(0, 1, 2), mf.WSpec.equals_jacobian(),
                                   1.0, sm)
    frac_angle, nb_angle = force_matching_condition(lfa, sm.chain)
    elapsed = time.perf_counter() - t0

    ok = frac_dimer >= 0.95 and frac_angle >= 0.95 and elapsed <= 60.0 and len(lfa) == 100_000
    acceptance(2, ok, f"dimer {frac_dimer:.3f} of {nb_dimer} bins, angle {frac_angle:.3f} of "
                      f"{nb_angle} bins, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. loss decomposition with a coarse basis


def test_criterion_3_decomposition(acceptance, dimer, dimer_com, dimer_samples):
    # W = (1, 0) gives a noisy local force with the same conditional mean
    w = mf.WSpec.constant_matrix([[1.0, 0.0]])
    lf = mf.evaluate_over_samples(dimer, dimer_com, w, 1.0, dimer_samples)
    model = fm.fit_force(lf.z, lf.h, fm.SplinePotentialBasis([-1.0, 0.0, 1.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = fm.residual_decomposition(lf.z, lf.h, model, lambda z: -2 * z,
                                        blocks=dimer_samples.chain[lf.index])
    ok = abs(rep.residual_identity_gap) <= 3 * rep.gap_stderr and rep.projection_error > 0
    acceptance(3, ok, f"gap {rep.residual_identity_gap:.2e} vs 3 se {3 * rep.gap_stderr:.2e}; "
                      f"projection error {rep.projection_error:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 4. invariance under the choice of W


def test_criterion_4_w_invariance(acceptance):
    chain = ms.harmonic_chain(3, k=1.0, masses=[1.0, 2.0, 3.0])
    cg = cgm.center_of_mass([[0, 1, 2]], chain.masses, dim=1)
    W2 = mf.solve_w_for_target(cg.matrix, np.ones((1, 3)))
    assert W2 is not None and not np.allclose(W2, cg.matrix)
    s = sample(chain)
    lf1 = mf.evaluate_over_samples(chain, cg, mf.WSpec.equals_jacobian(), 1.0, s)
    lf2 = mf.evaluate_over_samples(chain, cg, mf.WSpec.constant_matrix(W2), 1.0, s)
    z = lf1.z[:, 0]
    blocks = s.chain
    edges = sp.default_edges(z, 50)
    # the two estimators share samples, so the error of their difference is
    # estimated from the per-sample difference
    diff = sp.conditional_average(z, lf1.h[:, 0] - lf2.h[:, 0], [edges], blocks)
    ok_bins = diff.counts >= MIN_COUNT
    zscore = np.abs(diff.means[:, 0] / diff.stderr[:, 0])[ok_bins]
    ok = bool(np.all(zscore <= 3.0))
    acceptance(4, ok, f"max |diff|/se = {zscore.max():.2f} over {ok_bins.sum()} bins")
    assert ok


# ---------------------------------------------------------------------------
# 5. existence of W for target force combinations


def test_criterion_5_w_existence(acceptance):
    I3 = np.eye(3)

    def resid(T, B):
        W = mf.solve_w_for_target(T, B)
        return np.inf if W is None else float(np.max(np.abs(W @ (np.eye(T.shape[1]) - T.T @ B))))

    com = cgm.center_of_mass([[0, 1, 2, 3]], [1.0, 2.0, 3.0, 4.0])
    r_com = resid(com.matrix, np.hstack([I3] * 4))
    two = cgm.center_of_mass([[0, 1], [2, 3]], [1.0, 2.0, 3.0, 4.0])
    r_two = resid(two.matrix, np.kron([[1, 1, 0, 0], [0, 0, 1, 1]], I3))
    pairs = cgm.pairwise_average([(0, 1), (2, 3)])
    r_pair = resid(pairs.matrix, np.kron([[1, 1, 0, 0], [0, 0, 1, 1]], I3))
    zeta = np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        shared = cgm.block_linear_map(zeta, 3)
    none_found = mf.solve_w_for_target(shared.matrix, np.kron((zeta != 0) * 1.0, I3)) is None
    ok = max(r_com, r_two, r_pair) <= 1e-10 and none_found
    acceptance(5, ok, f"residuals com {r_com:.1e}, two-group {r_two:.1e}, pairwise {r_pair:.1e}; "
                      f"shared counterexample {'none' if none_found else 'FOUND'}")
    assert ok


# ---------------------------------------------------------------------------
# 6. relative entropy and force matching agree


def test_criterion_6_re_fm_equivalence(acceptance, dimer_forces):
    z = dimer_forces.z[:, 0]
    fam_basis = fm.MonomialPotentialBasis((2,))
    theta_fm = fm.fit_force(dimer_forces.z, dimer_forces.h, fam_basis, ridge=0).coeffs[0, 0]
    rep = rm.minimize_relative_entropy(z, rm.CGPotentialFamily.quadratic(), [1.0], 1.0,
                                       (-5.0, 5.0))
    theta_re = rep.theta_star[0]
    grid = np.linspace(-1.5, 1.5, 301)
    rec = rm.compare_methods(grid, {"fm": theta_fm * grid**2 / 2, "re": theta_re * grid**2 / 2},
                             None, np.exp(-grid**2))
    l2 = rec["pairwise"]["fm-re"]["l2"]
    ok = rep.converged and abs(theta_fm - theta_re) <= 0.05 and abs(theta_re - 2.0) <= 0.05 \
        and l2 <= 0.01
    acceptance(6, ok, f"theta_FM {theta_fm:.4f}, theta_RE {theta_re:.4f}, aligned L2 {l2:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 7. third-order remainder of the relative entropy expansion


def test_criterion_7_expansion_order(acceptance):
    pmf = rm.PMFTable.from_function(np.linspace(-3.5, 3.5, 2001), lambda z: z**2, 1.0)
    fam = rm.CGPotentialFamily.quadratic()
    res = [rm.expansion_check(pmf, fam, [2.0 + e], 1.0) for e in (0.08, 0.04, 0.02, 0.01)]
    ratios = [res[i].remainder / res[i + 1].remainder for i in range(3)]
    last = res[-1]
    ok = min(ratios) >= 6
    acceptance(7, ok, f"ratios {', '.join(f'{r:.2f}' for r in ratios)}; at eps 0.01: "
                      f"D {last.D:.3e}, (b^2/2)Var {last.half_beta2_variance:.3e}, "
                      f"b^2 E[dU^2] {last.paper_form_beta2_meansquare:.3e}")
    assert ok


# ---------------------------------------------------------------------------
# 8. divergence term of a nonlinear map


def test_criterion_8_divergence(acceptance, rng):
    cg = cgm.end_to_end_distance(0, 2)
    w = mf.WSpec.equals_jacobian()
    X = np.array([1.0, 0, 0, 0, 0, 0, 0, 1.0, 0]) + 0.2 * rng.standard_normal((20, 9))
    step = cgm.DIVERGENCE_STEP
    d1 = cgm.divergence_term(cg, w, X, step)[:, 0]
    d2 = cgm.divergence_term(cg, w, X, step / 2)[:, 0]
    fd_ok = bool(np.all(np.abs(d1 - d2) <= 10 * step**2 * np.abs(d1)))
    r = np.linalg.norm(X[:, 6:] - X[:, :3], axis=1)
    oracle_ok = bool(np.allclose(d1, 2 / r, rtol=1e-6))
    # the published constant refers to div DPi = |DPi|^2 div(DPi / |DPi|^2) = 4 / r
    div_dpi = 2 * d1[0]

    mol = ms.three_atom_molecule(k_b=50.0, r0=1.0, k_theta=2.0)
    sm = sample(mol, step_size=0.2)
    lf = mf.evaluate_over_samples(mol, cg, w, 1.0, sm)
    frac, nbins = force_matching_condition(lf, sm.chain)
    bare = mf.evaluate_over_samples(mol, cg, w, 1.0, sm, include_divergence=False)
    frac_bare, _ = force_matching_condition(bare, sm.chain)

    ok = fd_ok and oracle_ok and frac >= 0.95
    acceptance(8, ok, f"FD vs half step max rel {np.max(np.abs(d1 - d2) / np.abs(d1)):.1e}; "
                      f"criterion-2 agreement {frac:.3f} of {nbins} bins ({frac_bare:.3f} without "
                      f"the 1/beta term); WARN div DPi = {div_dpi:.4f} = 4/r at r = {r[0]:.4f}, "
                      f"published value 6")
    assert ok


# ---------------------------------------------------------------------------
# 9. structure-based methods


def test_criterion_9_structure(acceptance):
    gas = ms.ideal_gas(10, 5.0)
    sg = sp.metropolis_sample(gas, 1.0, N_STEPS, step_size=2.0, seed=SEED, n_burn=1000,
                              n_thin=10, n_chains=N_CHAINS)
    rdf = rm.radial_distribution(sg.samples, np.linspace(1.0, 3.0, 9), box=5.0, blocks=sg.chain)
    gas_dev = float(np.max(np.abs(rdf.g - 1)))

    k, r0 = 10.0, 1.5
    pair = ms.harmonic_pair(k, r0)
    sp_ = sample(pair)
    r = np.linalg.norm(sp_.samples[:, 3:] - sp_.samples[:, :3], axis=1)
    lo, hi = np.percentile(r, [10, 90])
    rdf_p = rm.radial_distribution(sp_.samples, np.linspace(lo, hi, 21), density=1.0,
                                   blocks=sp_.chain)
    v = rm.inverse_boltzmann(rdf_p, 1.0)
    d = v.v - 0.5 * k * (v.r - r0) ** 2
    rmse = float(np.sqrt(np.mean((d - d.mean()) ** 2)))
    ok = len(sg) == 100_000 and gas_dev <= 0.02 and rmse <= 0.05
    acceptance(9, ok, f"ideal gas max|g-1| {gas_dev:.4f} on r in [1, 3]; harmonic pair RMSE "
                      f"{rmse:.4f} on r in [{lo:.3f}, {hi:.3f}]")
    assert ok


# ---------------------------------------------------------------------------
# 10. determinism of every pipeline


def _numeric_artifacts(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.iterdir()) if p.is_file() and not p.name.startswith("manifest_")}


def test_criterion_10_determinism(acceptance, tmp_path):
    cfg = yaml.safe_load(open("configs/dimer.yaml"))
    cfg["sampler"] = {"n_steps": 2200, "n_burn": 200, "n_thin": 10, "step_size": 0.5,
                      "chains": 20}
    cfg["basis"]["n_knots"] = 11
    path = tmp_path / "dimer.yaml"
    path.write_text(yaml.safe_dump(cfg))
    runs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        for cmd in ("validate", "sample", "match", "relent", "compare"):
            assert cli.main([cmd, "--config", str(path), "--out", out, "--quiet"]) == 0
        assert cli.main(["paper-suite", "--out", out, "--quiet"]) == 0
        runs.append(_numeric_artifacts(tmp_path / name))
    same = runs[0] == runs[1]
    ok = same and len(runs[0]) >= 10
    acceptance(10, ok, f"{len(runs[0])} numerical artifacts, "
                       f"{'identical' if same else 'DIFFERENT'} hashes across reruns")
    assert ok
