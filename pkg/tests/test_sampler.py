import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cgmatch import meanforce as mf
from cgmatch import microsys as ms
from cgmatch import sampler as sp
from cgmatch.exceptions import QuadratureError, SamplingError

from conftest import SEED


def chain_mean_se(values, chains):
    # batch means over independent chains
    m = np.array([values[chains == c].mean() for c in np.unique(chains)])
    return m.mean(), m.std(ddof=1) / np.sqrt(len(m))


# ---------------------------------------------------------------------------
# Metropolis sampling


def test_dimer_variance(dimer_samples):
    x1 = dimer_samples.samples[:, 0]
    assert len(dimer_samples) == 100_000
    m, se = chain_mean_se(x1**2 - x1.mean() ** 2, dimer_samples.chain)
    assert abs(m - 1.0) <= 3 * se
    assert 0.1 <= dimer_samples.acceptance_rate <= 0.9


def test_ideal_gas_uniform():
    gas = ms.ideal_gas(2, 5.0, dim=1)
    s = sp.metropolis_sample(gas, 1.0, 2000, step_size=2.0, seed=SEED, n_burn=200,
                             n_thin=300, n_chains=400)
    assert np.all(gas.in_box(s.samples))
    for j in range(2):
        res = stats.kstest(s.samples[:, j], stats.uniform(0, 5).cdf)
        assert res.pvalue > 0.05


def test_fixed_seed_is_bitwise_reproducible(dimer):
    a = sp.metropolis_sample(dimer, 1.0, 500, seed=3, n_chains=4)
    b = sp.metropolis_sample(dimer, 1.0, 500, seed=3, n_chains=4)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.digest() == b.digest()
    c = sp.metropolis_sample(dimer, 1.0, 500, seed=4, n_chains=4)
    assert a.digest() != c.digest()


def test_chain_layout(dimer):
    s = sp.metropolis_sample(dimer, 1.0, 1000, seed=1, n_burn=100, n_thin=10, n_chains=3)
    assert s.samples.shape == (3 * 90, 2)
    np.testing.assert_array_equal(np.bincount(s.chain), [90, 90, 90])


def test_save_load_roundtrip(dimer, tmp_path):
    s = sp.metropolis_sample(dimer, 2.0, 300, seed=7, n_chains=2)
    csv_path, json_path = s.save(tmp_path / "sub" / "run")
    assert csv_path.exists() and json_path.exists()
    t = sp.SampleSet.load(tmp_path / "sub" / "run")
    np.testing.assert_array_equal(t.samples, s.samples)
    assert t.metadata() == s.metadata()


def test_non_finite_energy_raises():
    def potential(x):
        with np.errstate(divide="ignore"):
            return np.where(x[..., 0] > 0.2, np.nan, 0.5 * x[..., 0] ** 2)

    bad = ms.MicroSystem("bad", 1, 1, np.ones(1), potential)
    with pytest.raises(SamplingError, match="non-finite"):
        sp.metropolis_sample(bad, 1.0, 2000, step_size=1.0, seed=0)


@pytest.mark.parametrize("kwargs", [
    {"beta": 0.0}, {"n_steps": 10, "n_burn": 10}, {"step_size": -1.0}, {"n_chains": 0},
])
def test_invalid_sampler_arguments(dimer, kwargs):
    args = {"beta": 1.0, "n_steps": 100} | kwargs
    with pytest.raises(ValueError):
        sp.metropolis_sample(dimer, **args)


def test_acceptance_warning(dimer):
    with pytest.warns(UserWarning, match="acceptance"):
        sp.metropolis_sample(dimer, 1.0, 1000, step_size=50.0, seed=0, tune=False)


# ---------------------------------------------------------------------------
# binned conditional averages


def test_dimer_h_on_analytic_line(dimer, dimer_com, dimer_samples):
    lf = mf.evaluate_over_samples(dimer, dimer_com, mf.WSpec.equals_jacobian(), 1.0,
                                  dimer_samples)
    bc = sp.conditional_average(lf.z, lf.h, 50, blocks=dimer_samples.chain[lf.index])
    ok = (bc.counts >= 100) & bc.interior
    # compare at the within-bin mean of z, where the line is exact
    zbar = sp.conditional_average(lf.z, lf.z, bc.edges).means[..., 0]
    dev = np.abs(bc.means[..., 0] + 2 * zbar)[ok]
    assert ok.sum() >= 40
    assert np.all(dev <= 3 * bc.stderr[..., 0][ok])


def test_constant_observable(rng):
    z = rng.standard_normal(1000)
    bc = sp.conditional_average(z, np.full(1000, 3.25), 20)
    nonempty = bc.counts > 0
    np.testing.assert_array_equal(bc.means[nonempty, 0], 3.25)
    assert bc.counts.sum() == 1000


def test_z_mean_within_bin(rng):
    z = rng.standard_normal(5000)
    bc = sp.conditional_average(z, z, 25)
    e = bc.edges[0]
    ok = bc.interior & (bc.counts > 0)
    m = bc.means[:, 0]
    assert np.all((m[ok] >= e[:-1][ok]) & (m[ok] <= e[1:][ok]))


def test_two_dimensional_grid(rng):
    z = rng.standard_normal((4000, 2))
    bc = sp.conditional_average(z, z[:, 0] * z[:, 1], [8, 6])
    assert bc.means.shape == (8, 6, 1)
    assert bc.counts.sum() == 4000


def test_three_components_rejected(rng):
    with pytest.raises(ValueError):
        sp.conditional_average(rng.standard_normal((100, 3)), np.ones(100), 5)


@given(n=st.integers(50, 400), bins=st.integers(2, 30), seed=st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_tower_property(n, bins, seed):
    r = np.random.default_rng(seed)
    z = r.standard_normal(n)
    phi = np.sin(3 * z) + r.standard_normal(n)
    bc = sp.conditional_average(z, phi, bins)
    ok = bc.counts > 0
    total = np.sum(bc.counts[ok] / n * bc.means[ok, 0])
    assert abs(total - phi.mean()) <= 1e-12 * max(1.0, np.abs(phi).max())


def test_cluster_stderr_larger_for_correlated_chains(rng):
    # each chain repeats one value: i.i.d. errors are badly optimistic
    chains = np.repeat(np.arange(20), 50)
    v = np.repeat(rng.standard_normal(20), 50)
    z = rng.uniform(0, 1, 1000)
    iid = sp.conditional_average(z, v, 2)
    clus = sp.conditional_average(z, v, 2, blocks=chains)
    assert np.all(clus.stderr > 3 * iid.stderr)


def test_conditional_observable_skips_degenerate(rng):
    from cgmatch import cgmap as cgm

    X = rng.uniform(0, 5, (300, 9))
    X[:4, 6:9] = X[:4, 0:3]
    bc, skipped = sp.conditional_observable(X, cgm.end_to_end_distance(0, 2),
                                            lambda x: np.ones(len(x)), 10)
    assert skipped == 4
    assert bc.counts.sum() == 296


# ---------------------------------------------------------------------------
# quadrature oracles

GRID = (-9.0, 9.0, 181)


def test_quadrature_examples(dimer):
    assert sp.quadrature_expectation(dimer, 1.0, lambda x: x[:, 0] ** 2, GRID) == \
        pytest.approx(1.0, abs=1e-6)
    assert sp.quadrature_expectation(dimer, 1.0, lambda x: np.ones(len(x)), GRID) == \
        pytest.approx(1.0, abs=1e-10)
    f1 = lambda x: ms.force(dimer, x)[:, 0]
    assert abs(sp.quadrature_expectation(dimer, 1.0, f1, GRID)) <= 1e-8


def test_quadrature_rejects_truncated_grid(dimer):
    with pytest.raises(QuadratureError):
        sp.quadrature_expectation(dimer, 1.0, lambda x: x[:, 0] ** 2, (-2.0, 2.0, 41))


def test_quadrature_flags_unresolved_observable(dimer):
    # a jump is not resolved by the trapezoid rule at this spacing
    with pytest.raises(QuadratureError, match="coarse"):
        sp.quadrature_expectation(dimer, 1.0, lambda x: (x[:, 0] > 0.5).astype(float), GRID,
                                  tol=1e-5)


def test_quadrature_grid_must_be_odd(dimer):
    with pytest.raises(ValueError):
        sp.quadrature_expectation(dimer, 1.0, lambda x: x[:, 0], (-8.0, 8.0, 100))


def test_conditional_quadrature_examples(dimer, dimer_com):
    h = lambda x: mf.local_mean_force(dimer, dimer_com, mf.WSpec.equals_jacobian(), 1.0, x)
    assert sp.conditional_quadrature(dimer, 1.0, dimer_com, h, [0.5], GRID)[0] == \
        pytest.approx(-1.0, abs=1e-6)
    one = sp.conditional_quadrature(dimer, 1.0, dimer_com, lambda x: np.ones(len(x)),
                                    [-1.0, 0.0, 2.0], GRID)
    np.testing.assert_allclose(one, 1.0, atol=1e-10)
    diff = sp.conditional_quadrature(dimer, 1.0, dimer_com, lambda x: x[:, 0] - x[:, 1],
                                     [-0.7, 0.3, 1.1], GRID)
    np.testing.assert_allclose(diff, 0.0, atol=1e-8)


OBSERVABLES = {
    "x1": lambda x: x[:, 0],
    "x2": lambda x: x[:, 1],
    "x1^2": lambda x: x[:, 0] ** 2,
    "x2^2": lambda x: x[:, 1] ** 2,
    "x1x2": lambda x: x[:, 0] * x[:, 1],
    "x1^3": lambda x: x[:, 0] ** 3,
    "x2^3": lambda x: x[:, 1] ** 3,
    "x1^2x2": lambda x: x[:, 0] ** 2 * x[:, 1],
    "x1^4": lambda x: x[:, 0] ** 4,
    "x2^4": lambda x: x[:, 1] ** 4,
    "x1^2x2^2": lambda x: (x[:, 0] * x[:, 1]) ** 2,
    "cos x1": lambda x: np.cos(x[:, 0]),
    "cos x2": lambda x: np.cos(x[:, 1]),
    "sin(x1+x2)": lambda x: np.sin(x[:, 0] + x[:, 1]),
    "tanh^2": lambda x: np.tanh(2 * x[:, 0]) ** 2,
    "gauss x1": lambda x: np.exp(-x[:, 0] ** 2),
    "z^2": lambda x: (0.5 * (x[:, 0] + x[:, 1])) ** 2,
    "U": lambda x: 0.5 * np.sum(x**2, axis=1),
    "f1 x1": lambda x: -x[:, 0] ** 2,
    "exp x1/2": lambda x: np.exp(x[:, 0] / 2),
}


@pytest.mark.parametrize("name", sorted(OBSERVABLES))
def test_quadrature_agrees_with_monte_carlo(name, dimer, dimer_samples):
    obs = OBSERVABLES[name]
    exact = sp.quadrature_expectation(dimer, 1.0, obs, GRID, tol=1e-5)
    m, se = chain_mean_se(obs(dimer_samples.samples), dimer_samples.chain)
    assert abs(m - exact) <= 3 * se
