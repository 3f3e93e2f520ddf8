import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cgmatch import cgmap as cgm
from cgmatch import meanforce as mf
from cgmatch.exceptions import DegenerateMapError, DimensionError

from conftest import random_molecule

RIGHT_ANGLE = np.array([1.0, 0, 0, 0, 0, 0, 0, 1.0, 0])
COLLINEAR = np.array([1.0, 0, 0, 0, 0, 0, -1.0, 0, 0])


def e2e_distance_divergence_oracle(x):
    """div of M = DPi / |DPi|^2 for the distance between particles 0 and 2.

    M = u / 2 on both endpoints (u the unit vector), and div_y(u) = 2/r for
    y in R^3, so the total is 2 * (2/r) / 2 = 2/r.
    """
    r = np.linalg.norm(x[6:9] - x[0:3])
    return 2.0 / r


# ---------------------------------------------------------------------------
# apply


def test_com_dimer_value():
    cg = cgm.center_of_mass([[0, 1]], [1.0, 1.0], dim=1)
    assert cgm.apply(cg, [0.3, 0.7])[0] == pytest.approx(0.5)


def test_bending_angle_right_angle():
    cg = cgm.bending_angle(0, 1, 2)
    assert cgm.apply(cg, RIGHT_ANGLE)[0] == pytest.approx(np.pi / 2, abs=1e-15)


def test_end_to_end_distance_345():
    cg = cgm.end_to_end_distance(0, 2)
    x = np.array([0, 0, 0, 1, 1, 1, 3, 4, 0], dtype=float)
    assert cgm.apply(cg, x)[0] == pytest.approx(5.0)


def test_apply_wrong_dimension():
    with pytest.raises(DimensionError):
        cgm.apply(cgm.bending_angle(0, 1, 2), np.zeros(6))


def test_map_cannot_increase_dimension():
    with pytest.raises(ValueError):
        cgm.identity_map(2).__class__("bad", 2, 3, lambda x: x)


# ---------------------------------------------------------------------------
# jacobian


def test_linear_jacobian_constant(rng):
    T = rng.standard_normal((2, 5))
    cg = cgm.linear_map(T)
    for x in rng.standard_normal((3, 5)):
        np.testing.assert_array_equal(cgm.jacobian(cg, x), T)


def test_e2e_distance_gradient():
    cg = cgm.end_to_end_distance(0, 2)
    x = np.array([0, 0, 0, 1, 1, 1, 3, 4, 0], dtype=float)
    J = cgm.jacobian(cg, x)[0]
    np.testing.assert_allclose(J[0:3], [-0.6, -0.8, 0.0])
    np.testing.assert_allclose(J[3:6], 0.0)
    np.testing.assert_allclose(J[6:9], [0.6, 0.8, 0.0])
    np.testing.assert_allclose(J, cgm.fd_jacobian(cg, x)[0], atol=1e-8)


@pytest.mark.parametrize("make", [
    lambda: cgm.bending_angle(0, 1, 2),
    lambda: cgm.end_to_end_distance(0, 2),
    lambda: cgm.end_to_end_vector(0, 2),
    lambda: cgm.center_of_mass([[0, 1], [2]], [1.0, 2.0, 3.0]),
    lambda: cgm.pairwise_average([(0, 1)], n_particles=3),
])
def test_analytic_jacobian_matches_fd(make, rng):
    cg = make()
    X = random_molecule(rng, 100)
    J = cgm.jacobian(cg, X)
    Jfd = cgm.fd_jacobian(cg, X, 1e-6)
    scale = np.maximum(1.0, np.abs(J))
    assert np.max(np.abs(J - Jfd) / scale) <= 1e-6


@given(x=arrays(np.float64, 9, elements=st.floats(-0.3, 0.3)))
@settings(max_examples=60, deadline=None)
def test_angle_jacobian_property(x):
    cg = cgm.bending_angle(0, 1, 2)
    x = RIGHT_ANGLE + x
    np.testing.assert_allclose(cgm.jacobian(cg, x), cgm.fd_jacobian(cg, x, 1e-6), atol=1e-6)
    theta = cgm.apply(cg, x)[0]
    assert 0.0 < theta < np.pi


# ---------------------------------------------------------------------------
# gram and rank


def test_com_gram_formula():
    # J = (sum m_j^2 / M^2) I with M the total mass
    cg = cgm.center_of_mass([[0, 1]], [1.0, 3.0], dim=3)
    np.testing.assert_allclose(cgm.gram(cg, np.zeros(6)), 10 / 16 * np.eye(3), atol=1e-15)


def test_e2e_distance_gram_is_two(rng):
    cg = cgm.end_to_end_distance(0, 2)
    np.testing.assert_allclose(cgm.gram(cg, random_molecule(rng, 20)), 2.0, rtol=1e-13)


def test_identity_gram():
    np.testing.assert_array_equal(cgm.gram(cgm.identity_map(4), np.ones(4)), np.eye(4))


def test_gram_symmetric_positive(rng):
    with pytest.warns(UserWarning, match="more than one"):
        cg = cgm.center_of_mass([[0, 1], [1, 2]], [1.0, 2.0, 3.0])
    x = rng.standard_normal(9)
    J = cgm.gram(cg, x)
    assert np.max(np.abs(J - J.T)) <= 1e-14
    assert np.all(np.linalg.eigvalsh(J) > 0)


def test_rank_check_cases():
    assert cgm.rank_check(cgm.center_of_mass([[0, 1, 2]], [1, 1, 1]), np.zeros(9))
    assert not cgm.rank_check(cgm.bending_angle(0, 1, 2), COLLINEAR)
    x = np.array([1.0, 2, 3, 0, 0, 0, 1, 2, 3])
    assert not cgm.rank_check(cgm.end_to_end_distance(0, 2), x)


def test_degenerate_geometry_raises():
    with pytest.raises(DegenerateMapError):
        cgm.apply(cgm.bending_angle(0, 1, 2), COLLINEAR)
    with pytest.raises(DegenerateMapError):
        cgm.jacobian(cgm.end_to_end_distance(0, 2), np.zeros(9))


# ---------------------------------------------------------------------------
# divergence term


def test_linear_constant_w_divergence_zero(rng):
    cg = cgm.center_of_mass([[0, 1], [2]], [1.0, 2.0, 3.0])
    div = cgm.divergence_term(cg, mf.WSpec.equals_jacobian(), rng.standard_normal(9))
    np.testing.assert_allclose(div, 0.0, atol=1e-10)


def test_e2e_distance_divergence_oracle(rng):
    cg = cgm.end_to_end_distance(0, 2)
    X = random_molecule(rng, 20)
    div = cgm.divergence_term(cg, mf.WSpec.equals_jacobian(), X)[:, 0]
    expected = np.array([e2e_distance_divergence_oracle(x) for x in X])
    np.testing.assert_allclose(div, expected, rtol=1e-6)


def test_angle_divergence_richardson(rng):
    cg = cgm.bending_angle(0, 1, 2)
    w = mf.WSpec.equals_jacobian()
    x = random_molecule(rng, 1, spread=0.1)[0]
    d1 = cgm.divergence_term(cg, w, x, 1e-3)
    d2 = cgm.divergence_term(cg, w, x, 5e-4)
    d3 = cgm.divergence_term(cg, w, x, 2.5e-4)
    # successive differences shrink by about 4 for a second order stencil
    ratio = np.abs(d1 - d2) / np.abs(d2 - d3)
    assert 3.0 < ratio[0] < 5.0


# ---------------------------------------------------------------------------
# constructors


def test_com_weights():
    m = np.array([1.0, 2.0, 3.0])
    cg = cgm.center_of_mass([[0, 1, 2]], m, dim=1)
    np.testing.assert_allclose(cg.matrix[0], m / m.sum())


def test_end_to_end_vector_matrix():
    cg = cgm.end_to_end_vector(0, 2)
    I = np.eye(3)
    np.testing.assert_array_equal(cg.matrix, np.hstack([-I, 0 * I, I]))


def test_pairwise_block_structure():
    cg = cgm.pairwise_average([(0, 1), (2, 3)], dim=1)
    np.testing.assert_array_equal(cg.matrix, [[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])


def test_block_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        cgm.block_linear_map([[0.5, 0.6]], dim=1)


def test_shared_particle_warns():
    with pytest.warns(UserWarning):
        cgm.block_linear_map([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]], dim=1)


def test_e2e_distance_positive(rng):
    z = cgm.apply(cgm.end_to_end_distance(0, 2), random_molecule(rng, 200))
    assert np.all(z > 0)
