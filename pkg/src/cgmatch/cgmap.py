"""Coarse-graining maps, their Jacobians and the curvature term.

A map sends microscopic coordinates ``x`` in R^D to coarse coordinates
``z`` in R^d.  Linear maps carry their coefficient matrix ``T``; for
particle maps ``T`` has blocks ``zeta_ij * I_dim``.  All evaluation
functions accept one configuration ``(D,)`` or a batch ``(n, D)``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _geometry as geo
from .exceptions import DegenerateMapError, DimensionError, SingularMatrixError

FD_JACOBIAN_STEP = 1e-6
DIVERGENCE_STEP = 1e-4
RANK_TOL = 1e-10
# G_W guard shared with meanforce
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class CGMap:
    """A map ``x -> z``.

    ``func`` and ``jac`` are batched over leading axes.  ``degenerate``
    returns a boolean mask of configurations where the map is singular.
    """

    name: str
    d_in: int
    d_out: int
    func: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    matrix: Optional[np.ndarray] = None
    degenerate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d_out > self.d_in:
            raise ValueError("a coarse-graining map cannot increase dimension")

    @property
    def is_linear(self):
        return self.matrix is not None

    def degenerate_mask(self, x):
        x = np.asarray(x, dtype=float)
        if self.degenerate is None:
            return np.zeros(x.shape[:-1], dtype=bool)
        return np.asarray(self.degenerate(x), dtype=bool)


def _check(cgmap, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != cgmap.d_in:
        raise DimensionError(f"{cgmap.name}: expected {cgmap.d_in} coordinates, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("configuration contains non-finite entries")
    bad = cgmap.degenerate_mask(x)
    if np.any(bad):
        raise DegenerateMapError(f"{cgmap.name} is degenerate at {int(np.sum(bad))} configuration(s)")
    return x


def apply(cgmap, x):
    """Coarse coordinates ``z = Pi(x)`` with shape ``(..., d)``."""
    x = _check(cgmap, x)
    return cgmap.func(x)


def fd_jacobian(cgmap, x, step=FD_JACOBIAN_STEP):
    """Column-by-column central-difference Jacobian, shape ``(..., d, D)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(cgmap.d_in):
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += step
        xm[..., j] -= step
        cols.append((cgmap.func(xp) - cgmap.func(xm)) / (2 * step))
    return np.stack(cols, axis=-1)


def jacobian(cgmap, x, step=FD_JACOBIAN_STEP):
    """``DPi(x)`` with entries ``d Pi_i / d x_j``; analytic when available."""
    x = _check(cgmap, x)
    if cgmap.matrix is not None:
        return np.broadcast_to(cgmap.matrix, x.shape[:-1] + cgmap.matrix.shape).copy()
    if cgmap.jac is not None:
        return cgmap.jac(x)
    return fd_jacobian(cgmap, x, step)


def gram(cgmap, x):
    """Gram matrix ``J = DPi DPi^T`` of shape ``(..., d, d)``."""
    dpi = jacobian(cgmap, x)
    return dpi @ np.swapaxes(dpi, -1, -2)


def rank_check(cgmap, x, tol=RANK_TOL):
    """True if ``DPi(x)`` has full row rank (relative singular value test).

    Degenerate geometries, where the Jacobian is undefined, give False.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    try:
        dpi = jacobian(cgmap, x)
    except DegenerateMapError:
        return False
    if not np.all(np.isfinite(dpi)):
        return False
    s = np.linalg.svd(dpi, compute_uv=False)
    return bool(np.all(s[..., -1] > tol * s[..., 0]))


def _weighted_inverse(cgmap, wspec, x):
    """``M(x) = (W DPi^T)^{-1} W`` for a batch of configurations."""
    dpi = jacobian(cgmap, x)
    w = wspec.weights(cgmap, x, dpi)
    g = w @ np.swapaxes(dpi, -1, -2)
    cond = np.linalg.cond(g)
    if not np.all(cond < MAX_CONDITION):
        raise SingularMatrixError(
            f"G_W = W DPi^T is singular (condition {np.max(cond):.3g}) for map {cgmap.name}"
        )
    return np.linalg.solve(g, w)


def divergence_term(cgmap, wspec, x, step=DIVERGENCE_STEP):
    """Row-wise divergence ``sum_j d/dx_j M_ij(x)`` of ``M = G_W^{-1} W``.

    ``wspec`` is any object with a ``weights(cgmap, x, dpi)`` method (see
    :class:`cgmatch.meanforce.WSpec`).  Central differences with the given
    step; raises if the map degenerates or ``G_W`` is singular anywhere on
    the stencil.
    """
    x = _check(cgmap, x)
    D = cgmap.d_in
    # stencil: (..., 2D, D), +h then -h for each coordinate
    eye = np.eye(D) * step
    stencil = np.concatenate([x[..., None, :] + eye, x[..., None, :] - eye], axis=-2)
    if np.any(cgmap.degenerate_mask(stencil)):
        raise DegenerateMapError(f"{cgmap.name} degenerates within the divergence stencil")
    m = _weighted_inverse(cgmap, wspec, stencil)
    idx = np.arange(D)
    plus = m[..., idx, :, idx]  # (D, ..., d): M_ij at x + h e_j
    minus = m[..., D + idx, :, idx]
    div = np.sum(plus - minus, axis=0) / (2 * step)
    return div


# ---------------------------------------------------------------------------
# constructors


def linear_map(T, name="linear"):
    """Linear map ``z = T x`` for a ``(d, D)`` matrix."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    T.setflags(write=False)

    def func(x):
        return np.asarray(x, dtype=float) @ T.T

    return CGMap(name, T.shape[1], T.shape[0], func, matrix=T, params={"T": T.tolist()})


def block_linear_map(zeta, dim=3, name="block_linear", check_sums=True):
    """Particle map ``z_i = sum_j zeta_ij x_j`` with ``T_ij = zeta_ij I_dim``."""
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    if check_sums and not np.allclose(zeta.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError(f"weights of each coarse particle must sum to 1, got {zeta.sum(axis=1)}")
    shared = np.count_nonzero(zeta, axis=0) > 1
    if np.any(shared):
        warnings.warn(
            f"particles {np.flatnonzero(shared).tolist()} contribute to more than one coarse particle",
            stacklevel=2,
        )
    cg = linear_map(np.kron(zeta, np.eye(dim)), name=name)
    cg.params.update({"zeta": zeta.tolist(), "dim": dim})
    return cg


def center_of_mass(groups, masses, dim=3):
    """Mass-weighted centres of ``groups`` (lists of particle indices)."""
    masses = np.asarray(masses, dtype=float)
    if np.any(masses <= 0):
        raise ValueError("masses must be positive")
    zeta = np.zeros((len(groups), len(masses)))
    for i, g in enumerate(groups):
        g = list(g)
        if not g:
            raise ValueError("empty group")
        zeta[i, g] = masses[g] / masses[g].sum()
    cg = block_linear_map(zeta, dim, name="center_of_mass")
    cg.params.update({"groups": [list(map(int, g)) for g in groups], "masses": masses.tolist()})
    return cg


def pairwise_average(pairs, weights=None, n_particles=None, dim=3):
    """One coarse particle per pair ``(a, b)``: ``w_a x_a + w_b x_b``.

    ``weights`` holds one ``(w_a, w_b)`` per pair, defaulting to equal
    weights; each must sum to 1.
    """
    pairs = [tuple(map(int, p)) for p in pairs]
    if n_particles is None:
        n_particles = max(max(p) for p in pairs) + 1
    if weights is None:
        weights = [(0.5, 0.5)] * len(pairs)
    zeta = np.zeros((len(pairs), n_particles))
    for i, ((a, b), (wa, wb)) in enumerate(zip(pairs, weights)):
        zeta[i, a] += wa
        zeta[i, b] += wb
    cg = block_linear_map(zeta, dim, name="pairwise_average")
    cg.params.update({"pairs": [list(p) for p in pairs], "weights": np.asarray(weights).tolist()})
    return cg


def end_to_end_vector(i, j, n_particles=3):
    """Linear map ``x_j - x_i`` for 3-d particles."""
    zeta = np.zeros((1, n_particles))
    zeta[0, i] = -1.0
    zeta[0, j] = 1.0
    cg = block_linear_map(zeta, 3, name="end_to_end_vector", check_sums=False)
    cg.params.update({"i": i, "j": j, "n_particles": n_particles})
    return cg


def end_to_end_distance(i, j, n_particles=3):
    """Distance ``|x_i - x_j|`` between two 3-d particles."""
    D = 3 * n_particles

    def pts(x):
        p = geo.as_particles(x, 3)
        return p[..., i, :], p[..., j, :]

    def func(x):
        a, b = pts(x)
        return geo.distance(a, b)[..., None]

    def jac(x):
        a, b = pts(x)
        _, g = geo.distance_grad(a, b)
        out = np.zeros(np.shape(x)[:-1] + (1, D))
        out[..., 0, 3 * i:3 * i + 3] = g
        out[..., 0, 3 * j:3 * j + 3] = -g
        return out

    def degenerate(x):
        a, b = pts(x)
        return geo.distance(a, b) < geo.DEGENERACY_EPS

    return CGMap("end_to_end_distance", D, 1, func, jac, degenerate=degenerate,
                 params={"i": i, "j": j, "n_particles": n_particles})


def bending_angle(i, j, k, n_particles=3):
    """Angle at particle ``j`` between bonds ``j-i`` and ``j-k``, in (0, pi)."""
    D = 3 * n_particles

    def pts(x):
        p = geo.as_particles(x, 3)
        return p[..., i, :], p[..., j, :], p[..., k, :]

    def func(x):
        return geo.angle(*pts(x))[..., None]

    def jac(x):
        _, g1, g2, g3 = geo.angle_grad(*pts(x))
        out = np.zeros(np.shape(x)[:-1] + (1, D))
        for idx, g in ((i, g1), (j, g2), (k, g3)):
            out[..., 0, 3 * idx:3 * idx + 3] += g
        return out

    def degenerate(x):
        return geo.angle_degenerate(*pts(x))

    return CGMap("bending_angle", D, 1, func, jac, degenerate=degenerate,
                 params={"i": i, "j": j, "k": k, "n_particles": n_particles})


def identity_map(d):
    return linear_map(np.eye(d), name="identity")


def map_catalog():
    return {
        "linear": linear_map,
        "block_linear": block_linear_map,
        "center_of_mass": center_of_mass,
        "pairwise_average": pairwise_average,
        "end_to_end_vector": end_to_end_vector,
        "end_to_end_distance": end_to_end_distance,
        "bending_angle": bending_angle,
        "identity": identity_map,
    }
