"""Batched internal-coordinate helpers: distances and bending angles."""

import numpy as np

# below this, a bond vector or sin(theta) counts as degenerate
DEGENERACY_EPS = 1e-10


def as_particles(x, dim):
    """View ``(..., D)`` coordinates as ``(..., N, dim)``."""
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape[:-1] + (x.shape[-1] // dim, dim))


def distance(xi, xj):
    return np.linalg.norm(xi - xj, axis=-1)


def distance_grad(xi, xj):
    """Return ``(r, dr/dxi)``; ``dr/dxj`` is the negative."""
    d = xi - xj
    r = np.linalg.norm(d, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = d / r[..., None]
    return r, g


def angle(x1, x2, x3):
    """Angle at ``x2`` between bonds to ``x1`` and ``x3``, in [0, pi]."""
    u = x1 - x2
    v = x3 - x2
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.arctan2(cross, dot)


def angle_degenerate(x1, x2, x3):
    u = x1 - x2
    v = x3 - x2
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    small_bond = (nu < DEGENERACY_EPS) | (nv < DEGENERACY_EPS)
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_t = cross / (nu * nv)
    return small_bond | ~(sin_t > DEGENERACY_EPS)


def angle_grad(x1, x2, x3):
    """Return ``theta`` and its gradients with respect to the three atoms."""
    u = x1 - x2
    v = x3 - x2
    nu = np.linalg.norm(u, axis=-1)[..., None]
    nv = np.linalg.norm(v, axis=-1)[..., None]
    cross = np.linalg.norm(np.cross(u, v), axis=-1)[..., None]
    dot = np.sum(u * v, axis=-1)[..., None]
    theta = np.arctan2(cross, dot)
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_t = cross / (nu * nv)
        cos_t = dot / (nu * nv)
        g1 = (cos_t * u / nu - v / nv) / (nu * sin_t)
        g3 = (cos_t * v / nv - u / nu) / (nv * sin_t)
    g2 = -(g1 + g3)
    return theta[..., 0], g1, g2, g3
