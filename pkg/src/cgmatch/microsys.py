"""Microscopic particle systems and a catalog of small test systems.

All energies are in reduced units with ``k_B = 1``; temperature enters only
through the inverse temperature ``beta``.  Potentials and forces are
vectorized: they accept configurations of shape ``(..., n_dof)``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _geometry as geo
from .exceptions import DimensionError

FD_FORCE_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class MicroSystem:
    """A classical particle system with potential ``U(x)``.

    Parameters
    ----------
    name : str
        Catalog name, used in configs and reports.
    n_particles, dim : int
        Number of particles and spatial dimension per particle (1 or 3).
    masses : ndarray
        One positive mass per particle.
    potential : callable
        Batched ``U(x)``, mapping ``(..., n_dof)`` to ``(...)``.
    force_fn : callable, optional
        Batched analytic force ``-grad U``.  When absent, central finite
        differences are used.
    x0 : ndarray
        Reference configuration used to start samplers.
    box : tuple of ndarray, optional
        ``(lower, upper)`` per coordinate for hard-wall confinement.
    params : dict
        Constructor parameters, recorded for provenance.
    """

    name: str
    n_particles: int
    dim: int
    masses: np.ndarray
    potential: Callable[[np.ndarray], np.ndarray]
    force_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    x0: Optional[np.ndarray] = None
    box: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError(f"dim must be 1 or 3, got {self.dim}")
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        masses = np.asarray(self.masses, dtype=float)
        if masses.shape != (self.n_particles,) or np.any(masses <= 0):
            raise ValueError("masses must be one positive value per particle")
        object.__setattr__(self, "masses", masses)
        x0 = np.zeros(self.n_dof) if self.x0 is None else np.asarray(self.x0, float)
        object.__setattr__(self, "x0", x0)

    @property
    def n_dof(self):
        return self.n_particles * self.dim

    @property
    def has_analytic_force(self):
        return self.force_fn is not None

    def in_box(self, x):
        """Boolean mask of configurations inside the confining box."""
        x = np.asarray(x, dtype=float)
        if self.box is None:
            return np.ones(x.shape[:-1], dtype=bool)
        lo, hi = self.box
        return np.all((x >= lo) & (x <= hi), axis=-1)


def _check(system, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != system.n_dof:
        raise DimensionError(
            f"{system.name}: expected {system.n_dof} coordinates, got shape {x.shape}"
        )
    return x


def potential_energy(system, x):
    """Potential energy ``U(x)`` of one configuration or a batch."""
    x = _check(system, x)
    u = system.potential(x)
    return float(u) if np.ndim(u) == 0 else u


def fd_force(system, x, step=FD_FORCE_STEP):
    """Central-difference force, step ``step * max(1, |x_i|)`` per coordinate."""
    x = _check(system, x)
    h = step * np.maximum(1.0, np.abs(x))
    out = np.empty_like(x)
    for i in range(system.n_dof):
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += h[..., i]
        xm[..., i] -= h[..., i]
        out[..., i] = -(system.potential(xp) - system.potential(xm)) / (2 * h[..., i])
    return out


def force(system, x):
    """Force ``-grad U``; analytic when available, else finite differences."""
    x = _check(system, x)
    if system.force_fn is None:
        return fd_force(system, x)
    return system.force_fn(x)


def check_force_consistency(system, x, step=FD_FORCE_STEP):
    """Max absolute deviation between ``force`` and its FD estimate."""
    x = _check(system, x)
    return float(np.max(np.abs(force(system, x) - fd_force(system, x, step))))


# ---------------------------------------------------------------------------
# catalog


def _positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def harmonic_dimer(k=1.0):
    """Two independent 1-d particles tethered to the origin.

    ``U = k/2 (x1^2 + x2^2)``.  Under the centre-of-mass map the mean force
    is ``-2 k z``.
    """
    _positive(k=k)

    def potential(x):
        return 0.5 * k * np.sum(x**2, axis=-1)

    def force_fn(x):
        return -k * np.asarray(x, dtype=float)

    return MicroSystem("harmonic_dimer", 2, 1, np.ones(2), potential, force_fn,
                       params={"k": k})


def harmonic_chain(n, k=1.0, masses=None):
    """1-d chain of ``n`` particles, the first one anchored to the origin.

    ``U = k/2 [x_1^2 + sum_i (x_{i+1} - x_i)^2]``; the anchor keeps the
    Gibbs measure normalizable.
    """
    _positive(n=n, k=k)
    n = int(n)
    masses = np.ones(n) if masses is None else np.asarray(masses, dtype=float)

    def potential(x):
        d = np.diff(x, axis=-1, prepend=0.0)
        return 0.5 * k * np.sum(d**2, axis=-1)

    def force_fn(x):
        d = np.diff(x, axis=-1, prepend=0.0)
        f = -k * d
        f[..., :-1] += k * d[..., 1:]
        return f

    return MicroSystem("harmonic_chain", n, 1, masses, potential, force_fn,
                       x0=np.arange(n, dtype=float) * 0.0,
                       params={"n": n, "k": k, "masses": masses.tolist()})


def three_atom_molecule(k_b=1.0, r0=1.0, k_theta=1.0, theta0=np.pi / 2):
    """Three atoms in 3-d with two harmonic bonds and a harmonic angle.

    ``U = k_b/2 [(r12 - r0)^2 + (r32 - r0)^2] + k_theta/2 (theta - theta0)^2``
    with the bending angle at the middle atom.
    """
    _positive(k_b=k_b, r0=r0, k_theta=k_theta)
    if not 0 < theta0 < np.pi:
        raise ValueError("theta0 must lie in (0, pi)")

    def potential(x):
        p = geo.as_particles(x, 3)
        x1, x2, x3 = p[..., 0, :], p[..., 1, :], p[..., 2, :]
        r12 = geo.distance(x1, x2)
        r32 = geo.distance(x3, x2)
        th = geo.angle(x1, x2, x3)
        return 0.5 * k_b * ((r12 - r0) ** 2 + (r32 - r0) ** 2) + 0.5 * k_theta * (th - theta0) ** 2

    def force_fn(x):
        p = geo.as_particles(x, 3)
        x1, x2, x3 = p[..., 0, :], p[..., 1, :], p[..., 2, :]
        r12, g12 = geo.distance_grad(x1, x2)
        r32, g32 = geo.distance_grad(x3, x2)
        th, t1, t2, t3 = geo.angle_grad(x1, x2, x3)
        a = (k_b * (r12 - r0))[..., None]
        b = (k_b * (r32 - r0))[..., None]
        c = (k_theta * (th - theta0))[..., None]
        f = np.empty_like(p)
        f[..., 0, :] = -(a * g12 + c * t1)
        f[..., 2, :] = -(b * g32 + c * t3)
        f[..., 1, :] = -(-a * g12 - b * g32 + c * t2)
        return f.reshape(np.shape(x))

    x0 = np.array([r0, 0, 0, 0, 0, 0, r0 * np.cos(theta0), r0 * np.sin(theta0), 0])
    return MicroSystem("three_atom_molecule", 3, 3, np.ones(3), potential, force_fn, x0=x0,
                       params={"k_b": k_b, "r0": r0, "k_theta": k_theta, "theta0": theta0})


def harmonic_pair(k=1.0, r0=1.0):
    """Two 3-d particles joined by a spring ``k/2 (r - r0)^2``."""
    _positive(k=k, r0=r0)

    def potential(x):
        p = geo.as_particles(x, 3)
        r = geo.distance(p[..., 0, :], p[..., 1, :])
        return 0.5 * k * (r - r0) ** 2

    def force_fn(x):
        p = geo.as_particles(x, 3)
        r, g = geo.distance_grad(p[..., 0, :], p[..., 1, :])
        f1 = -(k * (r - r0))[..., None] * g
        return np.concatenate([f1, -f1], axis=-1)

    return MicroSystem("harmonic_pair", 2, 3, np.ones(2), potential, force_fn,
                       x0=np.array([0, 0, 0, r0, 0, 0], dtype=float),
                       params={"k": k, "r0": r0})


def ideal_gas(n, box, dim=3):
    """``n`` non-interacting particles confined to a cube of side ``box``."""
    _positive(n=n, box=box)
    n = int(n)

    def potential(x):
        return np.zeros(np.shape(x)[:-1])

    def force_fn(x):
        return np.zeros(np.shape(x))

    # deterministic interior start on a jittered lattice
    side = int(np.ceil(n ** (1.0 / dim)))
    grid = np.stack(np.meshgrid(*[np.arange(side)] * dim, indexing="ij"), -1).reshape(-1, dim)
    x0 = ((grid[:n] + 0.5) / side * box).ravel()
    lo = np.zeros(n * dim)
    hi = np.full(n * dim, float(box))
    return MicroSystem("ideal_gas", n, dim, np.ones(n), potential, force_fn, x0=x0,
                       box=(lo, hi), params={"n": n, "box": box, "dim": dim})


def toy_catalog():
    """Named constructors for the built-in systems."""
    return {
        "harmonic_dimer": harmonic_dimer,
        "harmonic_chain": harmonic_chain,
        "three_atom_molecule": three_atom_molecule,
        "harmonic_pair": harmonic_pair,
        "ideal_gas": ideal_gas,
    }
