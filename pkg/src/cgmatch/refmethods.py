"""Reference estimators and competing coarse-graining methods.

Histogram and quadrature potentials of mean force, finite-difference mean
forces, relative-entropy fitting of parametrized coarse potentials, the
radial distribution function with direct inverse Boltzmann, and metrics
comparing fitted potentials up to additive constants.
"""

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import sampler
from ._geometry import as_particles
from .exceptions import OptimizationError, QuadratureError

MIN_RUN = 3
# sufficient-decrease constant; 0.5 caps accepted steps at the Newton step
# on quadratic objectives, which avoids slow zig-zagging
ARMIJO = 0.5


def _trap_log_weights(z):
    """Log trapezoid weights of a 1-d grid."""
    dz = np.diff(z)
    w = np.zeros(len(z))
    w[:-1] += dz / 2
    w[1:] += dz / 2
    return np.log(w)


# ---------------------------------------------------------------------------
# potentials of mean force


@dataclass(eq=False)
class PMFTable:
    """Potential of mean force on a 1-d grid, shifted so ``min A = 0``.

    ``A`` is NaN where the estimate is absent (empty bins).  ``edges`` is
    set for histogram estimates.
    """

    z: np.ndarray
    A: np.ndarray
    counts: np.ndarray
    stderr: np.ndarray
    method: str
    beta: float
    edges: Optional[np.ndarray] = None

    @classmethod
    def from_function(cls, z, A_fn, beta, method="analytic"):
        z = np.asarray(z, dtype=float)
        A = np.asarray(A_fn(z), dtype=float)
        return cls(z, A - np.nanmin(A), np.zeros(len(z)), np.zeros(len(z)), method, float(beta))

    @property
    def present(self):
        return np.isfinite(self.A)

    def density(self):
        """Normalized ``mu_bar`` on the grid (trapezoid rule)."""
        logp = -self.beta * self.A
        ok = self.present
        lz = logsumexp(logp[ok] + _trap_log_weights(self.z[ok]))
        return np.where(ok, np.exp(logp - lz), 0.0)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", "value", "count", "stderr"])
        for row in zip(self.z, self.A, self.counts, self.stderr):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def histogram_pmf(z, bins=sampler.DEFAULT_BINS, beta=1.0, blocks=None):
    """``A = -(1/beta) log(count / (n width))`` per bin, shifted to min 0.

    Samples outside the bin range are dropped (the density keeps the total
    ``n`` in its denominator).  Standard errors propagate the binomial (or,
    with ``blocks``, batch-means) error of the bin probability through the
    logarithm.
    """
    z = np.ravel(np.asarray(z, dtype=float))
    n = len(z)
    edges = sampler.default_edges(z, bins) if np.ndim(bins) == 0 else np.asarray(bins, float)
    flat, outside = sampler.bin_index(z, [edges], clip=False)
    nb = len(edges) - 1
    counts = np.bincount(flat[~outside], minlength=nb).astype(float)
    if not counts.any():
        raise ValueError("histogram is empty on the given range")
    q = counts / n
    width = np.diff(edges)
    if blocks is None:
        se_q = np.sqrt(q * (1 - q) / n)
    else:
        labels, inv = np.unique(np.asarray(blocks), return_inverse=True)
        C = len(labels)
        n_c = np.bincount(inv, minlength=C)
        cell = (inv * nb + np.where(outside, 0, flat))[~outside]
        cnt_c = np.bincount(cell, minlength=C * nb).reshape(C, nb)
        se_q = np.sqrt(C / (C - 1) * np.sum((cnt_c - q * n_c[:, None]) ** 2, axis=0)) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        A = -np.log(q / width) / beta
        se = se_q / q / beta
    A[counts == 0] = np.nan
    se[counts == 0] = np.nan
    return PMFTable(0.5 * (edges[1:] + edges[:-1]), A - np.nanmin(A), counts, se,
                    "histogram", float(beta), edges)


def quadrature_pmf(system, beta, cgmap, z_grid, grid, tol=1e-6):
    """PMF of a linear scalar map from fibre quadrature (exact oracle)."""
    z_grid = np.asarray(z_grid, dtype=float)
    _, _, logn = sampler.fiber_integrals(system, beta, cgmap, lambda x: np.ones(len(x)),
                                         z_grid, grid, tol)
    A = -logn / beta
    return PMFTable(z_grid, A - A.min(), np.zeros(len(z_grid)), np.zeros(len(z_grid)),
                    "quadrature", float(beta))


@dataclass(eq=False)
class MeanForceTable:
    z: np.ndarray
    F: np.ndarray
    stderr: np.ndarray


def mean_force_reference(pmf):
    """``F = -dA/dz`` by finite differences on each run of present bins.

    Central differences inside a run and one-sided ones at its ends; runs
    shorter than 2 bins give NaN.  Standard errors treat neighbouring bins
    as independent.
    """
    ok = pmf.present
    if np.sum(ok) < MIN_RUN:
        raise ValueError("mean_force_reference needs at least 3 populated bins")
    F = np.full(len(pmf.z), np.nan)
    se = np.full(len(pmf.z), np.nan)
    # split into maximal runs of consecutive present bins
    idx = np.flatnonzero(ok)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    for r in runs:
        if len(r) < 2:
            continue
        z, A, s = pmf.z[r], pmf.A[r], pmf.stderr[r]
        F[r] = -np.gradient(A, z)
        e = np.empty(len(r))
        e[1:-1] = np.sqrt(s[2:] ** 2 + s[:-2] ** 2) / (z[2:] - z[:-2])
        e[0] = np.hypot(s[1], s[0]) / (z[1] - z[0])
        e[-1] = np.hypot(s[-1], s[-2]) / (z[-1] - z[-2])
        se[r] = e
    return MeanForceTable(pmf.z.copy(), F, se)


# ---------------------------------------------------------------------------
# relative entropy


@dataclass(eq=False)
class CGPotentialFamily:
    """Parametrized coarse potential ``U(z; theta)``.

    ``grad`` returns ``dU/dtheta`` with shape ``(n, p)``; when absent a
    central finite difference in ``theta`` is used.
    """

    name: str
    n_params: int
    potential: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def value(self, z, theta):
        return np.asarray(self.potential(np.ravel(z), np.atleast_1d(theta)), dtype=float)

    def theta_grad(self, z, theta, step=1e-6):
        z = np.ravel(np.asarray(z, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.grad is not None:
            return np.asarray(self.grad(z, theta), dtype=float).reshape(len(z), self.n_params)
        cols = []
        for i in range(self.n_params):
            e = np.zeros_like(theta)
            e[i] = step
            cols.append((self.potential(z, theta + e) - self.potential(z, theta - e)) / (2 * step))
        return np.stack(cols, -1)

    @classmethod
    def quadratic(cls):
        """``U = theta z^2 / 2``."""
        return cls("quadratic", 1, lambda z, t: t[0] * z**2 / 2, lambda z, t: (z**2 / 2)[:, None])

    @classmethod
    def linear_tilt(cls):
        """``U = theta z``."""
        return cls("linear_tilt", 1, lambda z, t: t[0] * z, lambda z, t: z[:, None])

    @classmethod
    def from_basis(cls, basis):
        """``U = sum_k theta_k psi_k(z)`` for a force-matching basis."""
        return cls(f"basis:{basis.kind}", basis.n_coeffs,
                   lambda z, t: basis.potential_values(z) @ t,
                   lambda z, t: basis.potential_values(z))


def _support_grid(support, n_grid):
    lo, hi = support
    if not hi > lo:
        raise ValueError("support must be an interval lo < hi")
    if n_grid < 5 or n_grid % 2 == 0:
        raise ValueError("n_grid must be odd and >= 5")
    return np.linspace(lo, hi, n_grid)


def _model_log_weights(family, theta, beta, grid):
    """Log of normalized quadrature weights of ``exp(-beta U)`` and ``log Z``."""
    lw = -beta * family.value(grid, theta)
    if not np.all(np.isfinite(lw)):
        raise QuadratureError("non-finite coarse potential on the support grid")
    lz = logsumexp(lw + _trap_log_weights(grid))
    # same sum on every other point to gauge the quadrature error
    lz_c = logsumexp(lw[::2] + _trap_log_weights(grid[::2]))
    if abs(lz - lz_c) > 1e-6 * max(1.0, abs(lz)):
        raise QuadratureError(f"log Z quadrature unresolved (difference {abs(lz - lz_c):.2e}); refine n_grid")
    return lw + _trap_log_weights(grid) - lz, lz


def _check_support(z, support):
    if np.min(z) < support[0] or np.max(z) > support[1]:
        raise ValueError(f"support {tuple(support)} does not cover the sampled z range")


def relative_entropy_objective(z, family, theta, beta, support, n_grid=4001):
    """``J = beta mean U(z_s; theta) + log Z(theta)``.

    ``J`` differs from the relative entropy of the coarse model to the
    sampled marginal by a theta-independent constant.
    """
    z = np.ravel(np.asarray(z, dtype=float))
    _check_support(z, support)
    grid = _support_grid(support, n_grid)
    _, lz = _model_log_weights(family, theta, beta, grid)
    return float(beta * np.mean(family.value(z, theta)) + lz)


def relative_entropy_gradient(z, family, theta, beta, support, n_grid=4001):
    """``beta (mean_data dU/dtheta - E_model dU/dtheta)``."""
    z = np.ravel(np.asarray(z, dtype=float))
    grid = _support_grid(support, n_grid)
    lw, _ = _model_log_weights(family, theta, beta, grid)
    model = np.exp(lw) @ family.theta_grad(grid, theta)
    return beta * (family.theta_grad(z, theta).mean(axis=0) - model)


@dataclass(eq=False)
class REReport:
    theta_star: np.ndarray
    objective_trace: list
    theta_trace: list
    n_iter: int
    converged: bool
    D_estimate: float
    expansion: Optional[dict] = None

    def to_dict(self):
        return {
            "theta_star": np.asarray(self.theta_star).tolist(),
            "objective_trace": list(map(float, self.objective_trace)),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "D_estimate": self.D_estimate,
            "expansion": self.expansion,
        }


def minimize_relative_entropy(z, family, theta0, beta, support, tol=1e-8, max_iter=1000,
                              step0=1.0, n_grid=4001):
    """Gradient descent with Armijo backtracking on the relative entropy.

    The step doubles after every accepted move and halves on rejection.
    Stops when the accepted parameter change falls below ``tol``.  Raises
    :class:`OptimizationError` if no descent step is found while the
    gradient is not negligible.
    """
    z = np.ravel(np.asarray(z, dtype=float))
    _check_support(z, support)
    theta = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    J = relative_entropy_objective(z, family, theta, beta, support, n_grid)
    trace, thetas = [J], [theta.copy()]
    step = step0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = relative_entropy_gradient(z, family, theta, beta, support, n_grid)
        gg = float(g @ g)
        if gg == 0.0:
            converged = True
            break
        while True:
            trial = theta - step * g
            try:
                Jt = relative_entropy_objective(z, family, trial, beta, support, n_grid)
            except QuadratureError:
                Jt = np.inf
            if Jt <= J - ARMIJO * step * gg:
                break
            step /= 2
            if step < 1e-14:
                if np.sqrt(gg) < 1e-6:
                    converged = True
                    break
                raise OptimizationError(f"no descent step at theta={theta.tolist()}, |grad|={np.sqrt(gg):.3g}")
        if converged:
            break
        dtheta = np.max(np.abs(trial - theta))
        theta, J = trial, Jt
        trace.append(J)
        thetas.append(theta.copy())
        step *= 2
        if dtheta <= tol:
            converged = True
            break
    return REReport(theta, trace, thetas, it, converged, float(J))


@dataclass
class ExpansionResult:
    """Exact relative entropy against its second-order approximations."""

    D: float
    half_beta2_variance: float
    paper_form_beta2_meansquare: float
    sup_centered: float

    @property
    def remainder(self):
        return self.D - self.half_beta2_variance

    def to_dict(self):
        return dict(self.__dict__) | {"remainder": self.remainder}


def expansion_check(pmf_exact, family, theta, beta, max_sup=None):
    """Compare ``D(mu_bar || mu_theta)`` with ``(beta^2/2) Var(dU)``.

    ``dU = U(z; theta) - A(z)`` on the grid of ``pmf_exact``.  ``D`` is
    evaluated exactly on the grid as ``beta E[dU] + log E[exp(-beta dU)]``
    and the uncentered ``beta^2 E[dU^2]`` is returned as well.  The
    perturbation must satisfy ``sup |dU - E dU| <= 0.5 / beta``; only the
    centered part matters since constants do not change ``mu_theta``.
    """
    max_sup = 0.5 / beta if max_sup is None else max_sup
    ok = pmf_exact.present
    z = pmf_exact.z[ok]
    A = pmf_exact.A[ok]
    lw = -beta * A + _trap_log_weights(z)
    lw -= logsumexp(lw)
    w = np.exp(lw)
    dU = family.value(z, theta) - A
    mean = float(w @ dU)
    sup = float(np.max(np.abs(dU - mean)))
    if sup > max_sup:
        raise ValueError(f"perturbation too large: centered sup norm {sup:.3g} > {max_sup:.3g}")
    D = beta * mean + float(logsumexp(lw - beta * dU))
    var = float(w @ (dU - mean) ** 2)
    return ExpansionResult(D, 0.5 * beta**2 * var, beta**2 * float(w @ dU**2), sup)


# Reconstruction term of the relative-entropy error for a microscopic
# reference gamma(x): zero when gamma is the Gibbs measure itself, a
# theta-independent constant for a uniform gamma.  Not computed otherwise.
RECONSTRUCTION_CASES = {"gibbs": "zero", "uniform": "theta-independent constant"}


# ---------------------------------------------------------------------------
# structure


def _shell_integral_box(r, sides):
    """``int_0^r 4 pi s^2 gamma(s) ds`` for the isotropized box covariogram."""
    a, b, c = sides
    p1, p2, p3 = a * b * c, a * b + b * c + c * a, a + b + c
    return 4 * np.pi * (p1 * r**3 / 3 - p2 * r**4 / 8 + 2 * p3 * r**5 / (15 * np.pi)
                        - r**6 / (24 * np.pi))


@dataclass(eq=False)
class RDFTable:
    edges: np.ndarray
    g: np.ndarray
    counts: np.ndarray
    stderr: np.ndarray
    zero: np.ndarray

    @property
    def r(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def radial_distribution(positions, r_bins, density=None, box=None, blocks=None):
    """Radial distribution function of point particles.

    Parameters
    ----------
    positions : array_like, shape (n_samples, 3 M)
        Coarse particle coordinates, one configuration per row.
    r_bins : array_like
        Shell edges.
    density : float, optional
        Number density for the bulk ideal-gas normalization
        ``(M/2) density 4 pi r^2 dr`` per configuration.
    box : float or sequence of 3 floats, optional
        Side lengths of a hard-wall (non-periodic) box.  The normalization
        then uses the exact pair-distance law of two uniform points in the
        box, valid up to the shortest side, which makes ``g = 1`` for an
        ideal gas at every ``r``.
    blocks : array_like, optional
        Block label per configuration for batch-means standard errors.
    """
    X = np.atleast_2d(np.asarray(positions, dtype=float))
    p = as_particles(X, 3)
    M = p.shape[1]
    if M < 2:
        raise ValueError("radial_distribution needs at least 2 particles")
    edges = np.asarray(r_bins, dtype=float)
    iu, ju = np.triu_indices(M, 1)
    r = np.linalg.norm(p[:, iu] - p[:, ju], axis=-1)
    nb = len(edges) - 1
    n_s = len(X)
    j = np.searchsorted(edges, r, side="right") - 1
    j[r == edges[-1]] = nb - 1
    inside = (j >= 0) & (j < nb)
    rows = np.broadcast_to(np.arange(n_s)[:, None], r.shape)
    per = np.bincount((rows * nb + j)[inside], minlength=n_s * nb).reshape(n_s, nb).astype(float)
    n_pairs = M * (M - 1) / 2
    if box is not None:
        sides = np.broadcast_to(np.asarray(box, dtype=float), (3,))
        if edges[-1] > sides.min():
            raise ValueError("box normalization is valid only up to the shortest box side")
        V = np.prod(sides)
        ideal = n_pairs * np.diff(_shell_integral_box(edges, sides)) / V**2
    elif density is not None:
        ideal = M / 2 * density * 4 * np.pi / 3 * np.diff(edges**3)
    else:
        raise ValueError("give either density or box")
    ratio = per / ideal
    g = ratio.mean(axis=0)
    se = np.array([_block_se(ratio[:, k], blocks) for k in range(nb)])
    counts = per.sum(axis=0)
    return RDFTable(edges, g, counts, se, counts == 0)


def _block_se(v, blocks):
    if blocks is None:
        return float(v.std(ddof=1) / np.sqrt(len(v)))
    labels, inv = np.unique(np.asarray(blocks), return_inverse=True)
    means = np.bincount(inv, v) / np.bincount(inv)
    return float(means.std(ddof=1) / np.sqrt(len(labels)))


@dataclass(eq=False)
class PairPotentialTable:
    r: np.ndarray
    v: np.ndarray
    stderr: np.ndarray


def inverse_boltzmann(rdf, beta):
    """``v(r) = -(1/beta) log g(r)``, NaN where ``g = 0``."""
    g = rdf.g
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(g > 0, -np.log(g) / beta, np.nan)
        se = np.where(g > 0, rdf.stderr / g / beta, np.nan)
    return PairPotentialTable(rdf.r, v, se)


# ---------------------------------------------------------------------------
# comparison


def _aligned(u, ref, w):
    d = u - ref
    return d - w @ d


def compare_methods(z, potentials, pmf_ref, weights):
    """Constant-aligned L2 and H1-seminorm errors weighted by ``mu_bar``.

    Parameters
    ----------
    z : array_like
        Common grid.
    potentials : dict of name -> array
        Coarse potentials on ``z``.
    pmf_ref : array_like or None
        Reference PMF on ``z``; when None only pairwise differences are
        reported.
    weights : array_like
        Marginal density values on ``z`` (normalized internally).
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(weights, dtype=float)
    arrays = {k: np.asarray(v, dtype=float) for k, v in potentials.items()}
    for name, a in list(arrays.items()) + ([("pmf_ref", np.asarray(pmf_ref))] if pmf_ref is not None else []):
        if a.shape != z.shape:
            raise ValueError(f"{name} has shape {a.shape}, grid has {z.shape}")
    if w.shape != z.shape:
        raise ValueError("weights do not match the grid")
    w = w / w.sum()

    def metrics(u, ref):
        l2 = float(np.sqrt(w @ _aligned(u, ref, w) ** 2))
        h1 = float(np.sqrt(w @ (np.gradient(u, z) - np.gradient(ref, z)) ** 2))
        return {"l2": l2, "h1": h1}

    out = {"methods": {}, "pairwise": {}}
    if pmf_ref is not None:
        ref = np.asarray(pmf_ref, dtype=float)
        out["methods"] = {k: metrics(a, ref) for k, a in arrays.items()}
    names = sorted(arrays)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            out["pairwise"][f"{a}-{b}"] = metrics(arrays[a], arrays[b])
    return out


def to_json(record):
    return json.dumps(record, indent=2, sort_keys=True, default=float)
