"""Force matching: least-squares projection of local mean forces.

Given pairs ``(z_s, h_s)`` the empirical loss

    L(G; h) = (1/n) sum_s |h_s - G(z_s)|^2

is minimized over ``G = sum_k c_k g_k`` for a basis ``g_k``.  Every basis
also carries potentials ``psi_k`` with ``g_k = -dpsi_k/dz`` so that a fitted
force comes with its coarse potential ``U(z) = sum_k c_k psi_k(z)``.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import cumulative_trapezoid

from .exceptions import SingularMatrixError

MAX_CONDITION = 1e12
MIN_SAMPLES_PER_COEFF = 10
DEFAULT_RIDGE_SCALE = 1e-10


# ---------------------------------------------------------------------------
# bases


class _KnotBasis:
    """Shared hat-function machinery on strictly increasing knots."""

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing with at least 2 entries")
        self.knots = knots
        dk = np.diff(knots)
        # cum[i, k] = integral of hat_k from knots[0] to knots[i]
        seg = np.zeros((len(dk), len(knots)))
        seg[np.arange(len(dk)), np.arange(len(dk))] = dk / 2
        seg[np.arange(len(dk)), np.arange(1, len(knots))] = dk / 2
        self._cum = np.vstack([np.zeros(len(knots)), np.cumsum(seg, axis=0)])

    @property
    def n_coeffs(self):
        return len(self.knots)

    @property
    def support(self):
        return float(self.knots[0]), float(self.knots[-1])

    def _locate(self, z):
        z = np.asarray(z, dtype=float)
        j = np.clip(np.searchsorted(self.knots, z, side="right") - 1, 0, len(self.knots) - 2)
        t = (z - self.knots[j]) / (self.knots[j + 1] - self.knots[j])
        return j, t

    def hats(self, z):
        """Hat values, zero outside the knot range; shape ``(n, p)``."""
        z = np.ravel(np.asarray(z, dtype=float))
        j, t = self._locate(z)
        out = np.zeros((len(z), self.n_coeffs))
        inside = (z >= self.knots[0]) & (z <= self.knots[-1])
        rows = np.flatnonzero(inside)
        out[rows, j[inside]] = 1 - t[inside]
        out[rows, j[inside] + 1] += t[inside]
        return out

    def hat_integrals(self, z):
        """``int_{knots[0]}^{z} hat_k``, constant beyond the knot range."""
        z = np.clip(np.ravel(np.asarray(z, dtype=float)), self.knots[0], self.knots[-1])
        j, t = self._locate(z)
        dk = (self.knots[j + 1] - self.knots[j])
        out = self._cum[j].copy()
        rows = np.arange(len(z))
        out[rows, j] += dk * (t - t**2 / 2)
        out[rows, j + 1] += dk * t**2 / 2
        return out


class HatBasis(_KnotBasis):
    """Piecewise-linear force basis: ``g_k`` is the hat at knot ``k``."""

    kind = "hat_functions"

    def force_values(self, z):
        return self.hats(z)

    def potential_values(self, z):
        return -self.hat_integrals(z)

    @property
    def labels(self):
        return [f"hat@{k:.6g}" for k in self.knots]

    def to_dict(self):
        return {"kind": self.kind, "knots": self.knots.tolist()}


class SplinePotentialBasis(_KnotBasis):
    """Potential basis ``psi_k = int hat_k`` (piecewise quadratic spline).

    The force ``G = -dU/dz = -sum_k c_k hat_k`` is constrained to be the
    gradient of the fitted potential by construction.
    """

    kind = "potential_gradient"

    def force_values(self, z):
        return -self.hats(z)

    def potential_values(self, z):
        return self.hat_integrals(z)

    @property
    def labels(self):
        return [f"spline@{k:.6g}" for k in self.knots]

    def to_dict(self):
        return {"kind": self.kind, "knots": self.knots.tolist()}


class PolynomialBasis:
    """Force monomials ``z^m`` for ``m = 0..max_degree``."""

    kind = "polynomials"
    support = None

    def __init__(self, max_degree):
        if max_degree < 0:
            raise ValueError("max_degree must be non-negative")
        self.degrees = np.arange(int(max_degree) + 1)

    @property
    def n_coeffs(self):
        return len(self.degrees)

    def force_values(self, z):
        return np.ravel(np.asarray(z, dtype=float))[:, None] ** self.degrees

    def potential_values(self, z):
        z = np.ravel(np.asarray(z, dtype=float))[:, None]
        return -(z ** (self.degrees + 1)) / (self.degrees + 1)

    @property
    def labels(self):
        return [f"z^{m}" for m in self.degrees]

    def to_dict(self):
        return {"kind": self.kind, "max_degree": int(self.degrees[-1])}


class MonomialPotentialBasis:
    """Potential monomials ``psi_k = z^k / k`` for the given degrees ``k >= 1``.

    ``MonomialPotentialBasis([2])`` is the quadratic family ``U = theta z^2/2``
    with force ``-theta z``.
    """

    kind = "potential_monomials"
    support = None

    def __init__(self, degrees=(2,)):
        degrees = np.asarray(degrees, dtype=int)
        if degrees.ndim != 1 or np.any(degrees < 1) or len(set(degrees.tolist())) != len(degrees):
            raise ValueError("degrees must be distinct integers >= 1")
        self.degrees = degrees

    @property
    def n_coeffs(self):
        return len(self.degrees)

    def force_values(self, z):
        return -np.ravel(np.asarray(z, dtype=float))[:, None] ** (self.degrees - 1)

    def potential_values(self, z):
        z = np.ravel(np.asarray(z, dtype=float))[:, None]
        return z**self.degrees / self.degrees

    @property
    def labels(self):
        return [f"z^{k}/{k}" for k in self.degrees]

    def to_dict(self):
        return {"kind": self.kind, "degrees": self.degrees.tolist()}


def basis_from_dict(spec):
    """Build a basis from ``to_dict`` output or a config section.

    Knot bases accept ``knots`` or ``n_knots`` with ``range``.
    """
    kind = spec["kind"]
    if kind in ("hat_functions", "potential_gradient"):
        knots = spec.get("knots")
        if knots is None:
            lo, hi = spec["range"]
            knots = np.linspace(lo, hi, int(spec["n_knots"]))
        return (HatBasis if kind == "hat_functions" else SplinePotentialBasis)(knots)
    if kind == "polynomials":
        return PolynomialBasis(spec["max_degree"])
    if kind == "potential_monomials":
        return MonomialPotentialBasis(spec.get("degrees", (2,)))
    raise ValueError(f"unknown basis kind {kind!r}")


# ---------------------------------------------------------------------------
# least squares


@dataclass(eq=False)
class Design:
    """Normal equations of the empirical force-matching loss.

    ``A[i] = X_i^T X_i / n`` and ``b[i] = X_i^T h_i / n`` per coarse
    component ``i``; ``X`` holds the per-sample design rows, kept so
    residuals can be evaluated sample by sample.
    """

    basis: object
    A: np.ndarray
    b: np.ndarray
    X: np.ndarray
    h: np.ndarray
    n_samples: int
    condition: np.ndarray
    empty: list = field(default_factory=list)
    sample_hash: str = ""


def _as_columns(a, n=None):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _dependent_columns(X, labels):
    """Labels of columns QR with pivoting finds numerically dependent."""
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > diag[0] / MAX_CONDITION ** 0.5)) if diag.size and diag[0] > 0 else 0
    return [labels[i] for i in piv[rank:]]


def assemble_least_squares(z, h, basis, sample_hash=""):
    """Assemble the normal equations for ``min_c (1/n) sum |h - X c|^2``.

    ``z`` and ``h`` have shape ``(n,)`` or ``(n, d)``; components are fitted
    independently with the same scalar basis.  Raises
    :class:`SingularMatrixError`, naming the offending basis elements, if
    the basis is rank deficient on the data (column-scaled condition number
    above 1e12).  Basis functions with no support on the data only warn.
    """
    z = _as_columns(z)
    h = _as_columns(h)
    if z.shape != h.shape:
        raise ValueError(f"z and h shapes differ: {z.shape} vs {h.shape}")
    n, d = z.shape
    p = basis.n_coeffs
    if n < MIN_SAMPLES_PER_COEFF * p:
        raise ValueError(f"need at least {MIN_SAMPLES_PER_COEFF * p} samples for {p} coefficients, got {n}")
    labels = basis.labels
    X = np.stack([basis.force_values(z[:, i]) for i in range(d)])
    A = np.einsum("isk,isl->ikl", X, X) / n
    b = np.einsum("isk,si->ik", X, h) / n
    conds, empty = [], []
    for i in range(d):
        norms = np.sqrt(np.diag(A[i]))
        live = norms > 0
        if not np.all(live):
            empty += [labels[k] for k in np.flatnonzero(~live)]
        scaled = A[i][np.ix_(live, live)] / np.outer(norms[live], norms[live])
        c = np.linalg.cond(scaled) if scaled.size else np.inf
        if not c < MAX_CONDITION:
            bad = _dependent_columns(X[i][:, live], [labels[k] for k in np.flatnonzero(live)])
            raise SingularMatrixError(
                f"basis is rank deficient on the data (condition {c:.3g}); dependent elements: {bad}"
            )
        conds.append(c)
    if empty:
        warnings.warn(f"basis functions without data support: {sorted(set(empty))}", stacklevel=2)
    return Design(basis, A, b, X, h, n, np.array(conds), sorted(set(empty)), sample_hash)


@dataclass(eq=False)
class CGForceModel:
    """Fitted coarse force ``G(z) = sum_k c_k g_k(z)`` per component.

    ``coeffs`` has shape ``(d, p)``.  Evaluation outside the knot range
    clamps ``z`` to the nearest knot and warns.
    """

    basis: object
    coeffs: np.ndarray
    ridge: float = 0.0
    n_samples: int = 0
    sample_hash: str = ""

    @property
    def d(self):
        return self.coeffs.shape[0]

    def _clamp(self, z):
        z = _as_columns(z)
        sup = self.basis.support
        if sup is not None:
            out = (z < sup[0]) | (z > sup[1])
            if np.any(out):
                warnings.warn(f"{int(out.sum())} z values outside support {sup} clamped", stacklevel=3)
                z = np.clip(z, *sup)
        return z

    def force(self, z):
        """``G(z)`` with shape ``(n, d)`` (``(n,)`` if ``d = 1``)."""
        scalar = np.ndim(z) <= 1
        z = self._clamp(z)
        out = np.stack([self.basis.force_values(z[:, i]) @ self.coeffs[i] for i in range(self.d)], -1)
        return out[:, 0] if scalar and self.d == 1 else out

    def potential(self, z):
        """Potential ``U(z)`` of a ``d = 1`` model (arbitrary constant)."""
        if self.d != 1:
            raise ValueError("potential is defined for d = 1 models only")
        z = self._clamp(z)
        return self.basis.potential_values(z[:, 0]) @ self.coeffs[0]

    def to_dict(self):
        return {
            "basis": self.basis.to_dict(),
            "coeffs": self.coeffs.tolist(),
            "support": None if self.basis.support is None else list(self.basis.support),
            "provenance": {"sample_hash": self.sample_hash, "ridge": self.ridge,
                           "n_samples": self.n_samples},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        prov = data.get("provenance", {})
        return cls(basis_from_dict(data["basis"]), np.atleast_2d(np.asarray(data["coeffs"], float)),
                   prov.get("ridge", 0.0), prov.get("n_samples", 0), prov.get("sample_hash", ""))


def solve_force_match(design, ridge=None):
    """Minimize ``L(c) + ridge |c|^2`` from the assembled normal equations.

    ``ridge=None`` uses ``1e-10 * trace(A) / p``, a small bias that keeps
    knots without data determined.  ``ridge=0`` on a singular system raises.
    """
    d, p, _ = design.A.shape
    coeffs = np.empty((d, p))
    used = []
    for i in range(d):
        A = design.A[i]
        lam = DEFAULT_RIDGE_SCALE * np.trace(A) / p if ridge is None else float(ridge)
        if lam < 0:
            raise ValueError("ridge must be non-negative")
        M = A + lam * np.eye(p)
        if not np.linalg.cond(M) < MAX_CONDITION:
            raise SingularMatrixError("force-matching normal equations are singular; add a ridge")
        coeffs[i] = scipy.linalg.solve(M, design.b[i], assume_a="sym")
        used.append(lam)
    return CGForceModel(design.basis, coeffs, float(max(used)), design.n_samples, design.sample_hash)


def fit_force(z, h, basis, ridge=None, sample_hash=""):
    """``assemble_least_squares`` followed by ``solve_force_match``."""
    return solve_force_match(assemble_least_squares(z, h, basis, sample_hash), ridge)


def empirical_loss(z, h, model):
    r = _as_columns(h) - _as_columns(model.force(z))
    return float(np.mean(np.sum(r**2, axis=1)))


# ---------------------------------------------------------------------------
# decomposition L(G) = L(F) + E|F - G|^2


def _mean_se(v, blocks=None):
    """Mean and standard error; batch means over ``blocks`` when given."""
    v = np.asarray(v, dtype=float)
    if blocks is None:
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))
    labels, inv = np.unique(blocks, return_inverse=True)
    C = len(labels)
    n_c = np.bincount(inv, minlength=C)
    s_c = np.bincount(inv, v, minlength=C)
    m = s_c.sum() / n_c.sum()
    se = np.sqrt(C / (C - 1) * np.sum((s_c - m * n_c) ** 2)) / n_c.sum()
    return float(m), float(se)


@dataclass
class FMReport:
    """Monte Carlo estimates of the three terms of the decomposition.

    ``residual_identity_gap`` is ``loss_total - loss_floor_estimate -
    projection_error``; its expectation is zero when ``F_ref`` is the
    conditional mean of ``h``.  ``gap_stderr`` is the standard error of
    the per-sample gap ``2 (h - F) . (F - G)``.
    """

    loss_total: float
    loss_floor_estimate: float
    projection_error: float
    residual_identity_gap: float
    loss_total_stderr: float
    loss_floor_stderr: float
    projection_error_stderr: float
    gap_stderr: float
    n_samples: int

    def within(self, n_sigma=3.0):
        # absolute floor for noise-free cases where both sides are rounding
        floor = 1e-12 * max(1.0, self.loss_total)
        return abs(self.residual_identity_gap) <= n_sigma * self.gap_stderr + floor

    def to_dict(self):
        return dict(self.__dict__)


def residual_decomposition(z, h, model, F_ref, blocks=None):
    """Estimate ``L(G*)``, ``L(F_ref)`` and ``E|F_ref - G*|^2`` from samples.

    ``F_ref`` is a callable of ``z`` or an array of per-sample values.
    """
    h = _as_columns(h)
    G = _as_columns(model.force(z) if hasattr(model, "force") else model(z))
    F = _as_columns(F_ref(z) if callable(F_ref) else F_ref)
    a = np.sum((h - G) ** 2, axis=1)
    b = np.sum((h - F) ** 2, axis=1)
    c = np.sum((F - G) ** 2, axis=1)
    la, sa = _mean_se(a, blocks)
    lb, sb = _mean_se(b, blocks)
    lc, sc = _mean_se(c, blocks)
    # a - b - c == 2 (h - F).(F - G) sample by sample
    gap, sg = _mean_se(2 * np.sum((h - F) * (F - G), axis=1), blocks)
    return FMReport(la, lb, lc, la - lb - lc, sa, sb, sc, sg, len(h))


# ---------------------------------------------------------------------------
# potentials


@dataclass(eq=False)
class PotentialTable:
    """Tabulated coarse potential ``U(z)`` with ``U(z_ref) = 0``."""

    z: np.ndarray
    U: np.ndarray
    z_ref: float = 0.0

    def __call__(self, z):
        return np.interp(z, self.z, self.U)


def integrate_model(model, grid=None, z_ref=0.0):
    """Cumulative trapezoid of ``-G`` on ``grid``, zeroed at ``z_ref``.

    The default grid has 401 points over the basis support (or ``[-3, 3]``)
    and always contains the knots, so the result is exact for piecewise
    linear forces.
    """
    if model.d != 1:
        raise ValueError("integrate_model supports d = 1 only")
    if grid is None:
        lo, hi = model.basis.support or (-3.0, 3.0)
        grid = np.linspace(lo, hi, 401)
        if hasattr(model.basis, "knots"):
            grid = np.union1d(grid, model.basis.knots)
    grid = np.union1d(np.asarray(grid, dtype=float), [z_ref])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        G = model.force(grid)
    U = cumulative_trapezoid(-G, grid, initial=0.0)
    U -= U[np.searchsorted(grid, z_ref)]
    return PotentialTable(grid, U, float(z_ref))
