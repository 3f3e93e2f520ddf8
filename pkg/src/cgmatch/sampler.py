"""Metropolis sampling of the Gibbs measure and conditional expectations.

Conditional expectations are always the normalized ones,

    E[phi | z] = (1 / mu_bar(z)) * integral over {Pi(x) = z} of phi(x) mu(x) dx,

estimated either by binning Monte Carlo samples in ``z`` or, for small
systems and linear maps, by quadrature over the fibre ``{T x = z}``.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, QuadratureError, SamplingError

RNG_BLOCK = 4096
TUNE_INTERVAL = 50
DEFAULT_BINS = 50
PERCENTILE_RANGE = (0.5, 99.5)


@dataclass(eq=False)
class SampleSet:
    """Configurations retained by :func:`metropolis_sample`.

    ``samples`` has shape ``(n, D)`` and is the concatenation of
    ``n_chains`` equally long chains in chain order.
    """

    samples: np.ndarray
    beta: float
    seed: int
    n_steps: int
    n_burn: int
    n_thin: int
    step_size: np.ndarray
    acceptance_rate: float
    n_chains: int = 1
    system: str = ""
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @property
    def chain(self):
        """Chain label of every sample."""
        return np.repeat(np.arange(self.n_chains), len(self.samples) // self.n_chains)

    def metadata(self):
        return {
            "system": self.system,
            "params": self.params,
            "beta": self.beta,
            "seed": self.seed,
            "n_steps": self.n_steps,
            "n_burn": self.n_burn,
            "n_thin": self.n_thin,
            "n_chains": self.n_chains,
            "step_size": np.asarray(self.step_size).tolist(),
            "acceptance_rate": self.acceptance_rate,
            "n_samples": len(self.samples),
            "n_dof": int(self.samples.shape[1]),
        }

    def digest(self):
        """SHA-256 of the raw sample array, for provenance records."""
        return hashlib.sha256(np.ascontiguousarray(self.samples).tobytes()).hexdigest()

    def save(self, stem):
        """Write ``<stem>.csv`` (one row per sample) and ``<stem>.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        header = ",".join(f"x{i}" for i in range(self.samples.shape[1]))
        np.savetxt(stem.with_suffix(".csv"), self.samples, fmt="%.17g", delimiter=",",
                   header=header, comments="")
        meta = self.metadata() | {"sha256": self.digest()}
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return stem.with_suffix(".csv"), stem.with_suffix(".json")

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        x = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        return cls(x, meta["beta"], meta["seed"], meta["n_steps"], meta["n_burn"], meta["n_thin"],
                   np.asarray(meta["step_size"]), meta["acceptance_rate"], meta["n_chains"],
                   meta["system"], meta["params"])


def metropolis_sample(system, beta, n_steps, step_size=0.5, seed=0, n_burn=None, n_thin=10,
                      n_chains=1, x0=None, tune=True, target_acceptance=0.4):
    """Single-particle random-walk Metropolis sampling of ``exp(-beta U)``.

    Each step moves one randomly chosen particle of every chain by a uniform
    displacement in ``[-s, s]^dim`` and accepts with ``min(1, exp(-beta dU))``.
    Moves leaving ``system.box`` are rejected.  During burn-in the step size
    of each chain is tuned towards ``target_acceptance``; it is frozen for
    the production phase.  Chain ``c`` draws from its own generator seeded
    with ``seed + c``, and chains are vectorized together.

    Parameters
    ----------
    n_steps : int
        Steps per chain, burn-in included.
    n_burn : int, optional
        Burn-in steps per chain, default 10% of ``n_steps``.
    n_thin : int
        Keep every ``n_thin``-th post-burn-in state.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    n_burn = n_steps // 10 if n_burn is None else int(n_burn)
    if not n_steps > n_burn >= 0:
        raise ValueError("need n_steps > n_burn >= 0")
    if not step_size > 0 or n_thin < 1 or n_chains < 1:
        raise ValueError("step_size, n_thin and n_chains must be positive")

    C, N, dim, D = n_chains, system.n_particles, system.dim, system.n_dof
    X = np.tile(system.x0 if x0 is None else np.asarray(x0, float), (C, 1))
    if X.shape[1] != D:
        raise DimensionError(f"x0 has {X.shape[1]} coordinates, system has {D}")
    U = np.asarray(system.potential(X), dtype=float)
    if not np.all(np.isfinite(U)):
        raise SamplingError(f"non-finite energy at the initial configuration of {system.name}")

    rngs = [np.random.default_rng(seed + c) for c in range(C)]
    s = np.full(C, float(step_size))
    rows = np.arange(C)[:, None]
    offs = np.arange(dim)
    n_keep = (n_steps - n_burn) // n_thin
    out = np.empty((C, n_keep, D))
    kept = 0
    n_acc = np.zeros(C)
    window = np.zeros(C)
    t = 0
    while t < n_steps:
        B = min(RNG_BLOCK, n_steps - t)
        draws = [(r.integers(0, N, size=B), r.uniform(-1.0, 1.0, size=(B, dim)), r.random(B))
                 for r in rngs]
        part = np.stack([d[0] for d in draws], axis=1)
        disp = np.stack([d[1] for d in draws], axis=1)
        unif = np.stack([d[2] for d in draws], axis=1)
        for b in range(B):
            prop = X.copy()
            cols = part[b][:, None] * dim + offs
            prop[rows, cols] += s[:, None] * disp[b]
            Up = np.asarray(system.potential(prop), dtype=float)
            inside = system.in_box(prop)
            if not np.all(np.isfinite(Up[inside])):
                bad = prop[inside][~np.isfinite(Up[inside])][0]
                raise SamplingError(f"non-finite energy in {system.name} at step {t}: x = {bad.tolist()}")
            with np.errstate(over="ignore", invalid="ignore"):
                acc = inside & (np.log(unif[b]) < -beta * (Up - U))
            X[acc] = prop[acc]
            U[acc] = Up[acc]
            if t < n_burn:
                window += acc
                if tune and (t + 1) % TUNE_INTERVAL == 0:
                    rate = window / TUNE_INTERVAL
                    s *= np.clip(np.maximum(rate, 0.01) / target_acceptance, 0.5, 2.0)
                    window[:] = 0
            else:
                n_acc += acc
                if (t - n_burn + 1) % n_thin == 0 and kept < n_keep:
                    out[:, kept] = X
                    kept += 1
            t += 1

    rate = float(n_acc.sum() / (C * (n_steps - n_burn)))
    if not 0.1 <= rate <= 0.9:
        warnings.warn(f"acceptance rate {rate:.3f} outside [0.1, 0.9]", stacklevel=2)
    return SampleSet(out.reshape(C * n_keep, D), float(beta), int(seed), int(n_steps), n_burn,
                     int(n_thin), s, rate, C, system.name, dict(system.params))


# ---------------------------------------------------------------------------
# binned conditional expectations


@dataclass(eq=False)
class BinnedConditional:
    """Per-bin sample means of an observable given the coarse variable.

    ``means`` and ``stderr`` have shape ``bins_shape + (k,)``; empty bins
    hold NaN.  Samples outside the binning range are clipped into the edge
    bins so that ``counts.sum()`` equals the number of samples, and
    ``interior`` flags the bins not affected by clipping.
    """

    edges: list
    means: np.ndarray
    counts: np.ndarray
    stderr: np.ndarray
    interior: np.ndarray

    @property
    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]


def default_edges(z, bins=DEFAULT_BINS):
    """Uniform edges over the central 99% (percentiles 0.5 to 99.5) of ``z``."""
    lo, hi = np.percentile(z, PERCENTILE_RANGE)
    if not hi > lo:
        raise ValueError("empty binning range: sampled coarse values are constant")
    return np.linspace(lo, hi, int(bins) + 1)


def _edges_per_component(z, bins):
    d = z.shape[1]
    if d > 2:
        raise ValueError("grid binning supports at most 2 coarse components")
    per_component = (isinstance(bins, (list, tuple)) and len(bins) == d
                     and (d == 2 or np.ndim(bins[0]) == 1))
    if per_component:
        specs = list(bins)
    else:
        specs = [bins] * d
    edges = []
    for i, b in enumerate(specs):
        if np.ndim(b) == 0:
            edges.append(default_edges(z[:, i], b))
        else:
            e = np.asarray(b, dtype=float)
            if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("bin edges must be strictly increasing")
            edges.append(e)
    return edges


def bin_index(z, edges, clip=True):
    """Flat bin index of every sample (``-1`` outside when not clipping)."""
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T if np.ndim(z) == 1 else np.asarray(z, float)
    idx = []
    outside = np.zeros(len(z), dtype=bool)
    for i, e in enumerate(edges):
        j = np.searchsorted(e, z[:, i], side="right") - 1
        # right edge belongs to the last bin
        j[z[:, i] == e[-1]] = len(e) - 2
        outside |= (j < 0) | (j > len(e) - 2)
        idx.append(np.clip(j, 0, len(e) - 2))
    flat = np.ravel_multi_index(idx, tuple(len(e) - 1 for e in edges))
    if not clip:
        flat[outside] = -1
    return flat, outside


def _cluster_stats(flat, values, nbins, blocks):
    """Per-bin counts, means and standard errors.

    With ``blocks`` (one label per sample), standard errors are the
    cluster-robust (batch-means) estimate, which stays valid for
    autocorrelated chains; otherwise the i.i.d. formula is used.
    """
    k = values.shape[1]
    counts = np.bincount(flat, minlength=nbins).astype(float)
    sums = np.stack([np.bincount(flat, values[:, j], minlength=nbins) for j in range(k)], -1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    if blocks is None:
        dev = values - means[flat]
        ss = np.stack([np.bincount(flat, dev[:, j] ** 2, minlength=nbins) for j in range(k)], -1)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = ss / (counts[:, None] - 1)
            se = np.sqrt(var / counts[:, None])
        se[counts < 2] = np.nan
        return counts, means, se
    labels, blk = np.unique(np.asarray(blocks), return_inverse=True)
    C = len(labels)
    if C < 2:
        return _cluster_stats(flat, values, nbins, None)
    cell = flat * C + blk
    n_c = np.bincount(cell, minlength=nbins * C).reshape(nbins, C)
    se = np.empty((nbins, k))
    for j in range(k):
        s_c = np.bincount(cell, values[:, j], minlength=nbins * C).reshape(nbins, C)
        resid = s_c - np.nan_to_num(means[:, j])[:, None] * n_c
        with np.errstate(invalid="ignore", divide="ignore"):
            se[:, j] = np.sqrt(C / (C - 1) * np.sum(resid**2, axis=1)) / counts
    se[counts < 2] = np.nan
    return counts, means, se


def conditional_average(z, values, bins=DEFAULT_BINS, blocks=None):
    """Binned estimate of ``E[phi | z]`` from paired samples.

    Parameters
    ----------
    z : array_like, shape (n,) or (n, d) with d <= 2
        Coarse coordinates of the samples.
    values : array_like, shape (n,) or (n, k)
        Observable values ``phi(x_s)``.
    bins : int or array_like
        Number of bins per component (uniform over the central 99% of ``z``)
        or explicit edges.
    blocks : array_like, optional
        Chain or batch label per sample for autocorrelation-robust errors.
    """
    z = np.asarray(z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    v = np.asarray(values, dtype=float)
    v = v[:, None] if v.ndim == 1 else v
    if len(z) != len(v):
        raise ValueError("z and values must have the same length")
    edges = _edges_per_component(z, bins)
    shape = tuple(len(e) - 1 for e in edges)
    flat, outside = bin_index(z, edges)
    nb = int(np.prod(shape))
    counts, means, se = _cluster_stats(flat, v, nb, blocks)
    interior = np.ones(nb, dtype=bool)
    interior[np.unique(flat[outside])] = False
    return BinnedConditional(edges, means.reshape(shape + (v.shape[1],)), counts.reshape(shape),
                             se.reshape(shape + (v.shape[1],)), interior.reshape(shape))


def conditional_observable(samples, cgmap, observable, bins=DEFAULT_BINS, blocks=None):
    """``conditional_average`` of ``observable(x)`` on mapped samples.

    Samples where ``cgmap`` is degenerate are excluded.  Returns the binned
    result and the number of excluded samples.
    """
    X = np.atleast_2d(np.asarray(getattr(samples, "samples", samples), dtype=float))
    keep = ~cgmap.degenerate_mask(X)
    if blocks is None and isinstance(samples, SampleSet) and samples.n_chains > 1:
        blocks = samples.chain
    blocks = None if blocks is None else np.asarray(blocks)[keep]
    z = cgmap.func(X[keep])
    return conditional_average(z, observable(X[keep]), bins, blocks), int(np.sum(~keep))


# ---------------------------------------------------------------------------
# quadrature oracles


def _grid_axes(grid, n_dims):
    """Normalize a grid spec: one ``(lo, hi, n)`` or a list of them."""
    if len(grid) == 3 and np.ndim(grid[0]) == 0:
        grid = [grid] * n_dims
    if len(grid) != n_dims:
        raise ValueError(f"grid spec needs {n_dims} axes")
    axes = []
    for lo, hi, n in grid:
        n = int(n)
        if n < 5 or n % 2 == 0:
            raise ValueError("grid axes need an odd number (>= 5) of points")
        axes.append(np.linspace(lo, hi, n))
    return axes


def _trap_weights(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def _tensor_integrals(log_density, observable, axes, chunk=1 << 18):
    """Trapezoid sums on the full grid and on every other point.

    Returns ``(num, den, num_coarse, den_coarse, edge_max, peak)`` where
    ``num`` integrates ``observable * density`` and ``den`` the density,
    both relative to the density peak found on the grid.
    """
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    tw = [_trap_weights(len(a)) for a in axes]
    tw_c = []
    for a in axes:
        w = np.zeros(len(a))
        w[::2] = 2 * _trap_weights((len(a) + 1) // 2)
        tw_c.append(w)
    # first pass: peak of log density for stable exponentials
    logs = np.empty(total)
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(start + chunk, total)), shape)
        pts = np.stack([a[i] for a, i in zip(axes, idx)], -1)
        logs[start:start + len(pts)] = log_density(pts)
    if not np.all(np.isfinite(logs) | (logs == -np.inf)):
        raise QuadratureError("non-finite density on the quadrature grid")
    peak = np.max(logs)
    num = den = num_c = den_c = 0.0
    edge_max = 0.0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, shape)
        pts = np.stack([a[i] for a, i in zip(axes, idx)], -1)
        rho = np.exp(logs[flat] - peak)
        w = np.prod([t[i] for t, i in zip(tw, idx)], axis=0)
        wc = np.prod([t[i] for t, i in zip(tw_c, idx)], axis=0)
        on_edge = np.any([(i == 0) | (i == len(a) - 1) for a, i in zip(axes, idx)], axis=0)
        if np.any(on_edge):
            edge_max = max(edge_max, float(np.max(rho[on_edge])))
        phi = np.asarray(observable(pts), dtype=float)
        phi = phi[:, None] if phi.ndim == 1 else phi
        num = num + np.sum((w * rho)[:, None] * phi, axis=0)
        num_c = num_c + np.sum((wc * rho)[:, None] * phi, axis=0)
        den += np.sum(w * rho)
        den_c += np.sum(wc * rho)
    return num, den, num_c, den_c, edge_max, peak


def _finish(num, den, num_c, den_c, edge_max, tol, what):
    if edge_max > 1e-10:
        raise QuadratureError(f"{what}: grid does not cover the support (edge density {edge_max:.2e} of max)")
    val = num / den
    err = np.abs(val - num_c / den_c) / 3.0
    if tol is not None and np.any(err > tol):
        raise QuadratureError(f"{what}: grid too coarse, error estimate {np.max(err):.2e} > {tol:.2e}")
    return val, err


def quadrature_expectation(system, beta, observable, grid, tol=1e-6, return_error=False):
    """Tensor-grid trapezoidal ``E_mu[phi]`` for systems with at most 4 dof.

    ``grid`` is ``(lo, hi, n)`` for every coordinate or one such triple per
    coordinate.  The error estimate compares the grid with its every-other-
    point subgrid (Richardson, ``|I_h - I_2h| / 3``).
    """
    if system.n_dof > 4:
        raise ValueError("quadrature is limited to n_dof <= 4")
    axes = _grid_axes(grid, system.n_dof)

    def log_density(pts):
        return -beta * system.potential(pts)

    num, den, num_c, den_c, edge, _ = _tensor_integrals(log_density, observable, axes)
    val, err = _finish(num, den, num_c, den_c, edge, tol, "quadrature_expectation")
    val = val[0] if val.shape == (1,) else val
    err = err[0] if err.shape == (1,) else err
    return (val, err) if return_error else val


def fiber_parametrization(cgmap):
    """Orthonormal parametrization ``x = T^+ z + Q s`` of ``{T x = z}``."""
    if not cgmap.is_linear:
        raise ValueError(f"fibre quadrature needs a linear map, got {cgmap.name}")
    T = cgmap.matrix
    _, sv, vt = np.linalg.svd(T)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    Q = vt[rank:].T
    pinv = np.linalg.pinv(T)
    return pinv, Q


def fiber_integrals(system, beta, cgmap, observable, z_values, grid, tol=1e-6):
    """For each ``z``: ``E[phi | z]``, its error and ``log int exp(-beta U) ds``."""
    if system.n_dof > 4:
        raise ValueError("quadrature is limited to n_dof <= 4")
    pinv, Q = fiber_parametrization(cgmap)
    axes = _grid_axes(grid, Q.shape[1])
    zs = np.atleast_2d(np.asarray(z_values, dtype=float).T).T if np.ndim(z_values) == 1 \
        else np.asarray(z_values, dtype=float)
    vals, errs, logn = [], [], []
    ds = np.prod([a[1] - a[0] for a in axes])
    for z in zs:
        xp = pinv @ z

        def log_density(s, xp=xp):
            return -beta * system.potential(xp + s @ Q.T)

        def obs(s, xp=xp):
            return observable(xp + s @ Q.T)

        num, den, num_c, den_c, edge, peak = _tensor_integrals(log_density, obs, axes)
        v, e = _finish(num, den, num_c, den_c, edge, tol, f"conditional_quadrature at z={z}")
        vals.append(v)
        errs.append(e)
        logn.append(np.log(den * ds) + peak)
    return np.array(vals), np.array(errs), np.array(logn)


def conditional_quadrature(system, beta, cgmap, observable, z_values, grid, tol=1e-6,
                           return_error=False):
    """``E[phi | z]`` by quadrature over the affine fibre of a linear map."""
    vals, errs, _ = fiber_integrals(system, beta, cgmap, observable, z_values, grid, tol)
    if vals.shape[-1] == 1:
        vals, errs = vals[..., 0], errs[..., 0]
    return (vals, errs) if return_error else vals
