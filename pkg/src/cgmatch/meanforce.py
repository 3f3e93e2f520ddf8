"""Local mean forces for linear and nonlinear coarse-graining maps.

For a weight field ``W(x)`` (d x D) with ``G_W = W DPi^T`` invertible, the
local mean force

    h_W(x) = G_W^{-1} W f(x) + (1/beta) div_x(G_W^{-1} W)

has conditional expectation ``E[h_W | Pi = z]`` equal to the mean force
``-grad A(z)`` for every admissible ``W``.  The divergence term vanishes for
linear maps with constant ``W``.
"""

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import cgmap as cgm
from . import microsys
from .exceptions import DegenerateMapError, SingularMatrixError

SKIP_WARN_FRACTION = 0.01
NULL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class WSpec:
    """Choice of weight matrix field ``W(x)``.

    Use the constructors :meth:`equals_jacobian`, :meth:`constant_matrix`
    and :meth:`function`.
    """

    kind: str
    matrix: Optional[np.ndarray] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def equals_jacobian(cls):
        return cls("jacobian")

    @classmethod
    def constant_matrix(cls, W):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        W.setflags(write=False)
        return cls("constant", matrix=W)

    @classmethod
    def function(cls, func):
        return cls("function", func=func)

    def is_constant_for(self, cgmap):
        return self.kind == "constant" or (self.kind == "jacobian" and cgmap.is_linear)

    def weights(self, cgmap, x, dpi=None):
        """``W(x)`` with shape ``(..., d, D)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "jacobian":
            return cgm.jacobian(cgmap, x) if dpi is None else dpi
        if self.kind == "constant":
            if self.matrix.shape != (cgmap.d_out, cgmap.d_in):
                raise ValueError(f"W has shape {self.matrix.shape}, expected {(cgmap.d_out, cgmap.d_in)}")
            return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape)
        return np.asarray(self.func(x), dtype=float)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.matrix is not None:
            out["matrix"] = self.matrix.tolist()
        return out


@dataclass(frozen=True)
class LocalForceSample:
    z: np.ndarray
    h: np.ndarray
    x: np.ndarray


@dataclass(eq=False)
class LocalForces:
    """Local mean forces evaluated over a set of configurations.

    Arrays are aligned; ``index`` points back into the original sample
    list, and configurations rejected as degenerate are counted in
    ``n_skipped``.
    """

    z: np.ndarray
    h: np.ndarray
    x: np.ndarray
    index: np.ndarray
    n_skipped: int

    def __len__(self):
        return len(self.z)

    def __getitem__(self, i):
        return LocalForceSample(self.z[i], self.h[i], self.x[i])


def local_mean_force_linear(T, W, f):
    """``h_W = (W T^T)^{-1} W f`` for a linear map with matrix ``T``."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    g = W @ T.T
    if np.linalg.cond(g) >= cgm.MAX_CONDITION:
        raise SingularMatrixError("W T^T is singular")
    f = np.asarray(f, dtype=float)
    return np.linalg.solve(g, W @ f.T).T if f.ndim > 1 else np.linalg.solve(g, W @ f)


def local_mean_force(system, cgmap, wspec, beta, x, include_divergence=True,
                     step=cgm.DIVERGENCE_STEP):
    """Local mean force ``h_W(x)``, shape ``(..., d)``.

    ``include_divergence=False`` drops the ``1/beta`` curvature term, a
    low-temperature approximation; it is exact only for linear maps with
    constant ``W``, where the term is skipped anyway.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = cgm._check(cgmap, x)
    f = microsys.force(system, x)
    if cgmap.is_linear and wspec.is_constant_for(cgmap):
        W = wspec.matrix if wspec.kind == "constant" else cgmap.matrix
        return local_mean_force_linear(cgmap.matrix, W, f)
    m = cgm._weighted_inverse(cgmap, wspec, x)
    h = np.einsum("...ij,...j->...i", m, f)
    if include_divergence:
        h = h + cgm.divergence_term(cgmap, wspec, x, step) / beta
    return h


def evaluate_over_samples(system, cgmap, wspec, beta, samples, include_divergence=True,
                          chunk=20000):
    """Apply the map and ``local_mean_force`` to every sample.

    Degenerate configurations (including a degenerate divergence stencil or
    singular ``G_W``) are skipped and counted; a warning is issued when more
    than 1% are skipped.
    """
    X = np.atleast_2d(np.asarray(getattr(samples, "samples", samples), dtype=float))
    n = len(X)
    keep = ~cgmap.degenerate_mask(X)
    if not cgmap.is_linear:
        # the divergence stencil must stay off the degenerate set as well
        step = cgm.DIVERGENCE_STEP
        eye = np.eye(cgmap.d_in) * step
        for sgn in (1, -1):
            for j in range(cgmap.d_in):
                keep &= ~cgmap.degenerate_mask(X + sgn * eye[j])
    idx = np.flatnonzero(keep)
    zs, hs, kept = [], [], []
    for start in range(0, len(idx), chunk):
        sel = idx[start:start + chunk]
        try:
            hs.append(local_mean_force(system, cgmap, wspec, beta, X[sel], include_divergence))
            zs.append(cgm.apply(cgmap, X[sel]))
            kept.append(sel)
        except (DegenerateMapError, SingularMatrixError):
            # fall back to one-by-one evaluation for this chunk
            for s in sel:
                try:
                    hs.append(local_mean_force(system, cgmap, wspec, beta, X[s:s + 1], include_divergence))
                    zs.append(cgm.apply(cgmap, X[s:s + 1]))
                    kept.append(np.array([s]))
                except (DegenerateMapError, SingularMatrixError):
                    pass
    d = cgmap.d_out
    index = np.concatenate(kept) if kept else np.zeros(0, dtype=int)
    z = np.concatenate(zs) if zs else np.zeros((0, d))
    h = np.concatenate(hs) if hs else np.zeros((0, d))
    n_skipped = n - len(index)
    if n and n_skipped > SKIP_WARN_FRACTION * n:
        warnings.warn(f"{n_skipped} of {n} samples skipped as degenerate for {cgmap.name}",
                      stacklevel=2)
    return LocalForces(z=z, h=h, x=X[index], index=index, n_skipped=n_skipped)


def solve_w_for_target(T, B, tol=NULL_TOL):
    """Find ``W`` with ``W (I - T^T B) = 0`` and ``W T^T`` invertible.

    Such a ``W`` makes the local mean force ``(W T^T)^{-1} W f`` equal to
    ``B f`` for every ``f``.  Returns ``None`` when the left null space of
    ``I - T^T B`` has dimension below ``d`` or contains no admissible
    ``W``.  The returned rows are orthonormal.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if T.shape != B.shape:
        raise ValueError(f"T and B must share shape, got {T.shape} and {B.shape}")
    d, D = T.shape
    K = np.eye(D) - T.T @ B
    U, s, _ = np.linalg.svd(K)
    scale = max(s[0], 1.0)
    order = np.argsort(s, kind="stable")
    null = [U[:, i] for i in order if s[i] <= tol * scale]
    if len(null) < d:
        return None
    rows = []
    for v in null:
        trial = np.array(rows + [v])
        # keep the candidate only if it raises the rank of W T^T
        if np.linalg.matrix_rank(trial @ T.T, tol=tol) == len(trial):
            rows.append(v)
        if len(rows) == d:
            break
    if len(rows) < d:
        return None
    W, _ = np.linalg.qr(np.array(rows).T)
    return W.T
