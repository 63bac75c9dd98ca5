"""Stationary kernels on covariate vectors and Gram-matrix construction.

Two families are supported:

* Matérn-5/2:  K(r) = (1 + sqrt(5) r / h + 5 r^2 / (3 h^2)) exp(-sqrt(5) r / h)
* Gaussian:    K(r) = exp(-r^2 / (2 h^2))

with ``r = ||x - z||_2``. Both satisfy ``K(x, x) = 1``.

All evaluations go through :func:`cross_kernel`, so a scalar evaluation and
the corresponding Gram entry share one arithmetic path and agree bit-for-bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "as_covariates",
    "cross_kernel",
    "eval_kernel",
    "gram_matrix",
    "kernel_vector",
]

_SQRT5 = np.sqrt(5.0)


class KernelFamily(str, enum.Enum):
    MATERN52 = "matern52"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth ``h`` (same units as covariate distances)."""

    family: KernelFamily = KernelFamily.MATERN52
    bandwidth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        h = float(self.bandwidth)
        if not np.isfinite(h) or h <= 0:
            raise ValueError(f"kernel bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)

    def profile(self, r: np.ndarray) -> np.ndarray:
        """Kernel value as a function of Euclidean distance ``r``."""
        r = np.asarray(r, dtype=float)
        h = self.bandwidth
        if self.family is KernelFamily.MATERN52:
            s = _SQRT5 * r / h
            return (1.0 + s + s * s / 3.0) * np.exp(-s)
        return np.exp(-(r * r) / (2.0 * h * h))


def as_covariates(x, name: str = "covariates") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float array (rows are covariate vectors)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one column")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _as_point(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def cross_kernel(spec: KernelSpec, a, b) -> np.ndarray:
    """Matrix ``K[i, j] = K(a_i, b_j)`` for two covariate matrices."""
    a = as_covariates(a, "a")
    b = as_covariates(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return spec.profile(cdist(a, b))


def eval_kernel(spec: KernelSpec, x, z) -> float:
    x = _as_point(x, "x")
    z = _as_point(z, "z")
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {z.size}")
    return float(cross_kernel(spec, x[None, :], z[None, :])[0, 0])


def gram_matrix(spec: KernelSpec, pts) -> np.ndarray:
    """Symmetric ``m x m`` Gram matrix with unit diagonal."""
    pts = as_covariates(pts, "pts")
    if pts.shape[0] == 0:
        raise ValueError("gram_matrix needs at least one point")
    return cross_kernel(spec, pts, pts)


def kernel_vector(spec: KernelSpec, pts, x0) -> np.ndarray:
    """Vector of ``K(pts_u, x0)`` over the rows of ``pts``."""
    pts = as_covariates(pts, "pts")
    x0 = _as_point(x0, "x0")
    if x0.size != pts.shape[1]:
        raise ValueError(f"dimension mismatch: x0 has {x0.size} entries, pts have {pts.shape[1]} columns")
    return cross_kernel(spec, pts, x0[None, :])[:, 0]
