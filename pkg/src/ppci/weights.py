"""Localization weights, L-curve tuning of the ridge parameter, and cross-fitting.

For a training set of ``m`` covariates with Gram matrix ``Sigma`` and target
vector ``k0 = (K(x_u, x0))_u``, the empirical localization weight is

    w(x) = sum_u K(x, x_u) xi_u,    xi = (Sigma + m * lam * I)^{-1} k0.

The L-curve scan over ``lam`` uses one eigendecomposition ``Sigma = U D U^T``
and then only scalar filter factors ``d_j / (d_j + m lam)`` per grid point.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .kernel import KernelSpec, as_covariates, cross_kernel, gram_matrix, kernel_vector

__all__ = [
    "LINALG_COUNTER",
    "CrossFitWeights",
    "DegenerateLCurveError",
    "LCurveTrace",
    "LambdaGrid",
    "SpectralCache",
    "WeightFunction",
    "WeightMode",
    "build_weights",
    "eval_weight",
    "fit_weight",
    "lcurve_points",
    "resolve_grid",
    "select_lambda_lcurve",
    "spectral_precompute",
]

logger = logging.getLogger(__name__)


class DegenerateLCurveError(ValueError, ArithmeticError):
    """The trace has no usable corner (non-finite points or coincident endpoints)."""


class _LinalgCounter:
    """Counts dense factorizations and solves performed by this module."""

    def __init__(self):
        self.factorizations = 0
        self.solves = 0

    def total(self) -> int:
        return self.factorizations + self.solves

    def reset(self):
        self.factorizations = 0
        self.solves = 0


LINALG_COUNTER = _LinalgCounter()


class WeightMode(str, enum.Enum):
    TWOFOLD = "twofold"
    POOLED = "pooled"
    # one weight fit on a training block, scores evaluated on a separate block
    SPLIT = "split"


@dataclass(frozen=True)
class LambdaGrid:
    """Log-spaced grid ``[lo / m, hi / m]`` with ``num`` points, resolved per fold size."""

    num: int = 50
    lo: float = 1e-4
    hi: float = 1e2

    def __post_init__(self):
        if self.num < 1:
            raise ValueError("lambda grid needs at least one point")
        if not (0 < self.lo < self.hi):
            raise ValueError(f"need 0 < lo < hi, got lo={self.lo}, hi={self.hi}")

    def values(self, m: int) -> np.ndarray:
        return np.logspace(np.log10(self.lo / m), np.log10(self.hi / m), self.num)


def resolve_grid(grid, m: int) -> np.ndarray:
    if grid is None:
        grid = LambdaGrid()
    if isinstance(grid, LambdaGrid):
        return grid.values(m)
    return _check_grid(grid)


def _check_grid(grid) -> np.ndarray:
    lam = np.asarray(grid, dtype=float).reshape(-1)
    if lam.size == 0:
        raise ValueError("lambda grid is empty")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError("lambda grid values must be positive and finite")
    if np.any(np.diff(lam) <= 0):
        raise ValueError("lambda grid must be strictly ascending")
    return lam


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """A fitted localization weight ``x -> sum_u K(x, x_u) xi_u``."""

    train_points: np.ndarray
    coeffs: np.ndarray
    lam: float
    x0: np.ndarray
    kernel: KernelSpec
    leverage: float

    def __call__(self, x) -> np.ndarray:
        """Evaluate at the rows of ``x`` (2-D) and return a vector."""
        x = as_covariates(x, "x")
        if x.shape[1] != self.train_points.shape[1]:
            raise ValueError(
                f"dimension mismatch: x has {x.shape[1]} columns, weight trained on {self.train_points.shape[1]}"
            )
        return cross_kernel(self.kernel, x, self.train_points) @ self.coeffs

    @property
    def m(self) -> int:
        return self.train_points.shape[0]


def fit_weight(kernel: KernelSpec, train, x0, lam: float) -> WeightFunction:
    """Solve ``(Sigma + m lam I) xi = k0`` by Cholesky and wrap the result."""
    train = as_covariates(train, "train")
    m = train.shape[0]
    if m == 0:
        raise ValueError("fit_weight needs a nonempty training set")
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    gram = gram_matrix(kernel, train)
    k0 = kernel_vector(kernel, train, x0)
    xi = _ridge_solve(gram, k0, m * lam)
    return _make_weight(kernel, train, x0, lam, xi, k0)


def _make_weight(kernel, train, x0, lam, xi, k0) -> WeightFunction:
    leverage = float(k0 @ xi)
    return WeightFunction(train, xi, float(lam), x0, kernel, leverage)


def _ridge_solve(gram: np.ndarray, rhs: np.ndarray, shift: float) -> np.ndarray:
    a = gram + shift * np.eye(gram.shape[0])
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError(f"ridge system factorization failed: {exc}") from exc
    LINALG_COUNTER.factorizations += 1
    xi = scipy.linalg.cho_solve(factor, rhs)
    LINALG_COUNTER.solves += 1
    tol = 1e-8 * (np.linalg.norm(rhs) + 1.0)
    resid = a @ xi - rhs
    if np.linalg.norm(resid) > tol:
        # one step of iterative refinement
        xi = xi - scipy.linalg.cho_solve(factor, resid)
        LINALG_COUNTER.solves += 1
        if np.linalg.norm(a @ xi - rhs) > tol:
            raise np.linalg.LinAlgError("ridge solve did not meet the residual tolerance")
    return xi


def eval_weight(w: WeightFunction, x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(w(x[None, :])[0])


@dataclass(frozen=True, eq=False)
class SpectralCache:
    """Eigendecomposition of a Gram matrix projected onto its target vector.

    ``eigvals`` are sorted descending and clamped at zero; ``ktilde = U^T k0``.
    """

    eigvals: np.ndarray
    ktilde: np.ndarray
    eigvecs: np.ndarray
    m: int
    n_clamped: int = 0

    def coeffs(self, lam: float) -> np.ndarray:
        """Ridge coefficients ``U (D + m lam)^{-1} k~`` without a fresh solve."""
        return self.eigvecs @ (self.ktilde / (self.eigvals + self.m * lam))


def spectral_precompute(gram, k0) -> SpectralCache:
    gram = np.asarray(gram, dtype=float)
    k0 = np.asarray(k0, dtype=float).reshape(-1)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError(f"gram must be square, got shape {gram.shape}")
    m = gram.shape[0]
    if k0.size != m:
        raise ValueError(f"k0 has length {k0.size}, expected {m}")
    if not np.allclose(gram, gram.T, rtol=0, atol=1e-12):
        raise ValueError("gram matrix is not symmetric")
    try:
        d, u = scipy.linalg.eigh(gram, driver="evd")
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigendecomposition failed: {exc}") from exc
    LINALG_COUNTER.factorizations += 1
    d = d[::-1]
    u = np.ascontiguousarray(u[:, ::-1])
    n_clamped = int(np.count_nonzero(d < 0))
    d = np.maximum(d, 0.0)
    err = np.linalg.norm((u * d) @ u.T - gram)
    if err > 1e-7 * m:
        raise np.linalg.LinAlgError(f"eigendecomposition reconstruction error {err:.3e} too large")
    if n_clamped:
        logger.debug("clamped %d negative eigenvalues to zero", n_clamped)
    return SpectralCache(eigvals=d, ktilde=u.T @ k0, eigvecs=u, m=m, n_clamped=n_clamped)


@dataclass(frozen=True, eq=False)
class LCurveTrace:
    lambdas: np.ndarray
    log_residual: np.ndarray
    log_varproxy: np.ndarray
    selected_index: int | None = None

    def __post_init__(self):
        k = len(self.lambdas)
        if len(self.log_residual) != k or len(self.log_varproxy) != k:
            raise ValueError("L-curve arrays must have equal length")
        if self.selected_index is not None and not 0 <= self.selected_index < k:
            raise ValueError("selected_index out of bounds")

    @property
    def selected_lambda(self) -> float:
        if self.selected_index is None:
            raise ValueError("no lambda has been selected on this trace")
        return float(self.lambdas[self.selected_index])

    def chord_distances(self) -> np.ndarray:
        """Perpendicular distance of each point to the chord joining the endpoints."""
        p = np.column_stack([self.log_residual, self.log_varproxy])
        if not np.all(np.isfinite(p)):
            raise DegenerateLCurveError("L-curve trace contains non-finite values")
        chord = p[-1] - p[0]
        length = np.hypot(*chord)
        if length == 0:
            raise DegenerateLCurveError("degenerate L-curve: endpoints coincide")
        rel = p - p[0]
        return np.abs(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "log_residual", "log_varproxy", "selected"])
            for k, (lam, r, v) in enumerate(zip(self.lambdas, self.log_residual, self.log_varproxy)):
                writer.writerow([repr(float(lam)), repr(float(r)), repr(float(v)), int(k == self.selected_index)])


def lcurve_points(cache: SpectralCache, grid, m: int | None = None) -> LCurveTrace:
    """Evaluate both L-curve coordinates on ``grid`` from the spectral cache only."""
    lam = _check_grid(grid)
    m = cache.m if m is None else int(m)
    d = cache.eigvals[None, :]
    kt = cache.ktilde[None, :]
    shift = m * lam[:, None]
    denom = d + shift
    fit_sq = np.sum((d / denom * kt) ** 2, axis=1)
    resid_sq = np.sum((shift / denom * kt) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return LCurveTrace(lam, np.log(resid_sq), np.log(fit_sq / m))


def select_lambda_lcurve(trace: LCurveTrace, rtol: float = 1e-12) -> tuple[float, LCurveTrace]:
    """Pick the grid point farthest from the endpoint chord.

    Distances within ``rtol`` (relative to the chord length scale) of the
    maximum count as ties and resolve to the largest lambda.
    """
    if len(trace.lambdas) < 3:
        raise ValueError("L-curve selection needs at least 3 grid points")
    dist = trace.chord_distances()
    p = np.column_stack([trace.log_residual, trace.log_varproxy])
    scale = max(np.hypot(*(p[-1] - p[0])), 1.0)
    ties = np.flatnonzero(dist >= dist.max() - rtol * scale)
    idx = int(ties[-1])
    selected = replace(trace, selected_index=idx)
    return float(trace.lambdas[idx]), selected


def _tuned_weight(kernel: KernelSpec, train: np.ndarray, x0: np.ndarray, grid) -> tuple[WeightFunction, LCurveTrace]:
    m = train.shape[0]
    gram = gram_matrix(kernel, train)
    k0 = kernel_vector(kernel, train, x0)
    cache = spectral_precompute(gram, k0)
    lam, trace = select_lambda_lcurve(lcurve_points(cache, resolve_grid(grid, m), m))
    xi = _ridge_solve(gram, k0, m * lam)
    return _make_weight(kernel, train, x0, lam, xi, k0), trace


@dataclass(frozen=True, eq=False)
class CrossFitWeights:
    """Fold-specific localization weights and the evaluators the moment needs.

    ``labeled(x)`` gives the averaged weight used for labeled rows.
    ``unlabeled(x)`` gives the out-of-fold weight for the rows the weights were
    built on (two-fold mode) or the single weight (pooled / split modes).
    """

    mode: WeightMode
    fold_weights: tuple[WeightFunction, ...]
    traces: tuple[LCurveTrace, ...]
    fold_ids: np.ndarray | None = None
    n_build_rows: int = 0

    def averaged(self, x) -> np.ndarray:
        if self.mode is WeightMode.TWOFOLD:
            w1, w2 = self.fold_weights
            return 0.5 * (w1(x) + w2(x))
        return self.fold_weights[0](x)

    labeled = averaged

    def unlabeled(self, x) -> np.ndarray:
        x = as_covariates(x, "x")
        if self.mode is not WeightMode.TWOFOLD:
            return self.fold_weights[0](x)
        if x.shape[0] != self.fold_ids.size:
            raise ValueError(
                f"two-fold out-of-fold weights need the {self.fold_ids.size} rows the folds were built on, got {x.shape[0]}"
            )
        out = np.empty(x.shape[0])
        for m, w_other in ((0, self.fold_weights[1]), (1, self.fold_weights[0])):
            rows = self.fold_ids == m
            out[rows] = w_other(x[rows])
        return out

    @property
    def lambdas(self) -> tuple[float, ...]:
        return tuple(w.lam for w in self.fold_weights)

    @property
    def leverage(self) -> float:
        return float(np.mean([w.leverage for w in self.fold_weights]))


def split_folds(n_rows: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label (0 or 1) per row; fold 0 gets ``ceil(n/2)`` rows."""
    perm = rng.permutation(n_rows)
    ids = np.empty(n_rows, dtype=np.int64)
    half = (n_rows + 1) // 2
    ids[perm[:half]] = 0
    ids[perm[half:]] = 1
    return ids


def build_weights(
    kernel: KernelSpec,
    unlabeled,
    x0,
    grid=None,
    mode: WeightMode | str = WeightMode.TWOFOLD,
    labeled_covariates=None,
    seed: int | np.random.Generator | None = 0,
    fold_ids: Sequence[int] | None = None,
) -> CrossFitWeights:
    """Fit localization weights with L-curve-tuned ridge parameters.

    Parameters
    ----------
    kernel : KernelSpec
    unlabeled : array (N, d)
        Unlabeled covariates.
    x0 : array (d,)
        Test point.
    grid : LambdaGrid, array, or None
        Candidate ridge parameters. A :class:`LambdaGrid` is resolved against
        each fold's size; an explicit array is used as given.
    mode : {"twofold", "pooled", "split"}
        ``pooled`` stacks ``labeled_covariates`` (if given) on top of the
        unlabeled rows and fits one weight. ``split`` fits one weight on
        ``unlabeled`` only; scores are then evaluated on a separate block.
    seed : int or Generator
        Drives the random fold partition in two-fold mode.
    fold_ids : optional
        Explicit 0/1 fold labels, overriding the random partition.
    """
    mode = WeightMode(mode)
    unlabeled = as_covariates(unlabeled, "unlabeled")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n_rows = unlabeled.shape[0]
    if n_rows == 0:
        raise ValueError("unlabeled covariates are empty")
    if x0.size != unlabeled.shape[1]:
        raise ValueError(f"x0 has {x0.size} entries, covariates have {unlabeled.shape[1]} columns")

    if mode is WeightMode.TWOFOLD:
        if fold_ids is None:
            if n_rows < 6:
                raise ValueError(f"two-fold mode needs at least 6 unlabeled rows, got {n_rows}")
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            ids = split_folds(n_rows, rng)
        else:
            ids = np.asarray(fold_ids, dtype=np.int64).reshape(-1)
            if ids.size != n_rows or not np.all((ids == 0) | (ids == 1)):
                raise ValueError("fold_ids must be 0/1 labels, one per unlabeled row")
            if not (np.any(ids == 0) and np.any(ids == 1)):
                raise ValueError("both folds must be nonempty")
        fits = [_tuned_weight(kernel, unlabeled[ids == m], x0, grid) for m in (0, 1)]
        return CrossFitWeights(
            mode,
            tuple(w for w, _ in fits),
            tuple(t for _, t in fits),
            fold_ids=ids,
            n_build_rows=n_rows,
        )

    train = unlabeled
    if mode is WeightMode.POOLED and labeled_covariates is not None:
        lab = as_covariates(labeled_covariates, "labeled_covariates")
        train = np.vstack([lab, unlabeled])
    w, trace = _tuned_weight(kernel, train, x0, grid)
    return CrossFitWeights(mode, (w,), (trace,), n_build_rows=train.shape[0])
