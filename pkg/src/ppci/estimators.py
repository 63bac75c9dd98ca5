"""Estimating functions, the localized prediction-powered moment, and inference.

The localized moment for a scalar target ``theta`` at a test point is

    eta(theta) = 1/n sum_i wbar(X_i) [l(Y_i; theta) - omega l(f_i; theta)]
               + omega 1/N sum_u w_out(Xt_u) l(f_u; theta)

where ``wbar`` is the averaged weight and ``w_out`` the out-of-fold weight.
``omega = 1`` is the full prediction-powered moment, ``omega = 0`` the
labeled-only localized moment.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from statistics import NormalDist

import numpy as np
from scipy.special import expit

from .kernel import KernelSpec, as_covariates
from .weights import CrossFitWeights, WeightMode, build_weights

__all__ = [
    "IdentifiabilityError",
    "InferenceResult",
    "LabeledSample",
    "Method",
    "MomentInputs",
    "RootNotFoundError",
    "ScoreKind",
    "ScoreSpec",
    "UnlabeledSample",
    "confidence_interval",
    "empirical_moment",
    "estimate",
    "infer_global_ppi",
    "infer_labeled_only",
    "infer_ppci",
    "jacobian_hat",
    "localize",
    "normal_quantile",
    "prepare_weights",
    "score",
    "score_derivative",
    "solve_theta",
    "variance_hat",
]

JACOBIAN_FLOOR = 1e-12
BRACKET_LIMIT = 1e6


class IdentifiabilityError(ArithmeticError):
    """Jacobian (or closed-form denominator) too close to zero."""


class RootNotFoundError(ArithmeticError):
    """No root of the empirical moment could be located."""


class ScoreKind(str, enum.Enum):
    MEAN = "mean"
    LOG_ODDS = "log_odds"
    SMOOTHED_QUANTILE = "smoothed_quantile"
    # responses already mapped to Y* by the caller (expected shortfall)
    TRANSFORMED_MEAN = "transformed_mean"


@dataclass(frozen=True)
class ScoreSpec:
    kind: ScoreKind = ScoreKind.MEAN
    tau: float | None = None
    h: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScoreKind(self.kind))
        if self.kind is ScoreKind.SMOOTHED_QUANTILE:
            if self.tau is None or not 0 < self.tau < 1:
                raise ValueError(f"smoothed quantile needs tau in (0, 1), got {self.tau!r}")
            if self.h is None or not self.h > 0:
                raise ValueError(f"smoothed quantile needs a positive smoothing bandwidth, got {self.h!r}")

    @property
    def is_linear(self) -> bool:
        return self.kind in (ScoreKind.MEAN, ScoreKind.TRANSFORMED_MEAN)

    @classmethod
    def mean(cls) -> "ScoreSpec":
        return cls(ScoreKind.MEAN)

    @classmethod
    def log_odds(cls) -> "ScoreSpec":
        return cls(ScoreKind.LOG_ODDS)

    @classmethod
    def smoothed_quantile(cls, tau: float, h: float) -> "ScoreSpec":
        return cls(ScoreKind.SMOOTHED_QUANTILE, tau=tau, h=h)

    @classmethod
    def transformed_mean(cls) -> "ScoreSpec":
        return cls(ScoreKind.TRANSFORMED_MEAN)


def _check_values(spec: ScoreSpec, y: np.ndarray) -> None:
    if spec.kind is ScoreKind.LOG_ODDS and np.any((y < 0) | (y > 1)):
        raise ValueError("log-odds score needs responses and predictions in [0, 1]")


def _score(spec: ScoreSpec, y: np.ndarray, theta: float) -> np.ndarray:
    if spec.is_linear:
        return y - theta
    if spec.kind is ScoreKind.LOG_ODDS:
        return y - expit(theta)
    return spec.tau - expit((theta - y) / spec.h)


def _score_derivative(spec: ScoreSpec, y: np.ndarray, theta: float) -> np.ndarray:
    if spec.is_linear:
        return np.full(y.shape, -1.0)
    if spec.kind is ScoreKind.LOG_ODDS:
        p = expit(theta)
        return np.full(y.shape, -p * (1.0 - p))
    s = expit((theta - y) / spec.h)
    return -s * (1.0 - s) / spec.h


def score(spec: ScoreSpec, y, theta: float):
    """Estimating function ``l(y; theta)``; scalar in, scalar out."""
    arr = np.asarray(y, dtype=float)
    _check_values(spec, arr)
    out = _score(spec, arr, float(theta))
    return float(out) if out.ndim == 0 else out


def score_derivative(spec: ScoreSpec, y, theta: float):
    arr = np.asarray(y, dtype=float)
    _check_values(spec, arr)
    out = _score_derivative(spec, arr, float(theta))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class LabeledSample:
    covariates: np.ndarray
    y: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        x = as_covariates(self.covariates, "labeled covariates")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if not (x.shape[0] == y.size == f.size):
            raise ValueError(f"labeled sample sizes disagree: X {x.shape[0]}, Y {y.size}, f {f.size}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(f))):
            raise ValueError("labeled responses/predictions must be finite")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "f", f)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True, eq=False)
class UnlabeledSample:
    covariates: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        x = as_covariates(self.covariates, "unlabeled covariates")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if x.shape[0] != f.size:
            raise ValueError(f"unlabeled sample sizes disagree: X {x.shape[0]}, f {f.size}")
        if not np.all(np.isfinite(f)):
            raise ValueError("unlabeled predictions must be finite")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "f", f)

    @property
    def N(self) -> int:
        return self.f.size


@dataclass(frozen=True, eq=False)
class MomentInputs:
    """Weights already evaluated at every row, plus responses and predictions."""

    w_lab: np.ndarray
    y: np.ndarray
    f_lab: np.ndarray
    w_unl: np.ndarray
    f_unl: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def N(self) -> int:
        return self.f_unl.size


def localize(w: CrossFitWeights, lab: LabeledSample, unl: UnlabeledSample) -> MomentInputs:
    return MomentInputs(
        w_lab=w.labeled(lab.covariates),
        y=lab.y,
        f_lab=lab.f,
        w_unl=w.unlabeled(unl.covariates),
        f_unl=unl.f,
    )


def _check_omega(omega: float) -> float:
    omega = float(omega)
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    return omega


def _moment(inp: MomentInputs, spec: ScoreSpec, theta: float, omega: float) -> float:
    lab = inp.w_lab * (_score(spec, inp.y, theta) - omega * _score(spec, inp.f_lab, theta))
    unl = omega * (inp.w_unl * _score(spec, inp.f_unl, theta))
    return float(np.mean(lab) + np.mean(unl))


def _jacobian(inp: MomentInputs, spec: ScoreSpec, theta: float, omega: float) -> float:
    lab = inp.w_lab * (_score_derivative(spec, inp.y, theta) - omega * _score_derivative(spec, inp.f_lab, theta))
    unl = omega * (inp.w_unl * _score_derivative(spec, inp.f_unl, theta))
    return float(np.mean(lab) + np.mean(unl))


def _validate_inputs(inp: MomentInputs, spec: ScoreSpec) -> None:
    if inp.n == 0 or inp.N == 0:
        raise ValueError("need at least one labeled and one unlabeled row")
    if inp.w_lab.size != inp.n or inp.f_lab.size != inp.n or inp.w_unl.size != inp.N:
        raise ValueError("moment inputs have inconsistent lengths")
    _check_values(spec, inp.y)
    _check_values(spec, inp.f_lab)
    _check_values(spec, inp.f_unl)


def _closed_form(inp: MomentInputs, omega: float) -> float:
    num = np.mean(inp.w_lab * (inp.y - omega * inp.f_lab)) + omega * np.mean(inp.w_unl * inp.f_unl)
    den = (1.0 - omega) * np.mean(inp.w_lab) + omega * np.mean(inp.w_unl)
    if abs(den) < JACOBIAN_FLOOR:
        raise IdentifiabilityError(f"closed-form denominator {den:.3e} is below {JACOBIAN_FLOOR}")
    return float(num / den)


def _initial_guess(inp: MomentInputs, spec: ScoreSpec, omega: float) -> float:
    try:
        theta0 = _closed_form(inp, omega)
    except IdentifiabilityError:
        theta0 = float(np.mean(inp.y))
    if spec.kind is ScoreKind.LOG_ODDS:
        p = min(max(theta0, 1e-6), 1 - 1e-6)
        theta0 = math.log(p / (1 - p))
    return theta0 if math.isfinite(theta0) else 0.0


def _newton_root(g, dg, theta0: float, tol: float, max_iter: int = 100) -> tuple[float, int] | None:
    """Damped Newton; returns None when it stalls so the caller can bracket."""
    theta, val = theta0, g(theta0)
    for it in range(1, max_iter + 1):
        if abs(val) <= tol:
            return theta, it - 1
        slope = dg(theta)
        if not math.isfinite(slope) or abs(slope) < JACOBIAN_FLOOR:
            return None
        step = val / slope
        for _ in range(30):
            cand = theta - step
            cval = g(cand)
            if math.isfinite(cval) and abs(cval) < abs(val):
                break
            step *= 0.5
        else:
            return None
        theta, val = cand, cval
    return (theta, max_iter) if abs(val) <= tol else None


def _bracket_bisect(g, theta0: float, tol: float) -> tuple[float, int]:
    g0 = g(theta0)
    lo = hi = None
    for k in range(21):
        r = 2.0**k
        for cand in (theta0 - r, theta0 + r):
            cand = min(max(cand, -BRACKET_LIMIT), BRACKET_LIMIT)
            gc = g(cand)
            if gc == 0:
                return cand, k
            if np.sign(gc) != np.sign(g0):
                lo, hi = sorted((theta0, cand))
                break
        if lo is not None:
            break
    if lo is None:
        raise RootNotFoundError(f"no sign change of the moment found within [{-BRACKET_LIMIT:g}, {BRACKET_LIMIT:g}]")
    glo = g(lo)
    it = 0
    while True:
        it += 1
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol or mid in (lo, hi):
            return mid, it
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi = mid


def _solve(inp: MomentInputs, spec: ScoreSpec, omega: float, force_newton: bool = False) -> tuple[float, int]:
    if spec.is_linear and not force_newton:
        return _closed_form(inp, omega), 0

    def g(t):
        return _moment(inp, spec, t, omega)

    def dg(t):
        return _jacobian(inp, spec, t, omega)

    tol = 1e-10 * (1.0 + abs(g(0.0)))
    theta0 = _initial_guess(inp, spec, omega)
    found = _newton_root(g, dg, theta0, tol)
    if found is not None:
        return found
    return _bracket_bisect(g, theta0, tol)


def _variances(inp: MomentInputs, spec: ScoreSpec, theta: float, omega: float) -> tuple[float, float, float]:
    if inp.n < 2 or inp.N < 2:
        raise ValueError("variance estimation needs n >= 2 and N >= 2")
    zeta_lab = inp.w_lab * (_score(spec, inp.y, theta) - omega * _score(spec, inp.f_lab, theta))
    zeta_unl = omega * (inp.w_unl * _score(spec, inp.f_unl, theta))
    s_yf = float(np.var(zeta_lab, ddof=1))
    s_f = float(np.var(zeta_unl, ddof=1))
    return s_yf, s_f, s_yf / inp.n + s_f / inp.N


def empirical_moment(w, lab, unl, spec: ScoreSpec, theta: float, omega: float = 1.0) -> float:
    inp = w if isinstance(w, MomentInputs) else localize(w, lab, unl)
    _validate_inputs(inp, spec)
    return _moment(inp, spec, float(theta), _check_omega(omega))


def solve_theta(w, lab, unl, spec: ScoreSpec, omega: float = 1.0, force_newton: bool = False) -> tuple[float, int]:
    """Root of the localized moment and the number of iterations used.

    Linear scores use the closed form unless ``force_newton`` is set.
    """
    inp = w if isinstance(w, MomentInputs) else localize(w, lab, unl)
    _validate_inputs(inp, spec)
    return _solve(inp, spec, _check_omega(omega), force_newton)


def jacobian_hat(w, lab, unl, spec: ScoreSpec, theta: float, omega: float = 1.0) -> float:
    inp = w if isinstance(w, MomentInputs) else localize(w, lab, unl)
    _validate_inputs(inp, spec)
    return _jacobian(inp, spec, float(theta), _check_omega(omega))


def variance_hat(w, lab, unl, spec: ScoreSpec, theta: float, omega: float = 1.0) -> tuple[float, float, float]:
    """``(sigma2_yf, sigma2_f, V)`` from the labeled and unlabeled score contributions."""
    inp = w if isinstance(w, MomentInputs) else localize(w, lab, unl)
    _validate_inputs(inp, spec)
    return _variances(inp, spec, float(theta), _check_omega(omega))


_STD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    """Standard-normal quantile (Wichura's AS241 rational approximation, via the stdlib)."""
    return _STD_NORMAL.inv_cdf(p)


def confidence_interval(theta: float, variance: float, jacobian: float, alpha: float) -> tuple[float, float]:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if abs(jacobian) == 0:
        raise IdentifiabilityError("jacobian is zero")
    half = normal_quantile(1 - alpha / 2) * math.sqrt(variance) / abs(jacobian)
    return theta - half, theta + half


class Method(str, enum.Enum):
    PPCI = "ppci"
    LABELED_ONLY = "labeled-only"
    GLOBAL_PPI = "global-ppi"


@dataclass
class InferenceResult:
    theta_hat: float
    jacobian: float
    sigma2_yf: float
    sigma2_f: float
    variance: float
    ci_lo: float
    ci_hi: float
    alpha: float
    method: Method
    omega: float
    n: int
    N: int
    lambda_fold1: float | None = None
    lambda_fold2: float | None = None
    leverage: float | None = None
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.ci_hi - self.ci_lo

    def covers(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi

    def to_dict(self) -> dict:
        out = asdict(self)
        out["method"] = Method(self.method).value
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceResult":
        data = dict(data)
        data["method"] = Method(data["method"])
        return cls(**data)


def estimate(
    inp: MomentInputs,
    spec: ScoreSpec,
    alpha: float = 0.05,
    omega: float = 1.0,
    method: Method | str = Method.PPCI,
    weights: CrossFitWeights | None = None,
) -> InferenceResult:
    """Root, Jacobian, variance and interval from pre-evaluated weights."""
    omega = _check_omega(omega)
    _validate_inputs(inp, spec)
    theta, iters = _solve(inp, spec, omega)
    jac = _jacobian(inp, spec, theta, omega)
    if not abs(jac) >= JACOBIAN_FLOOR:
        raise IdentifiabilityError(f"|jacobian| = {abs(jac):.3e} is below {JACOBIAN_FLOOR}")
    s_yf, s_f, var = _variances(inp, spec, theta, omega)
    lo, hi = confidence_interval(theta, var, jac, alpha)
    res = InferenceResult(
        theta_hat=theta,
        jacobian=jac,
        sigma2_yf=s_yf,
        sigma2_f=s_f,
        variance=var,
        ci_lo=lo,
        ci_hi=hi,
        alpha=float(alpha),
        method=Method(method),
        omega=omega,
        n=inp.n,
        N=inp.N,
        iterations=iters,
    )
    if weights is not None:
        lams = weights.lambdas
        res.lambda_fold1 = lams[0]
        res.lambda_fold2 = lams[1] if len(lams) > 1 else None
        res.leverage = weights.leverage
        res.diagnostics["mode"] = weights.mode.value
    return res


def prepare_weights(kernel, unl_covariates, x0, mode, grid=None, seed=0, lab_covariates=None, split_rows=None):
    """Build the weights ``infer_ppci`` / ``infer_labeled_only`` would build for these arguments."""
    mode = WeightMode(mode)
    if mode is WeightMode.SPLIT:
        if split_rows is None:
            raise ValueError("split mode needs the number of weight-training rows")
        rows = np.asarray(unl_covariates)
        train, _ = _split_rows(rows.shape[0], split_rows, seed)
        return build_weights(kernel, rows[train], x0, grid, mode)
    return build_weights(kernel, unl_covariates, x0, grid, mode, labeled_covariates=lab_covariates, seed=seed)


def _split_rows(n_rows: int, n_train: int, seed) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < n_train < n_rows - 1:
        raise ValueError(f"split mode needs 0 < training rows < {n_rows - 1}, got {n_train}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_rows)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def infer_ppci(
    kernel: KernelSpec,
    lab: LabeledSample,
    unl: UnlabeledSample,
    x0,
    spec: ScoreSpec = ScoreSpec(),
    alpha: float = 0.05,
    omega: float = 1.0,
    mode: WeightMode | str = WeightMode.TWOFOLD,
    grid=None,
    seed: int = 0,
    split_rows: int | None = None,
    weights: CrossFitWeights | None = None,
) -> InferenceResult:
    """Prediction-powered conditional inference at ``x0``.

    In ``split`` mode, ``split_rows`` unlabeled rows (seeded choice) train the
    weight and the remaining rows enter the moment.
    """
    mode = WeightMode(mode)
    if weights is None:
        weights = prepare_weights(kernel, unl.covariates, x0, mode, grid, seed, lab.covariates, split_rows)
    eval_unl = unl
    if mode is WeightMode.SPLIT:
        _, held = _split_rows(unl.N, split_rows, seed)
        eval_unl = UnlabeledSample(unl.covariates[held], unl.f[held])
    return estimate(localize(weights, lab, eval_unl), spec, alpha, omega, Method.PPCI, weights)


def infer_labeled_only(
    kernel: KernelSpec,
    lab: LabeledSample,
    unl_covariates,
    x0,
    spec: ScoreSpec = ScoreSpec(),
    alpha: float = 0.05,
    mode: WeightMode | str = WeightMode.TWOFOLD,
    grid=None,
    seed: int = 0,
    split_rows: int | None = None,
    weights: CrossFitWeights | None = None,
) -> InferenceResult:
    """Localized labeled-only estimator using the same averaged weights as PPCI.

    Predictions are discarded; this equals the ``omega = 0`` moment.
    """
    unl_covariates = as_covariates(unl_covariates, "unlabeled covariates")
    mode = WeightMode(mode)
    if weights is None:
        weights = prepare_weights(kernel, unl_covariates, x0, mode, grid, seed, lab.covariates, split_rows)
    if mode is WeightMode.SPLIT:
        _, held = _split_rows(unl_covariates.shape[0], split_rows, seed)
        unl_covariates = unl_covariates[held]
    blank_lab = LabeledSample(lab.covariates, lab.y, np.zeros(lab.n))
    blank_unl = UnlabeledSample(unl_covariates, np.zeros(unl_covariates.shape[0]))
    return estimate(localize(weights, blank_lab, blank_unl), spec, alpha, 0.0, Method.LABELED_ONLY, weights)


def infer_global_ppi(lab: LabeledSample, unl: UnlabeledSample, spec: ScoreSpec = ScoreSpec(), alpha: float = 0.05) -> InferenceResult:
    """Classical (unlocalized) prediction-powered inference: all weights equal one."""
    inp = MomentInputs(np.ones(lab.n), lab.y, lab.f, np.ones(unl.N), unl.f)
    return estimate(inp, spec, alpha, 1.0, Method.GLOBAL_PPI)
