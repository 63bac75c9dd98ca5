"""Synthetic benchmark: data generation, oracle targets, bandwidth selection, replications.

Covariates are uniform on ``[0, 1]^3`` and

    Y = eta(X) + eps,          eps ~ N(0, sigma_eps^2)
    f(X) = Y + b(X) + xi,      xi  ~ N(0, sigma_f^2)

Randomness is drawn from Philox streams keyed by ``(seed, role, test point,
index)``, so a replication's draws do not depend on how many replications
are requested.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import (
    IdentifiabilityError,
    LabeledSample,
    Method,
    MomentInputs,
    RootNotFoundError,
    ScoreKind,
    ScoreSpec,
    UnlabeledSample,
    estimate,
    infer_global_ppi,
    normal_quantile,
)
from .kernel import KernelFamily, KernelSpec, as_covariates, cross_kernel
from .weights import LambdaGrid, WeightMode, build_weights

__all__ = [
    "MetricsRow",
    "ReplicationRecord",
    "SimConfig",
    "bias",
    "default_bandwidth_grid",
    "eta",
    "gen_simulation_data",
    "loocv_bandwidth",
    "nadaraya_watson",
    "oracle_target_nw",
    "replicate",
    "run_replications",
    "stream",
    "summarize",
    "true_conditional_target",
    "write_metrics_csv",
]

logger = logging.getLogger(__name__)

SIGMA_EPS = 2.0
SIGMA_F = 1.2

# stream roles
_PILOT, _UNLABELED, _LABELED, _FOLDS = 0, 1, 2, 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def eta(x) -> np.ndarray:
    x = as_covariates(x)
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    tau = 2 * np.pi
    return np.sin(tau * x1) + 0.6 * np.cos(tau * x2) + 0.4 * np.sin(tau * x3) + 0.25 * np.sin(tau * (x1 + x2))


def bias(x) -> np.ndarray:
    x = as_covariates(x)
    return 0.2 * ((x[:, 0] - 0.5) + 0.5 * np.sin(4 * np.pi * x[:, 1]) - 0.3 * (x[:, 2] - 0.5))


def _draw_x(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(k, 3))


def _draw_y(rng, x, sigma_eps):
    return eta(x) + sigma_eps * rng.standard_normal(x.shape[0])


def _draw_f(rng, x, y, sigma_f):
    return y + bias(x) + sigma_f * rng.standard_normal(x.shape[0])


def gen_simulation_data(n: int, N: int, seed: int | np.random.Generator = 0, sigma_eps: float = SIGMA_EPS, sigma_f: float = SIGMA_F):
    """Draw a labeled and an unlabeled sample.

    Returns ``(labeled, unlabeled, truths)`` where ``truths`` holds ``eta`` at
    both covariate sets and the hidden unlabeled responses.
    """
    if n < 1 or N < 1:
        raise ValueError("n and N must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), _LABELED)
    x = _draw_x(rng, n)
    y = _draw_y(rng, x, sigma_eps)
    f = _draw_f(rng, x, y, sigma_f)
    xt = _draw_x(rng, N)
    yt = _draw_y(rng, xt, sigma_eps)
    ft = _draw_f(rng, xt, yt, sigma_f)
    truths = {"eta_labeled": eta(x), "eta_unlabeled": eta(xt), "y_unlabeled": yt}
    return LabeledSample(x, y, f), UnlabeledSample(xt, ft), truths


def true_conditional_target(x0, spec: ScoreSpec = ScoreSpec(), sigma_eps: float = SIGMA_EPS) -> float:
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if x0.shape[1] != 3 or np.any((x0 < 0) | (x0 > 1)):
        raise ValueError("test point must lie in [0, 1]^3")
    base = float(eta(x0)[0])
    if spec.kind is ScoreKind.MEAN:
        return base
    if spec.kind is ScoreKind.SMOOTHED_QUANTILE:
        return base + sigma_eps * normal_quantile(spec.tau)
    raise ValueError(f"no analytic target for score kind {spec.kind.value!r} under this design")


def nadaraya_watson(x, y, x_eval, kernel: KernelSpec) -> np.ndarray:
    k = cross_kernel(kernel, x_eval, x)
    den = k.sum(axis=1)
    if np.any(den == 0):
        raise ZeroDivisionError("all kernel weights vanish at an evaluation point")
    return (k @ np.asarray(y, dtype=float)) / den


def oracle_target_nw(data: LabeledSample, x0, family: KernelFamily | str = KernelFamily.MATERN52) -> float:
    """Nadaraya-Watson value at ``x0`` with bandwidth = median distance to ``x0``.

    Covariates are expected to be standardized already.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    dist = np.linalg.norm(data.covariates - x0, axis=1)
    h = float(np.median(dist))
    if h == 0:
        # at least half the rows sit on x0; average those
        return float(np.mean(data.y[dist == 0]))
    return float(nadaraya_watson(data.covariates, data.y, x0, KernelSpec(family, h))[0])


def default_bandwidth_grid(x, num: int = 20, lo: float = 0.05, hi: float = 5.0) -> np.ndarray:
    from scipy.spatial.distance import pdist

    med = float(np.median(pdist(as_covariates(x))))
    if med == 0:
        raise ValueError("all pilot covariates coincide; cannot scale a bandwidth grid")
    return np.logspace(np.log10(lo * med), np.log10(hi * med), num)


def loocv_errors(pilot: LabeledSample, grid, family: KernelFamily | str = KernelFamily.MATERN52) -> np.ndarray:
    """Leave-one-out squared error of the Nadaraya-Watson fit per bandwidth (NaN if undefined)."""
    from scipy.spatial.distance import cdist

    x, y = pilot.covariates, pilot.y
    r = cdist(x, x)
    out = np.empty(len(grid))
    for k, h in enumerate(grid):
        kmat = KernelSpec(family, h).profile(r)
        np.fill_diagonal(kmat, 0.0)
        den = kmat.sum(axis=1)
        if np.any(den == 0):
            out[k] = np.nan
            continue
        out[k] = float(np.sum((y - kmat @ y / den) ** 2))
    return out


def loocv_bandwidth(pilot: LabeledSample, grid=None, family: KernelFamily | str = KernelFamily.MATERN52) -> float:
    """Bandwidth minimizing leave-one-out Nadaraya-Watson squared error; ties go to the smallest."""
    if pilot.n < 3:
        raise ValueError("LOOCV needs at least 3 pilot points")
    grid = default_bandwidth_grid(pilot.covariates) if grid is None else np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("bandwidth grid must be nonempty and positive")
    order = np.argsort(grid, kind="stable")
    grid = grid[order]
    err = loocv_errors(pilot, grid, family)
    if np.all(np.isnan(err)):
        raise ZeroDivisionError("leave-one-out denominators vanish for every bandwidth")
    best = np.nanmin(err)
    # rounding floor: a constant response leaves ~eps^2 residue, not exact zeros
    tol = 1e-12 * max(best, 1e-8 * float(np.sum(pilot.y**2)))
    return float(grid[np.flatnonzero(err <= best + tol)[0]])


@dataclass
class SimConfig:
    n: int = 200
    N: int = 2000
    test_points: list = field(default_factory=lambda: [[0.75, 0.75, 0.75]])
    reps: int = 100
    alpha: float = 0.05
    spec: ScoreSpec = field(default_factory=ScoreSpec)
    methods: tuple = (Method.PPCI, Method.LABELED_ONLY, Method.GLOBAL_PPI)
    seed: int = 0
    sigma_eps: float = SIGMA_EPS
    sigma_f: float = SIGMA_F
    unlabeled_redraws: int = 5
    kernel_family: KernelFamily = KernelFamily.MATERN52
    bandwidth: float | None = None  # None selects by LOOCV on a pilot sample
    pilot_size: int = 200
    grid: LambdaGrid = field(default_factory=LambdaGrid)
    mode: WeightMode = WeightMode.TWOFOLD
    omega: float = 1.0
    split_train: int | None = None  # weight-training rows in split mode

    def __post_init__(self):
        self.methods = tuple(Method(m) for m in self.methods)
        self.kernel_family = KernelFamily(self.kernel_family)
        self.mode = WeightMode(self.mode)
        self.test_points = [list(map(float, p)) for p in self.test_points]
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.unlabeled_redraws < 1:
            raise ValueError("unlabeled_redraws must be at least 1")
        if not (self.sigma_eps > 0 and self.sigma_f > 0):
            raise ValueError("noise levels must be positive")
        if self.n < 2 or self.N < 2:
            raise ValueError("need n >= 2 and N >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.mode is WeightMode.SPLIT and not (self.split_train and 0 < self.split_train < self.N):
            raise ValueError("split mode needs 0 < split_train < N")
        for p in self.test_points:
            if len(p) != 3:
                raise ValueError(f"test points must be 3-dimensional, got {p}")
        true_conditional_target(self.test_points[0], self.spec, self.sigma_eps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = {"kind": self.spec.kind.value, "tau": self.spec.tau, "h": self.spec.h}
        d["methods"] = [m.value for m in self.methods]
        d["kernel_family"] = self.kernel_family.value
        d["mode"] = self.mode.value
        d["grid"] = asdict(self.grid)
        return d


@dataclass
class ReplicationRecord:
    test_point: int
    rep: int
    method: Method
    truth: float
    theta_hat: float = float("nan")
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")
    variance: float = float("nan")
    jacobian: float = float("nan")
    sigma2_yf: float = float("nan")
    sigma2_f: float = float("nan")
    failed: bool = False

    @property
    def covered(self) -> bool:
        return self.ci_lo <= self.truth <= self.ci_hi

    @property
    def width(self) -> float:
        return self.ci_hi - self.ci_lo


@dataclass
class MetricsRow:
    test_point: int
    x0: tuple
    method: Method
    rmse: float
    coverage: float
    mean_width: float
    reps_used: int
    failed_reps: int


def _select_bandwidth(cfg: SimConfig, tp: int) -> float:
    if cfg.bandwidth is not None:
        return cfg.bandwidth
    rng = stream(cfg.seed, _PILOT, tp)
    x = _draw_x(rng, cfg.pilot_size)
    y = _draw_y(rng, x, cfg.sigma_eps)
    return loocv_bandwidth(LabeledSample(x, y, np.zeros(cfg.pilot_size)), family=cfg.kernel_family)


def _run_block(cfg: SimConfig, tp: int, block: int, h: float) -> list[ReplicationRecord]:
    x0 = np.asarray(cfg.test_points[tp])
    truth = true_conditional_target(x0, cfg.spec, cfg.sigma_eps)
    kernel = KernelSpec(cfg.kernel_family, h)
    n_train = cfg.split_train if cfg.mode is WeightMode.SPLIT else cfg.N
    xt = _draw_x(stream(cfg.seed, _UNLABELED, tp, block), n_train)
    weights = build_weights(
        kernel, xt, x0, cfg.grid, cfg.mode, seed=stream(cfg.seed, _FOLDS, tp, block)
    )
    # unlabeled covariates are fixed within a block, so their weights are too
    w_unl_fixed = weights.unlabeled(xt) if cfg.mode is not WeightMode.SPLIT else None

    records = []
    for rep in range(block, cfg.reps, cfg.unlabeled_redraws):
        rng = stream(cfg.seed, _LABELED, tp, rep)
        x = _draw_x(rng, cfg.n)
        y = _draw_y(rng, x, cfg.sigma_eps)
        f = _draw_f(rng, x, y, cfg.sigma_f)
        if cfg.mode is WeightMode.SPLIT:
            xe = _draw_x(rng, cfg.N - cfg.split_train)
            w_unl = weights.unlabeled(xe)
        else:
            xe, w_unl = xt, w_unl_fixed
        fe = _draw_f(rng, xe, _draw_y(rng, xe, cfg.sigma_eps), cfg.sigma_f)
        w_lab = weights.labeled(x)
        for method in cfg.methods:
            rec = ReplicationRecord(tp, rep, method, truth)
            try:
                if method is Method.PPCI:
                    res = estimate(MomentInputs(w_lab, y, f, w_unl, fe), cfg.spec, cfg.alpha, cfg.omega, method)
                elif method is Method.LABELED_ONLY:
                    zeros_lab, zeros_unl = np.zeros(cfg.n), np.zeros(w_unl.size)
                    res = estimate(MomentInputs(w_lab, y, zeros_lab, w_unl, zeros_unl), cfg.spec, cfg.alpha, 0.0, method)
                else:
                    res = infer_global_ppi(LabeledSample(x, y, f), UnlabeledSample(xe, fe), cfg.spec, cfg.alpha)
            except (IdentifiabilityError, RootNotFoundError, np.linalg.LinAlgError) as exc:
                logger.debug("replication %d (%s) failed: %s", rep, method.value, exc)
                rec.failed = True
            else:
                rec.theta_hat, rec.ci_lo, rec.ci_hi = res.theta_hat, res.ci_lo, res.ci_hi
                rec.variance, rec.jacobian = res.variance, res.jacobian
                rec.sigma2_yf, rec.sigma2_f = res.sigma2_yf, res.sigma2_f
            records.append(rec)
    return records


def _run_item(args):
    cfg, tp, block, h = args
    return _run_block(cfg, tp, block, h)


def replicate(cfg: SimConfig, jobs: int = 1) -> list[ReplicationRecord]:
    """All replication records, ordered by (test point, replication, method)."""
    items = []
    for tp in range(len(cfg.test_points)):
        h = _select_bandwidth(cfg, tp)
        logger.info("test point %d: bandwidth %.4g", tp, h)
        for block in range(min(cfg.unlabeled_redraws, cfg.reps)):
            items.append((cfg, tp, block, h))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_item, items))
    else:
        chunks = [_run_item(it) for it in items]
    order = {m: k for k, m in enumerate(cfg.methods)}
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.test_point, r.rep, order[r.method]))
    return records


def summarize(cfg: SimConfig, records: list[ReplicationRecord]) -> list[MetricsRow]:
    rows = []
    for tp, x0 in enumerate(cfg.test_points):
        for method in cfg.methods:
            sel = [r for r in records if r.test_point == tp and r.method is method]
            ok = [r for r in sel if not r.failed]
            failed = len(sel) - len(ok)
            if ok:
                err = np.array([r.theta_hat - r.truth for r in ok])
                rmse = float(np.sqrt(np.mean(err**2)))
                coverage = sum(r.covered for r in ok) / len(ok)
                width = float(np.mean([r.width for r in ok]))
            else:
                rmse = coverage = width = float("nan")
            rows.append(MetricsRow(tp, tuple(x0), method, rmse, coverage, width, len(ok), failed))
    return rows


def run_replications(cfg: SimConfig, jobs: int = 1) -> list[MetricsRow]:
    return summarize(cfg, replicate(cfg, jobs))


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["test_point_id", "x1", "x2", "x3", "method", "rmse", "coverage", "mean_width", "reps_used", "failed_reps"])
        for r in rows:
            writer.writerow(
                [r.test_point, *map(repr, r.x0), r.method.value, repr(r.rmse), repr(r.coverage), repr(r.mean_width), r.reps_used, r.failed_reps]
            )


def write_config_json(cfg: SimConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
