"""Command-line entry point: ``ppci {infer,simulate,lcurve,budget}``.

Each subcommand reads a JSON config (``--config``); the shared flags override
config keys. Every key is validated before any computation or file output.

Exit status: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import DatasetError, DatasetSchema, load_covariates, load_dataset, standardize
from .design import BudgetProblem, optimal_allocation, two_stage_plan
from .estimators import (
    IdentifiabilityError,
    InferenceResult,
    Method,
    RootNotFoundError,
    ScoreSpec,
    infer_global_ppi,
    infer_labeled_only,
    infer_ppci,
    prepare_weights,
)
from .kernel import KernelFamily, KernelSpec
from .simulate import SimConfig, loocv_bandwidth, replicate, summarize, write_config_json, write_metrics_csv
from .weights import DegenerateLCurveError, LambdaGrid, WeightMode, resolve_grid

logger = logging.getLogger("ppci")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


class _NumericalFailure(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


_MISSING = object()


def _get(cfg: dict, key: str, default=_MISSING):
    if key in cfg and cfg[key] is not None:
        return cfg[key]
    if default is _MISSING:
        raise ConfigError(f"missing required key {key!r}")
    return default


def _check_keys(cfg: dict, allowed: set, where: str = "config") -> None:
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def _float_in(value, name, lo=None, hi=None, open_lo=False, open_hi=False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    if lo is not None and (v < lo or (open_lo and v == lo)):
        raise ConfigError(f"{name} out of range: {v}")
    if hi is not None and (v > hi or (open_hi and v == hi)):
        raise ConfigError(f"{name} out of range: {v}")
    return v


def _int_at_least(value, name, lo) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) and not (
        isinstance(value, float) and value.is_integer()
    ):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    v = int(value)
    if v < lo:
        raise ConfigError(f"{name} must be at least {lo}, got {v}")
    return v


def _parse_score(raw) -> ScoreSpec:
    raw = {"kind": raw} if isinstance(raw, str) else dict(raw)
    _check_keys(raw, {"kind", "tau", "h"}, "score")
    try:
        return ScoreSpec(raw.get("kind", "mean"), raw.get("tau"), raw.get("h"))
    except ValueError as exc:
        raise ConfigError(f"score: {exc}") from None


def _parse_kernel(raw, allow_auto=True) -> tuple[KernelFamily, float | None]:
    raw = dict(raw or {})
    _check_keys(raw, {"family", "bandwidth"}, "kernel")
    try:
        family = KernelFamily(raw.get("family", "matern52"))
    except ValueError:
        raise ConfigError(f"kernel family must be one of {[f.value for f in KernelFamily]}") from None
    bw = raw.get("bandwidth", "auto" if allow_auto else None)
    if bw == "auto" and allow_auto:
        return family, None
    if bw is None:
        raise ConfigError("kernel bandwidth is required")
    return family, _float_in(bw, "kernel bandwidth", 0, open_lo=True)


def _parse_grid(raw):
    if raw is None:
        return LambdaGrid()
    if isinstance(raw, list):
        vals = [_float_in(v, "lambda grid value", 0, open_lo=True) for v in raw]
        if len(vals) < 3 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("explicit lambda grid needs at least 3 strictly ascending values")
        return np.array(vals)
    _check_keys(raw, {"num", "lo", "hi"}, "lambda_grid")
    try:
        grid = LambdaGrid(_int_at_least(raw.get("num", 50), "lambda_grid.num", 3), raw.get("lo", 1e-4), raw.get("hi", 1e2))
    except ValueError as exc:
        raise ConfigError(f"lambda_grid: {exc}") from None
    return grid


def _parse_enum(enum_cls, value, name):
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigError(f"{name} must be one of {[e.value for e in enum_cls]}, got {value!r}") from None


def _parse_point(raw, name, dim=None) -> np.ndarray:
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(f"{name} must be a nonempty list of numbers")
    pt = np.array([_float_in(v, name) for v in raw])
    if dim is not None and pt.size != dim:
        raise ConfigError(f"{name} has {pt.size} entries, expected {dim}")
    return pt


def _out_dir(cfg) -> Path:
    return Path(_get(cfg, "out", "."))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------- infer

_INFER_KEYS = {
    "labeled", "unlabeled", "covariates", "response", "prediction", "delimiter", "x0", "score",
    "kernel", "bandwidth_grid", "lambda_grid", "alpha", "omega", "mode", "method", "seed",
    "split_rows", "standardize", "lcurve_csv", "out", "jobs",
}


def cmd_infer(cfg: dict) -> int:
    _check_keys(cfg, _INFER_KEYS)
    method = _parse_enum(Method, _get(cfg, "method", "ppci"), "method")
    mode = _parse_enum(WeightMode, _get(cfg, "mode", "twofold"), "mode")
    covariates = list(_get(cfg, "covariates"))
    x0 = _parse_point(_get(cfg, "x0"), "x0", len(covariates))
    spec = _parse_score(_get(cfg, "score", "mean"))
    family, bandwidth = _parse_kernel(_get(cfg, "kernel", {}))
    grid = _parse_grid(cfg.get("lambda_grid"))
    alpha = _float_in(_get(cfg, "alpha", 0.05), "alpha", 0, 1, True, True)
    omega = _float_in(_get(cfg, "omega", 1.0), "omega", 0, 1)
    seed = _int_at_least(_get(cfg, "seed", 0), "seed", 0)
    split_rows = cfg.get("split_rows")
    if mode is WeightMode.SPLIT:
        if split_rows is None:
            raise ConfigError("mode 'split' needs split_rows")
        split_rows = _int_at_least(split_rows, "split_rows", 1)
    delimiter = _get(cfg, "delimiter", ",")
    needs_pred = method is not Method.LABELED_ONLY
    prediction = cfg.get("prediction")
    if needs_pred and prediction is None:
        raise ConfigError(f"method {method.value} needs a 'prediction' column name")
    schema = DatasetSchema(tuple(covariates), _get(cfg, "response"), prediction if needs_pred else None, delimiter)
    out = _out_dir(cfg)

    lab = load_dataset(_get(cfg, "labeled"), schema, "labeled")
    if needs_pred:
        unl = load_dataset(_get(cfg, "unlabeled"), schema, "unlabeled")
        unl_x = unl.covariates
    else:
        unl_x = load_covariates(_get(cfg, "unlabeled"), covariates, delimiter)
        unl = None
    if _get(cfg, "standardize", False):
        lab_x, params = standardize(np.vstack([lab.covariates, unl_x]))
        n = lab.n
        lab = type(lab)(lab_x[:n], lab.y, lab.f)
        unl_x = lab_x[n:]
        if unl is not None:
            unl = type(unl)(unl_x, unl.f)
        x0 = params.apply(x0)

    if bandwidth is None:
        try:
            bandwidth = loocv_bandwidth(lab, cfg.get("bandwidth_grid"), family)
        except ZeroDivisionError as exc:
            raise _NumericalFailure("bandwidth selection", exc) from exc
    kernel = KernelSpec(family, bandwidth)

    weights = None
    try:
        if method is not Method.GLOBAL_PPI:
            weights = prepare_weights(kernel, unl_x, x0, mode, grid, seed, lab.covariates, split_rows)
        if method is Method.PPCI:
            res = infer_ppci(kernel, lab, unl, x0, spec, alpha, omega, mode, grid, seed, split_rows, weights)
        elif method is Method.LABELED_ONLY:
            res = infer_labeled_only(kernel, lab, unl_x, x0, spec, alpha, mode, grid, seed, split_rows, weights)
        else:
            res = infer_global_ppi(lab, unl, spec, alpha)
    except (IdentifiabilityError, RootNotFoundError, DegenerateLCurveError, np.linalg.LinAlgError) as exc:
        raise _NumericalFailure("estimation", exc) from exc

    res.diagnostics["bandwidth"] = bandwidth
    _write_json(out / "result.json", res.to_dict())
    if _get(cfg, "lcurve_csv", False) and weights is not None:
        for k, trace in enumerate(weights.traces, start=1):
            trace.to_csv(out / f"lcurve_fold{k}.csv")
    logger.info("theta_hat=%.6g CI=[%.6g, %.6g]", res.theta_hat, res.ci_lo, res.ci_hi)
    return EXIT_OK


# ------------------------------------------------------------------ simulate

_SIM_KEYS = {
    "n", "N", "test_points", "reps", "alpha", "score", "methods", "method", "seed", "sigma_eps",
    "sigma_f", "unlabeled_redraws", "kernel", "pilot_size", "lambda_grid", "mode", "omega",
    "split_train", "out", "jobs",
}


def cmd_simulate(cfg: dict) -> int:
    _check_keys(cfg, _SIM_KEYS)
    if "seed" not in cfg or cfg["seed"] is None:
        raise ConfigError("simulate requires an explicit 'seed'")
    family, bandwidth = _parse_kernel(_get(cfg, "kernel", {}))
    methods = cfg.get("methods")
    if methods is None:
        methods = [cfg["method"]] if cfg.get("method") else [m.value for m in Method]
    methods = [_parse_enum(Method, m, "methods entry") for m in methods]
    points = _get(cfg, "test_points", [[0.75, 0.75, 0.75]])
    if not isinstance(points, list) or not points:
        raise ConfigError("test_points must be a nonempty list of 3-vectors")
    points = [list(_parse_point(p, "test point", 3)) for p in points]
    try:
        sim = SimConfig(
            n=_int_at_least(_get(cfg, "n", 200), "n", 2),
            N=_int_at_least(_get(cfg, "N", 2000), "N", 2),
            test_points=points,
            reps=_int_at_least(_get(cfg, "reps", 100), "reps", 1),
            alpha=_float_in(_get(cfg, "alpha", 0.05), "alpha", 0, 1, True, True),
            spec=_parse_score(_get(cfg, "score", "mean")),
            methods=tuple(methods),
            seed=_int_at_least(cfg["seed"], "seed", 0),
            sigma_eps=_float_in(_get(cfg, "sigma_eps", 2.0), "sigma_eps", 0, open_lo=True),
            sigma_f=_float_in(_get(cfg, "sigma_f", 1.2), "sigma_f", 0, open_lo=True),
            unlabeled_redraws=_int_at_least(_get(cfg, "unlabeled_redraws", 5), "unlabeled_redraws", 1),
            kernel_family=family,
            bandwidth=bandwidth,
            pilot_size=_int_at_least(_get(cfg, "pilot_size", 200), "pilot_size", 3),
            grid=_parse_grid(cfg.get("lambda_grid")),
            mode=_parse_enum(WeightMode, _get(cfg, "mode", "twofold"), "mode"),
            omega=_float_in(_get(cfg, "omega", 1.0), "omega", 0, 1),
            split_train=cfg.get("split_train"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if sim.mode is WeightMode.POOLED:
        raise ConfigError("simulate supports modes 'twofold' and 'split'")
    jobs = _int_at_least(_get(cfg, "jobs", 1), "jobs", 1)
    out = _out_dir(cfg)

    try:
        records = replicate(sim, jobs)
    except (np.linalg.LinAlgError, ZeroDivisionError, DegenerateLCurveError) as exc:
        raise _NumericalFailure("replications", exc) from exc
    rows = summarize(sim, records)
    for row in rows:
        logger.info(
            "test point %d %s: coverage %.3f, mean width %.4g (%d reps, %d failed)",
            row.test_point, row.method.value, row.coverage, row.mean_width, row.reps_used, row.failed_reps,
        )
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "metrics.csv")
    write_config_json(sim, out / "metrics.config.json")
    return EXIT_OK


# -------------------------------------------------------------------- lcurve

_LCURVE_KEYS = {"unlabeled", "covariates", "delimiter", "x0", "toy", "kernel", "lambda_grid", "out", "seed", "jobs"}


def cmd_lcurve(cfg: dict) -> int:
    from .kernel import gram_matrix, kernel_vector
    from .weights import lcurve_points, select_lambda_lcurve, spectral_precompute

    _check_keys(cfg, _LCURVE_KEYS)
    family, bandwidth = _parse_kernel(_get(cfg, "kernel", {}), allow_auto=False)
    grid = _parse_grid(cfg.get("lambda_grid"))
    out = _out_dir(cfg)
    toy = cfg.get("toy")
    if toy is not None:
        toy = dict(toy)
        _check_keys(toy, {"m", "dim"}, "toy")
        m = _int_at_least(toy.get("m", 2000), "toy.m", 1)
        dim = _int_at_least(toy.get("dim", 10), "toy.dim", 1)
        rng = np.random.default_rng(_int_at_least(_get(cfg, "seed", 0), "seed", 0))
        x = rng.standard_normal((m, dim))
        x0 = rng.standard_normal(dim)
    else:
        covariates = list(_get(cfg, "covariates"))
        x0 = _parse_point(_get(cfg, "x0"), "x0", len(covariates))
        x = load_covariates(_get(cfg, "unlabeled"), covariates, _get(cfg, "delimiter", ","))
    kernel = KernelSpec(family, bandwidth)
    lam = resolve_grid(grid, x.shape[0])
    if lam.size < 3:
        raise ConfigError("L-curve selection needs at least 3 grid points")

    try:
        cache = spectral_precompute(gram_matrix(kernel, x), kernel_vector(kernel, x, x0))
        trace = lcurve_points(cache, lam, x.shape[0])
        selected, trace = select_lambda_lcurve(trace)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise _NumericalFailure("lcurve", exc) from exc
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "lcurve.csv")
    logger.info("selected lambda %.6g (index %d of %d)", selected, trace.selected_index, lam.size)
    return EXIT_OK


# -------------------------------------------------------------------- budget

_BUDGET_KEYS = {"sigma2_yf", "sigma2_f", "c_l", "c_u", "C", "pilot", "pilot_fraction", "remaining_budget", "out", "seed", "jobs"}


def cmd_budget(cfg: dict) -> int:
    _check_keys(cfg, _BUDGET_KEYS)
    c_l = _float_in(_get(cfg, "c_l"), "c_l", 0, open_lo=True)
    c_u = _float_in(_get(cfg, "c_u"), "c_u", 0, open_lo=True)
    out = _out_dir(cfg)
    try:
        if cfg.get("pilot") is not None:
            pilot = InferenceResult.from_dict(json.loads(Path(cfg["pilot"]).read_text()))
            if "remaining_budget" in cfg:
                remaining = _float_in(cfg["remaining_budget"], "remaining_budget", 0, open_lo=True)
            else:
                frac = _float_in(_get(cfg, "pilot_fraction", 0.1), "pilot_fraction", 0, 1, False, True)
                remaining = _float_in(_get(cfg, "C"), "C", 0, open_lo=True) * (1 - frac)
            alloc = two_stage_plan(pilot, c_l, c_u, remaining)
        else:
            problem = BudgetProblem(
                _float_in(_get(cfg, "sigma2_yf"), "sigma2_yf", 0),
                _float_in(_get(cfg, "sigma2_f"), "sigma2_f", 0),
                c_l,
                c_u,
                _float_in(_get(cfg, "C"), "C", 0, open_lo=True),
            )
            alloc = optimal_allocation(problem)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"pilot result: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _write_json(out / "allocation.json", alloc.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------- main

_COMMANDS = {"infer": cmd_infer, "simulate": cmd_simulate, "lcurve": cmd_lcurve, "budget": cmd_budget}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppci", description="Prediction-powered conditional inference.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--method", choices=[m.value for m in Method])
    common.add_argument("--omega", type=float)
    common.add_argument("--mode", choices=[m.value for m in WeightMode])
    common.add_argument("--alpha", type=float)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _load_config(args) -> dict:
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in ("seed", "jobs", "out", "method", "omega", "mode", "alpha"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def _setup_logging() -> None:
    level = os.environ.get("PPCI_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg)
    except _NumericalFailure as exc:
        logger.error("%s: numerical failure in %s", args.command, exc)
        return EXIT_NUMERICAL
    except (ConfigError, DatasetError, ValueError) as exc:
        logger.error("%s: validation failed: %s", args.command, exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
