import csv
import json
import math

import numpy as np
import pytest

from ppci.estimators import LabeledSample, Method, ScoreSpec
from ppci.kernel import KernelSpec
from ppci.simulate import (
    SimConfig,
    bias,
    eta,
    gen_simulation_data,
    loocv_bandwidth,
    loocv_errors,
    nadaraya_watson,
    oracle_target_nw,
    replicate,
    run_replications,
    stream,
    true_conditional_target,
    write_config_json,
    write_metrics_csv,
)

Z975 = 1.9599639845400536


def test_eta_origin():
    assert eta([[0.0, 0.0, 0.0]])[0] == pytest.approx(0.6, abs=1e-15)


def test_noise_free_limit():
    lab, unl, truth = gen_simulation_data(50, 30, seed=1, sigma_eps=0.0, sigma_f=0.0)
    np.testing.assert_allclose(lab.f, eta(lab.covariates) + bias(lab.covariates), rtol=0, atol=1e-14)
    np.testing.assert_allclose(unl.f, truth["eta_unlabeled"] + bias(unl.covariates), rtol=0, atol=1e-14)


def test_default_noise_level():
    lab, _, truth = gen_simulation_data(100_000, 1, seed=2)
    assert 1.98 <= np.std(lab.y - truth["eta_labeled"], ddof=1) <= 2.02


def test_generation_is_seeded():
    a = gen_simulation_data(20, 20, seed=5)
    b = gen_simulation_data(20, 20, seed=5)
    np.testing.assert_array_equal(a[0].y, b[0].y)
    np.testing.assert_array_equal(a[1].f, b[1].f)
    assert not np.array_equal(a[0].y, gen_simulation_data(20, 20, seed=6)[0].y)


def test_streams_are_independent():
    assert stream(0, 1, 0).random() != stream(0, 1, 1).random()
    assert stream(0, 1, 0).random() == stream(0, 1, 0).random()


class TestTargets:
    def test_mean(self):
        assert true_conditional_target([0.25, 0, 0]) == pytest.approx(1.85, abs=1e-14)

    def test_median_equals_mean(self):
        x0 = [0.75, 0.75, 0.75]
        assert true_conditional_target(x0, ScoreSpec.smoothed_quantile(0.5, 0.1)) == true_conditional_target(x0)

    def test_upper_quantile(self):
        x0 = [0.1, 0.2, 0.3]
        got = true_conditional_target(x0, ScoreSpec.smoothed_quantile(0.975, 0.1))
        assert got == pytest.approx(eta([x0])[0] + 2 * Z975, rel=1e-14)

    @pytest.mark.parametrize("x0", [[0.5, 0.5], [1.5, 0.5, 0.5]])
    def test_bad_points(self, x0):
        with pytest.raises(ValueError):
            true_conditional_target(x0)

    def test_no_log_odds_target(self):
        with pytest.raises(ValueError):
            true_conditional_target([0.5] * 3, ScoreSpec.log_odds())


class TestNadarayaWatson:
    def test_single_point(self):
        assert nadaraya_watson([[0.3]], [4.2], [[0.9]], KernelSpec("gaussian", 1.0))[0] == 4.2

    def test_constant(self, rng):
        x = rng.uniform(size=(10, 2))
        assert nadaraya_watson(x, np.full(10, -2.5), [[0.1, 0.1]], KernelSpec("matern52", 0.4))[0] == pytest.approx(-2.5, rel=1e-15)

    def test_hand_case(self):
        # gaussian h=1 at x=0 from points 0, 1, 2
        k = np.exp(-np.array([0.0, 0.5, 2.0]))
        expected = (k @ [1.0, 2.0, 4.0]) / k.sum()
        got = nadaraya_watson([[0.0], [1.0], [2.0]], [1.0, 2.0, 4.0], [[0.0]], KernelSpec("gaussian", 1.0))[0]
        assert got == pytest.approx(expected, rel=1e-12)

    def test_oracle_uses_median_distance(self, rng):
        x = rng.uniform(size=(15, 3))
        data = LabeledSample(x, rng.normal(size=15), np.zeros(15))
        x0 = np.full(3, 0.5)
        h = np.median(np.linalg.norm(x - x0, axis=1))
        expected = nadaraya_watson(x, data.y, [x0], KernelSpec("matern52", h))[0]
        assert oracle_target_nw(data, x0) == expected


class TestLoocv:
    def test_constant_response_ties_to_smallest(self, rng):
        pilot = LabeledSample(rng.uniform(size=(20, 3)), np.full(20, 1.5), np.zeros(20))
        assert loocv_bandwidth(pilot, [0.5, 0.1, 0.3]) == 0.1

    def test_interior_choice(self):
        gen = np.random.default_rng(4)
        x = gen.uniform(size=(200, 3))
        pilot = LabeledSample(x, eta(x) + 0.3 * gen.standard_normal(200), np.zeros(200))
        grid = np.logspace(-2, 1, 30)
        h = loocv_bandwidth(pilot, grid)
        assert grid[0] < h < grid[-1]

    def test_four_point_hand_instance(self):
        x = np.array([[0.0], [1.0], [2.0], [4.0]])
        y = np.array([0.0, 1.0, 3.0, 2.0])
        pilot = LabeledSample(x, y, np.zeros(4))
        grid = [1.0, 2.0]
        expected = []
        for h in grid:
            total = 0.0
            for i in range(4):
                others = [j for j in range(4) if j != i]
                k = np.array([math.exp(-((x[i, 0] - x[j, 0]) ** 2) / (2 * h * h)) for j in others])
                total += (y[i] - k @ y[others] / k.sum()) ** 2
            expected.append(total)
        np.testing.assert_allclose(loocv_errors(pilot, grid, "gaussian"), expected, rtol=1e-12)
        assert loocv_bandwidth(pilot, grid, "gaussian") == grid[int(np.argmin(expected))]

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            loocv_bandwidth(LabeledSample(np.zeros((2, 1)), [0, 1], [0, 0]))


def small_cfg(**kw):
    base = dict(n=40, N=80, reps=4, unlabeled_redraws=2, bandwidth=0.4, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_alpha_monotone_width():
    wide = run_replications(small_cfg(reps=1, alpha=0.01))
    narrow = run_replications(small_cfg(reps=1, alpha=0.5))
    for a, b in zip(wide, narrow):
        assert a.mean_width > b.mean_width


def test_near_perfect_predictor_sharpens_every_rep():
    recs = replicate(small_cfg(reps=6, sigma_f=1e-6, methods=("ppci", "labeled-only")))
    pp = [r for r in recs if r.method is Method.PPCI]
    lo = [r for r in recs if r.method is Method.LABELED_ONLY]
    assert all(a.width <= b.width for a, b in zip(pp, lo))


def test_records_and_rows():
    cfg = small_cfg(test_points=[[0.75] * 3, [0.25, 0.5, 0.5]])
    recs = replicate(cfg)
    assert len(recs) == 2 * 4 * 3
    assert [(r.test_point, r.rep) for r in recs[:6]] == [(0, 0)] * 3 + [(0, 1)] * 3
    rows = run_replications(cfg)
    assert len(rows) == 6
    assert all(r.reps_used + r.failed_reps == 4 for r in rows)
    assert all(0 <= r.coverage <= 1 for r in rows)


def test_determinism_and_prefix_stability():
    a = replicate(small_cfg())
    b = replicate(small_cfg())
    assert [r.theta_hat for r in a] == [r.theta_hat for r in b]
    longer = replicate(small_cfg(reps=6))
    assert [r.ci_lo for r in longer[: len(a)]] == [r.ci_lo for r in a]


def test_parallel_matches_serial():
    cfg = small_cfg()
    assert [r.theta_hat for r in replicate(cfg, jobs=2)] == [r.theta_hat for r in replicate(cfg)]


def test_loocv_bandwidth_default():
    rows = run_replications(small_cfg(bandwidth=None, pilot_size=60, reps=2))
    assert all(r.reps_used == 2 for r in rows)


@pytest.mark.parametrize("mode,kw", [("pooled", {}), ("split", {"split_train": 40})])
def test_modes_run(mode, kw):
    rows = run_replications(small_cfg(mode=mode, methods=("ppci",), **kw))
    assert rows[0].reps_used == 4


@pytest.mark.parametrize(
    "kw", [{"reps": 0}, {"sigma_f": 0.0}, {"n": 1}, {"alpha": 1.0}, {"bandwidth": -1.0}, {"mode": "split"}, {"test_points": [[0.5, 0.5]]}]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_cfg(**kw)


def test_outputs(tmp_path):
    cfg = small_cfg()
    rows = run_replications(cfg)
    write_metrics_csv(rows, tmp_path / "m.csv")
    write_config_json(cfg, tmp_path / "m.json")
    with open(tmp_path / "m.csv") as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["test_point_id", "x1", "x2", "x3", "method", "rmse", "coverage", "mean_width", "reps_used", "failed_reps"]
    assert [t["method"] for t in table] == ["ppci", "labeled-only", "global-ppi"]
    conf = json.loads((tmp_path / "m.json").read_text())
    assert conf["seed"] == 3 and conf["methods"][0] == "ppci"
    write_metrics_csv(run_replications(cfg), tmp_path / "m2.csv")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()
