import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ppci.data import (
    DatasetError,
    DatasetSchema,
    StandardizationParams,
    load_covariates,
    load_dataset,
    sample_pools,
    save_dataset,
    standardize,
)
from ppci.estimators import LabeledSample, UnlabeledSample

SCHEMA = DatasetSchema(("x1", "x2"), "y", "f")


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_row_csv(tmp_path):
    p = write(tmp_path, "x1,x2,y,f\n0.5,1,2.25,2\n-1,3e-2,0,0.125\n")
    lab = load_dataset(p, SCHEMA)
    np.testing.assert_array_equal(lab.covariates, [[0.5, 1.0], [-1.0, 0.03]])
    np.testing.assert_array_equal(lab.y, [2.25, 0.0])
    np.testing.assert_array_equal(lab.f, [2.0, 0.125])


def test_column_order_and_extras(tmp_path):
    p = write(tmp_path, "f,id,y,x2,x1\n1,a,2,3,4\n")
    lab = load_dataset(p, SCHEMA)
    np.testing.assert_array_equal(lab.covariates, [[4.0, 3.0]])
    assert lab.y[0] == 2.0 and lab.f[0] == 1.0


def test_nan_names_row(tmp_path):
    p = write(tmp_path, "x1,x2,y,f\n1,1,1,1\nNaN,1,1,1\n")
    with pytest.raises(DatasetError, match="row 3"):
        load_dataset(p, SCHEMA)


def test_unparseable_names_column(tmp_path):
    p = write(tmp_path, "x1,x2,y,f\n1,1,oops,1\n")
    with pytest.raises(DatasetError, match="'y'"):
        load_dataset(p, SCHEMA)


@pytest.mark.parametrize("text", ["", "x1,x2,y,f\n", "x1,y,f\n1,2,3\n"])
def test_structural_errors(tmp_path, text):
    with pytest.raises(DatasetError):
        load_dataset(write(tmp_path, text), SCHEMA)


def test_labeled_without_predictions(tmp_path):
    p = write(tmp_path, "x1,x2,y\n1,2,3\n4,5,6\n")
    lab = load_dataset(p, DatasetSchema(("x1", "x2"), "y"))
    np.testing.assert_array_equal(lab.f, [0.0, 0.0])


def test_unlabeled_needs_predictions(tmp_path):
    p = write(tmp_path, "x1,x2\n1,2\n")
    schema = DatasetSchema(("x1", "x2"))
    with pytest.raises(DatasetError):
        load_dataset(p, schema, role="unlabeled")
    unl = load_dataset(p, schema, role="unlabeled", predictions=[7.0])
    assert isinstance(unl, UnlabeledSample) and unl.f[0] == 7.0
    with pytest.raises(DatasetError):
        load_dataset(p, schema, role="unlabeled", predictions=[7.0, 8.0])


def test_load_covariates_ignores_missing_labels(tmp_path):
    p = write(tmp_path, "x1,x2,y\n1,2,\n3,4,\n")
    np.testing.assert_array_equal(load_covariates(p, ["x2"]), [[2.0], [4.0]])


def test_semicolon_delimiter(tmp_path):
    p = write(tmp_path, "x1;x2;y;f\n1;2;3;4\n")
    lab = load_dataset(p, DatasetSchema(("x1", "x2"), "y", "f", delimiter=";"))
    assert lab.n == 1


def test_schema_rejects_duplicates():
    with pytest.raises(ValueError):
        DatasetSchema(("x1", "y"), "y")
    with pytest.raises(ValueError):
        DatasetSchema(())


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(4)), elements=st.floats(-1e300, 1e300)))
def test_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("rt") / "rt.csv"
    lab = LabeledSample(arr[:, :2], arr[:, 2], arr[:, 3])
    save_dataset(path, lab, SCHEMA)
    back = load_dataset(path, SCHEMA)
    np.testing.assert_array_equal(back.covariates, lab.covariates)
    np.testing.assert_array_equal(back.y, lab.y)
    np.testing.assert_array_equal(back.f, lab.f)


def test_round_trip_unlabeled(tmp_path):
    unl = UnlabeledSample([[0.1, 0.2], [0.3, 0.4]], [1 / 3, 2 / 3])
    save_dataset(tmp_path / "u.csv", unl, SCHEMA)
    back = load_dataset(tmp_path / "u.csv", SCHEMA, role="unlabeled")
    np.testing.assert_array_equal(back.f, unl.f)


def test_standardize_hand_case():
    z, params = standardize(np.array([[0.0], [2.0]]))
    assert params.mean[0] == 1.0
    assert params.sd[0] == pytest.approx(np.sqrt(2), rel=1e-15)
    np.testing.assert_allclose(z[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-15)


def test_standardize_idempotent(rng):
    z, _ = standardize(rng.normal(3, 2, size=(50, 3)))
    z2, params = standardize(z)
    np.testing.assert_allclose(params.mean, 0, atol=1e-12)
    np.testing.assert_allclose(params.sd, 1, atol=1e-12)
    np.testing.assert_allclose(z2, z, atol=1e-12)


def test_standardize_constant_column(rng):
    x = np.c_[np.full(10, 4.0), rng.normal(size=10)]
    z, params = standardize(x)
    assert params.constant.tolist() == [True, False]
    np.testing.assert_array_equal(z[:, 0], x[:, 0])


def test_standardize_params_reuse_and_json(rng):
    x = rng.normal(size=(20, 2))
    _, params = standardize(x)
    back = StandardizationParams.from_json(params.to_json())
    point = np.array([0.3, -1.2])
    np.testing.assert_array_equal(back.apply(point), params.apply(point))
    np.testing.assert_array_equal(standardize(point, back)[0], params.apply(point))


def pool(rng, k=20, dup=0, x0=(0.5, 0.5)):
    x = rng.uniform(size=(k, 2))
    x[:dup] = x0
    return LabeledSample(x, np.arange(k, dtype=float), -np.arange(k, dtype=float))


def test_exact_pool_partition(rng):
    data = pool(rng)
    lab, unl = sample_pools(data, [9, 9], 8, 12, seed=1)
    used = np.sort(np.r_[lab.y, -unl.f])
    np.testing.assert_array_equal(used, np.arange(20))
    again = sample_pools(data, [9, 9], 8, 12, seed=1)
    np.testing.assert_array_equal(again[0].y, lab.y)
    np.testing.assert_array_equal(again[1].f, unl.f)


def test_duplicate_exclusion(rng):
    data = pool(rng, dup=5)
    lab, unl = sample_pools(data, [0.5, 0.5], 5, 10, seed=2)
    assert not np.any(np.all(np.r_[lab.covariates, unl.covariates] == 0.5, axis=1))
    with pytest.raises(DatasetError, match="15 rows"):
        sample_pools(data, [0.5, 0.5], 5, 11)
    lab, unl = sample_pools(data, [0.5, 0.5], 5, 15, exclude_duplicates=False)
    assert lab.n + unl.N == 20
