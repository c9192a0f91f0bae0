import numpy as np
import pytest

from tlvi.learners import (
    LearnerConfig,
    LearnerParameterError,
    SingularDesignError,
    fit_knn,
    fit_ridge,
    fit_without_x,
)
from tlvi.sim import DgpSpec, generate

from .conftest import make_dataset


def test_ridge_recovers_noiseless_slope(rng):
    x = rng.normal(size=50)
    f = fit_ridge(make_dataset(5 * x, x, rng.normal(size=(50, 1))), penalty=0.0)
    assert f.coef[0] == pytest.approx(5.0, abs=1e-8)


def test_ridge_large_penalty_gives_mean(rng):
    x, z = rng.normal(size=40), rng.normal(size=(40, 1))
    y = 3 * x + 1 + rng.normal(size=40)
    f = fit_ridge(make_dataset(y, x, z), penalty=1e12)
    assert np.max(np.abs(f.coef)) < 1e-9
    np.testing.assert_allclose(f.predict(x, z), y.mean(), atol=1e-8)


def test_ridge_slope_on_dgp():
    d = generate(DgpSpec(n=500, rho=0.0, seed=11))
    assert fit_ridge(d).coef[0] == pytest.approx(5.0, abs=0.2)


def test_ridge_singular_at_zero_penalty(rng):
    x = rng.normal(size=20)
    with pytest.raises(SingularDesignError, match="penalty"):
        fit_ridge(make_dataset(x, x, x.reshape(-1, 1)), penalty=0.0)


def test_knn_full_k_is_mean(rng):
    x, z = rng.normal(size=30), rng.normal(size=(30, 1))
    y = rng.normal(size=30)
    f = fit_knn(make_dataset(y, x, z), k=30)
    np.testing.assert_allclose(f.predict(rng.normal(size=5), rng.normal(size=(5, 1))), y.mean())


def test_knn_one_neighbour_interpolates(rng):
    x, z = rng.normal(size=30), rng.normal(size=(30, 1))
    y = rng.normal(size=30)
    f = fit_knn(make_dataset(y, x, z), k=1)
    np.testing.assert_array_equal(f.predict(x, z), y)


def test_knn_ties_use_lowest_row():
    x = np.array([0.0, 0.0, 1.0, 2.0])
    y = np.array([10.0, 20.0, 30.0, 40.0])
    f = fit_knn(make_dataset(y, x), k=1)
    assert f.predict(0.0, np.zeros(0)) == 10.0


def test_knn_in_sample_rmse():
    d = generate(DgpSpec(n=500, rho=0.0, noise_sd=0.0, seed=5))
    f = fit_knn(d, k=10)
    assert np.sqrt(np.mean((f.predict(d.x, d.z) - d.y) ** 2)) < 1.0


def test_knn_k_out_of_range(rng):
    d = make_dataset(rng.normal(size=10), rng.normal(size=10))
    for k in (0, 11):
        with pytest.raises(LearnerParameterError):
            fit_knn(d, k=k)


def test_without_x_independent_z():
    d = generate(DgpSpec(n=2000, rho=0.0, seed=3))
    g = fit_without_x(d)
    pred = g.predict(d.x, d.z)
    assert np.abs(pred).max() < 0.5
    assert np.mean((d.y - pred) ** 2) == pytest.approx(26.0, rel=0.1)


def test_without_x_duplicate_column(rng):
    x = rng.normal(size=100)
    g = fit_without_x(make_dataset(5 * x + 0.01 * rng.normal(size=100), x, x.reshape(-1, 1)))
    assert g.coef[0] == pytest.approx(5.0, abs=0.01)
    assert not g.uses_x


def test_without_x_knn_full_k(rng):
    d = make_dataset(rng.normal(size=20), rng.normal(size=20), rng.normal(size=(20, 2)))
    g = fit_without_x(d, "knn", k=20)
    np.testing.assert_allclose(g.predict(d.x, d.z), d.y.mean())


def test_prediction_ignores_x_when_x_free(rng):
    d = make_dataset(rng.normal(size=20), rng.normal(size=20), rng.normal(size=(20, 1)))
    g = LearnerConfig("knn", k=3).fit(d, uses_x=False)
    z = rng.normal(size=(4, 1))
    np.testing.assert_array_equal(g.predict(np.zeros(4), z), g.predict(np.ones(4) * 9, z))


def test_predict_is_pure(linear_data):
    f = fit_ridge(linear_data)
    a = f.predict(linear_data.x, linear_data.z)
    np.testing.assert_array_equal(a, f.predict(linear_data.x, linear_data.z))
    assert np.all(np.isfinite(a))
