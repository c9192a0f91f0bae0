import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlvi.conddens import (
    SIGMA_FLOOR,
    DensityConfig,
    DensitySizeError,
    DiscreteConditional,
    UnsupportedKindError,
    fit_gaussian_linear,
    fit_partition_density,
    normal_quadrature,
)


def _bivariate(rng, n, rho):
    z = rng.normal(size=n)
    x = rho * z + np.sqrt(1 - rho ** 2) * rng.normal(size=n)
    return x, z.reshape(-1, 1)


@pytest.mark.parametrize("m", [2, 3, 16, 256])
def test_quadrature_moments(m):
    q = normal_quadrature(m)
    assert q.mean() == pytest.approx(0.0, abs=1e-14)
    assert np.mean(q ** 2) == pytest.approx(1.0, abs=1e-13)
    np.testing.assert_allclose(q, -q[::-1], atol=1e-14)


def test_quadrature_needs_two_points():
    with pytest.raises(DensitySizeError):
        normal_quadrature(1)


def test_gaussian_fit_bivariate(rng):
    x, z = _bivariate(rng, 2000, 0.5)
    g = fit_gaussian_linear(x, z)
    assert g.beta[0] == pytest.approx(0.5, abs=0.05)
    assert g.sigma == pytest.approx(np.sqrt(0.75), abs=0.05)
    assert not g.degenerate


def test_gaussian_independent_values(rng):
    g = fit_gaussian_linear(rng.normal(size=3000), rng.normal(size=(3000, 1)))
    assert abs(g.beta[0]) < 0.06


def test_gaussian_degenerate_floor(rng):
    z = rng.normal(size=(50, 1))
    g = fit_gaussian_linear(2.0 + 3.0 * z[:, 0], z)
    assert g.degenerate and g.sigma == SIGMA_FLOOR


def test_gaussian_singular_design(rng):
    z = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(np.linalg.LinAlgError):
        fit_gaussian_linear(rng.normal(size=10), z)


def test_gaussian_support_moments_exact(rng):
    x, z = _bivariate(rng, 500, 0.3)
    g = fit_gaussian_linear(x, z)
    pts, w = g.support_points(np.array([1.2]), 64)
    mu = g.mean(np.array([1.2]))[0]
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w @ pts == pytest.approx(mu, abs=1e-12)
    assert w @ (pts - mu) ** 2 == pytest.approx(g.sigma ** 2, rel=1e-12)


def test_partition_constant_z_single_leaf(rng):
    v = rng.normal(size=200)
    p = fit_partition_density(v, np.ones((200, 1)), min_leaf=20)
    assert p.n_leaves == 1
    draws = p.sample(np.array([1.0]), np.random.default_rng(0), size=4000)
    assert set(np.unique(draws)) <= set(v)
    assert draws.mean() == pytest.approx(v.mean(), abs=0.1)


def test_partition_tracks_deterministic_values(rng):
    z = rng.uniform(-3, 3, size=(1000, 1))
    p = fit_partition_density(z[:, 0], z, min_leaf=25)
    s = np.random.default_rng(1)
    for zq in (-2.5, 0.1, 2.0):
        leaf = p.leaf_of(np.array([zq]))[0]
        vals = p.leaf_values[leaf]
        dev = np.mean(np.abs(p.sample(np.array([zq]), s, size=500) - zq))
        assert dev < 2 * (vals.max() - vals.min())


def test_partition_conditional_mean(rng):
    x, z = _bivariate(rng, 2000, 0.5)
    p = fit_partition_density(x, z, min_leaf=50)
    draws = p.sample(np.array([1.0]), np.random.default_rng(7), size=10_000)
    assert draws.mean() == pytest.approx(0.5, abs=0.1)


def test_partition_size_error(rng):
    with pytest.raises(DensitySizeError):
        fit_partition_density(rng.normal(size=30), rng.normal(size=(30, 1)), min_leaf=25)


def test_partition_leaves_respect_min_leaf(rng):
    x, z = _bivariate(rng, 600, 0.7)
    p = fit_partition_density(x, z, min_leaf=40)
    assert p.n_leaves > 1
    assert min(len(v) for v in p.leaf_values) >= 40


def test_partition_density_integrates_to_one(rng):
    x, z = _bivariate(rng, 400, 0.5)
    p = fit_partition_density(x, z, min_leaf=40)
    grid = np.linspace(-6, 6, 24001)
    dens = np.array([p.density(v, np.array([0.3])) for v in grid])
    assert np.all(dens >= 0)
    assert np.sum(dens) * (grid[1] - grid[0]) == pytest.approx(1.0, abs=0.01)


def test_partition_refuses_marginal(rng):
    x, z = _bivariate(rng, 100, 0.5)
    with pytest.raises(UnsupportedKindError, match="unstable"):
        fit_partition_density(x, z, 10).marginal_density(0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["gaussian", "partition"]),
       m=st.integers(2, 300))
def test_support_weights_and_reproducible_sampling(seed, kind, m):
    rng = np.random.default_rng(seed)
    x, z = _bivariate(rng, 120, 0.4)
    model = DensityConfig(kind, m, min_leaf=20).fit(x, z)
    pts, w = model.support_points_batch(rng.normal(size=(5, 1)), m)
    assert pts.shape == w.shape == (5, m)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(w >= 0)
    a = model.sample(np.array([0.2]), np.random.default_rng(seed), size=10)
    b = model.sample(np.array([0.2]), np.random.default_rng(seed), size=10)
    np.testing.assert_array_equal(a, b)
    assert model.density(float(x[0]), z[0]) >= 0


def test_discrete_conditional_lookup():
    dc = DiscreteConditional.from_points([1.0, 2.0, 1.0], [[0.0], [0.0], [1.0]], [0.2, 0.3, 0.5])
    v, p = dc.support_points(np.array([0.0]))
    np.testing.assert_allclose(p, [0.4, 0.6])
    assert dc.marginal_density(1.0) == pytest.approx(0.7)
    with pytest.raises(KeyError):
        dc.support_points(np.array([5.0]))


def test_unknown_density_kind():
    with pytest.raises(UnsupportedKindError):
        DensityConfig("kde").fit(np.zeros(10), np.zeros((10, 1)))
