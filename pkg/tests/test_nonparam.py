import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipwcate.kernels import KernelSpec, univariate
from ipwcate.nonparam import SmootherConfig, kde, kernel_matrix, nw_regress

from conftest import brute_nw


def cfg(order=2, dim=1, h=1.0, loo=False):
    return SmootherConfig(KernelSpec(order, dim), h, leave_one_out=loo)


class TestConfig:
    def test_bandwidth_positive(self):
        with pytest.raises(ValueError):
            SmootherConfig(KernelSpec(2), 0.0)

    def test_guard_nonnegative(self):
        with pytest.raises(ValueError):
            SmootherConfig(KernelSpec(2), 1.0, denom_guard=-1.0)


class TestNadarayaWatson:
    def test_constant_response(self, rng):
        x = rng.normal(size=40)
        out = nw_regress(np.full(40, 3.5), x, np.linspace(-1, 1, 7), cfg(order=4, h=0.5))
        np.testing.assert_allclose(out, 3.5, rtol=1e-10)

    def test_three_point_instance(self):
        y, x = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.0, 1.0])
        num, den = brute_nw(y, x, 0.0, 2, 1.0)
        out = nw_regress(y, x, [0.0], cfg())
        np.testing.assert_allclose(out, num / (den + 1e-12), atol=1e-12)
        np.testing.assert_allclose(out, 2.0, atol=1e-12)

    def test_single_point(self):
        np.testing.assert_allclose(nw_regress([4.2], [0.3], [0.3], cfg()), 4.2, atol=1e-10)

    @given(st.integers(2, 5), st.sampled_from([2, 4, 6]), st.floats(0.3, 3.0),
           st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_brute_force_small_instances(self, n, order, h, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=n), r.normal(size=n)
        z = r.normal(size=3)
        out = nw_regress(y, x, z, cfg(order, h=h), return_info=True)
        for j, zj in enumerate(z):
            num, den = brute_nw(y, x, zj, order, h)
            np.testing.assert_allclose(out.weight_sums[j], den, atol=1e-12)
            np.testing.assert_allclose(out.values[j] * (den + 1e-12), num, atol=1e-12)

    def test_leave_one_out_equals_deletion(self, rng):
        x, y = rng.normal(size=12), rng.normal(size=12)
        c = cfg(order=4, h=0.7)
        loo = nw_regress(y, x, None, SmootherConfig(c.kernel, 0.7, leave_one_out=True))
        for i in range(12):
            keep = np.arange(12) != i
            np.testing.assert_allclose(loo[i], nw_regress(y[keep], x[keep], [x[i]], c)[0],
                                       rtol=1e-12, atol=1e-12)

    def test_leave_one_out_needs_training_points(self, rng):
        x = rng.normal(size=5)
        with pytest.raises(ValueError):
            nw_regress(x, x, x[:3], cfg(loo=True))

    def test_range_for_nonnegative_weights(self, rng):
        x, y = rng.normal(size=50), rng.uniform(-2, 5, size=50)
        out = nw_regress(y, x, np.linspace(-3, 3, 30), cfg(h=0.4))
        assert out.min() >= y.min() - 1e-12 and out.max() <= y.max() + 1e-12

    def test_empty_data(self):
        with pytest.raises(ValueError):
            nw_regress(np.array([]), np.empty((0, 1)), [0.0], cfg())

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            nw_regress(rng.normal(size=5), rng.normal(size=(5, 2)), [[0.0, 0.0]], cfg())

    def test_unstable_flag(self):
        out = nw_regress([1.0, 2.0], [0.0, 0.1], [1e3], cfg(h=0.1), return_info=True)
        assert out.unstable[0]

    def test_multivariate_product_weights(self, rng):
        X, y = rng.normal(size=(20, 2)), rng.normal(size=20)
        z = np.array([[0.1, -0.2]])
        w = univariate(2, (X[:, 0] - z[0, 0]) / 0.8) * univariate(2, (X[:, 1] - z[0, 1]) / 0.8)
        np.testing.assert_allclose(nw_regress(y, X, z, cfg(dim=2, h=0.8)),
                                   (w @ y) / (w.sum() + 0.64e-12), rtol=1e-10)


class TestKde:
    def test_single_point(self):
        np.testing.assert_allclose(kde([0.0], [0.0], cfg()), univariate(2, np.array([0.0])),
                                   atol=1e-15)

    def test_symmetric_pair(self):
        a, h = 0.7, 0.5
        val = kde([-a, a], [0.0], cfg(order=4, h=h))
        np.testing.assert_allclose(val, univariate(4, np.array([a / h])) / h, rtol=1e-14)

    def test_scaling_definition(self, rng):
        x, h = rng.normal(size=30), 0.3
        z = np.array([0.2])
        mean_k = univariate(2, (x - z) / h).mean()
        np.testing.assert_allclose(kde(x, z, cfg(h=h)), mean_k / h, rtol=1e-13)

    def test_permutation_invariance(self, rng):
        X = rng.normal(size=(25, 2))
        z = rng.normal(size=(4, 2))
        perm = rng.permutation(25)
        np.testing.assert_allclose(kde(X, z, cfg(dim=2, h=0.6)), kde(X[perm], z, cfg(dim=2, h=0.6)),
                                   rtol=1e-13)

    def test_kernel_matrix_shape(self, rng):
        assert kernel_matrix(rng.normal(size=7), rng.normal(size=3), KernelSpec(2), 1.0).shape == (3, 7)
