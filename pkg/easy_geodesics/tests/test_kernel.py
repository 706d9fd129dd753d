import numpy as np

from easy_geodesics import kernel
from easy_geodesics.conf import settings
from easy_geodesics.exceptions import (
    InvalidParameterError, UnsupportedParameterError)
from easy_geodesics.field import GridSpec, VectorField
from easy_geodesics.kernel import KernelParams
from easy_geodesics.tests.utils import BaseTest, smooth_momentum


class KernelParamsTest(BaseTest):

    def test_defaults(self):
        self.assertEqual(KernelParams.from_dict(), KernelParams(1.0, 0.0, 0.1))

    def test_settings(self):
        settings.GEODESICS_KERNEL = {'a': 2.0, 'b': 0.0, 'c': 0.5}
        params = KernelParams.from_dict({'c': 0.2})
        self.assertEqual(params.as_dict(), {'a': 2.0, 'b': 0.0, 'c': 0.2})

    def test_invalid(self):
        self.assertRaises(InvalidParameterError, KernelParams, a=-1.0)
        self.assertRaises(InvalidParameterError, KernelParams, c=0.0)

    def test_unsupported(self):
        m = VectorField.zeros(GridSpec((8, 8)))
        self.assertRaises(
            UnsupportedParameterError, kernel.apply_K, m, KernelParams(b=1.0))


class ApplyKTest(BaseTest):

    def test_zero(self):
        m = VectorField.zeros(GridSpec((8, 8)))
        np.testing.assert_array_equal(kernel.apply_K(m, KernelParams()).data, 0)

    def test_constant(self):
        grid = GridSpec((8, 8))
        m = VectorField(grid, np.full((2, 8, 8), 3.0))
        v = kernel.apply_K(m, KernelParams(1.0, 0.0, 0.1))
        np.testing.assert_allclose(v.data, 3.0 / 0.01)

    def test_fourier_mode(self):
        n = 16
        grid = GridSpec((n, n))
        x = np.indices(grid.dims)[0]
        mode = np.cos(2 * np.pi * x / n)
        m = VectorField(grid, np.stack([mode, np.zeros_like(mode)]))
        v = kernel.apply_K(m, KernelParams(1.0, 0.0, 0.1))
        symbol = 2 - 2 * np.cos(2 * np.pi / n)
        np.testing.assert_allclose(
            v.data[0], mode / (symbol + 0.1) ** 2, atol=1e-10)
        np.testing.assert_allclose(v.data[1], 0.0, atol=1e-12)

    def test_spacing(self):
        n = 16
        grid = GridSpec((n, n), (2.0, 1.0))
        x = np.indices(grid.dims)[0]
        mode = np.cos(2 * np.pi * x / n)
        m = VectorField(grid, np.stack([mode, mode]))
        v = kernel.apply_K(m, KernelParams(1.0, 0.0, 0.1))
        symbol = (2 - 2 * np.cos(2 * np.pi / n)) / 4.0
        np.testing.assert_allclose(
            v.data[1], mode / (symbol + 0.1) ** 2, atol=1e-10)


class ApplyLTest(BaseTest):

    def test_zero(self):
        v = VectorField.zeros(GridSpec((8, 8)))
        np.testing.assert_array_equal(kernel.apply_L(v, KernelParams()).data, 0)

    def test_constant(self):
        grid = GridSpec((8, 8))
        v = VectorField(grid, np.full((2, 8, 8), 3.0))
        m = kernel.apply_L(v, KernelParams(1.0, 0.0, 0.1))
        np.testing.assert_allclose(m.data, 0.03)

    def test_round_trip(self):
        grid = GridSpec((16, 12))
        rng = np.random.default_rng(0)
        m = VectorField(grid, rng.normal(size=(2, 16, 12)))
        params = KernelParams()
        back = kernel.apply_L(kernel.apply_K(m, params), params)
        error = np.abs(back.data - m.data).max()
        self.assertLess(error, 1e-10 * np.abs(m.data).max())

    def test_3d(self):
        grid = GridSpec((6, 8, 10))
        rng = np.random.default_rng(0)
        m = VectorField(grid, rng.normal(size=(3, 6, 8, 10)))
        params = KernelParams(0.5, 0.0, 0.2)
        back = kernel.apply_K(kernel.apply_L(m, params), params)
        np.testing.assert_allclose(back.data, m.data, atol=1e-10)


class InnerProductTest(BaseTest):

    def test_zero(self):
        grid = GridSpec((8, 8))
        m = smooth_momentum(grid)
        zero = VectorField.zeros(grid)
        self.assertEqual(kernel.inner_product_K(zero, m, KernelParams()), 0.0)

    def test_symmetric(self):
        grid = GridSpec((16, 16))
        params = KernelParams()
        m1 = smooth_momentum(grid, seed=1)
        m2 = smooth_momentum(grid, seed=2)
        a = kernel.inner_product_K(m1, m2, params)
        b = kernel.inner_product_K(m2, m1, params)
        self.assertLess(abs(a - b), 1e-10 * abs(a))

    def test_constant(self):
        n = 8
        grid = GridSpec((n, n))
        kappa = 0.5
        m = VectorField(grid, np.full((2, n, n), kappa))
        value = kernel.inner_product_K(m, m, KernelParams(1.0, 0.0, 0.1))
        self.assertAlmostEqual(value, kappa ** 2 * n * n * 2 / 0.01, places=6)

    def test_voxel_volume(self):
        grid = GridSpec((8, 8), (2.0, 0.5))
        m = VectorField(grid, np.full((2, 8, 8), 1.0))
        value = kernel.inner_product_K(m, m, KernelParams(1.0, 0.0, 0.1))
        self.assertAlmostEqual(value, 64 * 2 / 0.01, places=6)

    def test_positive(self):
        grid = GridSpec((16, 16))
        m = smooth_momentum(grid, seed=4)
        self.assertGreater(kernel.inner_product_K(m, m, KernelParams()), 0)
