import os
import tempfile

import numpy as np
from PIL import Image
from scipy import ndimage

from easy_geodesics import field
from easy_geodesics.exceptions import GridMismatchError, InvalidFieldError
from easy_geodesics.field import (
    DeformationMap, GridSpec, Mask, ScalarField, VectorField)
from easy_geodesics.tests.utils import BaseTest, blob


def smooth_map(grid, amplitude, seed=0):
    rng = np.random.default_rng(seed)
    displacement = ndimage.gaussian_filter(
        rng.normal(size=(grid.ndim,) + grid.dims),
        sigma=(0,) + (3.0,) * grid.ndim)
    displacement *= amplitude / np.abs(displacement).max()
    return DeformationMap(
        grid, field.identity_positions(grid.dims) + displacement)


class GridSpecTest(BaseTest):

    def test_defaults(self):
        grid = GridSpec((8, 6))
        self.assertEqual(grid.spacing, (1.0, 1.0))
        self.assertEqual(grid.size, 48)
        self.assertEqual(grid.voxel_volume, 1.0)

    def test_too_small(self):
        self.assertRaises(InvalidFieldError, GridSpec, (3, 8))

    def test_bad_axes(self):
        self.assertRaises(InvalidFieldError, GridSpec, (8,))
        self.assertRaises(InvalidFieldError, GridSpec, (8, 8, 8, 8))

    def test_bad_spacing(self):
        self.assertRaises(InvalidFieldError, GridSpec, (8, 8), (1.0, 0.0))
        self.assertRaises(InvalidFieldError, GridSpec, (8, 8), (1.0,))


class FieldTest(BaseTest):

    def test_shape(self):
        grid = GridSpec((4, 5))
        self.assertEqual(ScalarField.zeros(grid).data.shape, (4, 5))
        self.assertEqual(VectorField.zeros(grid).data.shape, (2, 4, 5))

    def test_flat_data(self):
        grid = GridSpec((4, 5))
        f = ScalarField(grid, range(20))
        self.assertEqual(f.data[1, 0], 5)

    def test_wrong_size(self):
        grid = GridSpec((4, 5))
        self.assertRaises(InvalidFieldError, ScalarField, grid, range(19))

    def test_non_finite(self):
        grid = GridSpec((4, 4))
        data = np.zeros((4, 4))
        data[1, 2] = np.nan
        self.assertRaises(InvalidFieldError, ScalarField, grid, data)

    def test_immutable(self):
        f = ScalarField.zeros(GridSpec((4, 4)))
        with self.assertRaises(ValueError):
            f.data[0, 0] = 1

    def test_check_grids(self):
        a = ScalarField.zeros(GridSpec((4, 4)))
        b = ScalarField.zeros(GridSpec((4, 5)))
        self.assertRaises(GridMismatchError, field.check_grids, a, b)
        self.assertEqual(field.check_grids(a, None), a.grid)


class InterpolateTest(BaseTest):

    def test_constant(self):
        f = ScalarField(GridSpec((5, 6)), np.full((5, 6), 3.0))
        self.assertEqual(field.interpolate(f, (2.3, 4.9)), 3.0)

    def test_linear_midpoint(self):
        grid = GridSpec((4, 4))
        f = ScalarField(grid, 2.0 * field.identity_positions(grid.dims)[0])
        self.assertAlmostEqual(field.interpolate(f, (0.5, 0.0)), 1.0)

    def test_clamp(self):
        grid = GridSpec((4, 4))
        f = ScalarField(grid, np.arange(16.0) + 7)
        self.assertEqual(field.interpolate(f, (-1, -1)), 7.0)

    def test_sample_gradient(self):
        grid = GridSpec((8, 8))
        rng = np.random.default_rng(1)
        values = rng.normal(size=grid.dims)
        positions = rng.uniform(1.2, 5.8, size=(2, 10))
        _, gradient = field.sample(values, positions, gradient=True)
        eps = 1e-6
        for axis in range(2):
            step = np.zeros_like(positions)
            step[axis] = eps
            numeric = (field.sample(values, positions + step)
                       - field.sample(values, positions - step)) / (2 * eps)
            np.testing.assert_allclose(gradient[axis], numeric, atol=1e-6)

    def test_sample_gradient_clamped(self):
        grid = GridSpec((4, 4))
        values = np.arange(16.0).reshape(4, 4)
        _, gradient = field.sample(
            values, np.array([[-2.0], [1.5]]), gradient=True)
        self.assertEqual(gradient[0, 0], 0.0)
        self.assertEqual(gradient[1, 0], 1.0)


class WarpTest(BaseTest):

    def test_identity(self):
        grid = GridSpec((6, 7))
        f = ScalarField(grid, np.random.default_rng(0).normal(size=grid.dims))
        warped = field.warp(f, DeformationMap.identity(grid))
        np.testing.assert_array_equal(warped.data, f.data)

    def test_shift(self):
        grid = GridSpec((6, 7))
        f = ScalarField(grid, np.random.default_rng(0).normal(size=grid.dims))
        positions = field.identity_positions(grid.dims)
        positions[0] += 1
        warped = field.warp(f, DeformationMap(grid, positions))
        np.testing.assert_allclose(warped.data[:-1], f.data[1:])
        np.testing.assert_allclose(warped.data[-1], f.data[-1])

    def test_warp_and_back(self):
        grid = GridSpec((32, 32))
        f = blob(grid, width=2.0)
        phi = smooth_map(grid, 0.5)
        phi_inv = field.invert_map(phi)
        restored = field.warp(field.warp(f, phi_inv), phi)
        interior = (slice(4, -4),) * 2
        error = np.abs(restored.data - f.data)[interior].mean()
        value_range = f.data.max() - f.data.min()
        self.assertLess(error, 1e-2 * value_range)

    def test_compose_inverse(self):
        grid = GridSpec((32, 32))
        phi = smooth_map(grid, 1.0, seed=3)
        composed = field.compose(phi, field.invert_map(phi))
        gap = np.abs(composed.displacement().data)[:, 4:-4, 4:-4].max()
        self.assertLess(gap, 1e-2)


class GradientTest(BaseTest):

    def test_constant(self):
        f = ScalarField(GridSpec((8, 8)), np.full((8, 8), 2.5))
        np.testing.assert_array_equal(field.central_gradient(f).data, 0)

    def test_ramp(self):
        grid = GridSpec((8, 9))
        f = ScalarField(grid, field.identity_positions(grid.dims)[0])
        gradient = field.central_gradient(f).data
        np.testing.assert_allclose(gradient[0], 1.0)
        np.testing.assert_allclose(gradient[1], 0.0)

    def test_sine(self):
        n = 32
        grid = GridSpec((n, n))
        x = field.identity_positions(grid.dims)[0]
        k = 2 * np.pi / n
        f = ScalarField(grid, np.sin(k * x))
        gradient = field.central_gradient(f).data[0]
        error = np.abs(gradient - k * np.cos(k * x))[1:-1, 1:-1].max()
        self.assertLess(error, 0.5 * k ** 3)

    def test_spacing(self):
        grid = GridSpec((8, 8), (2.0, 1.0))
        f = ScalarField(grid, field.identity_positions(grid.dims)[0])
        np.testing.assert_allclose(field.central_gradient(f).data[0], 0.5)

    def test_diff_adjoint(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(7, 6))
        g = rng.normal(size=(7, 6))
        for axis in (0, 1):
            left = np.sum(field.diff(a, axis, 0.5) * g)
            right = np.sum(a * field.diff_adjoint(g, axis, 0.5))
            self.assertAlmostEqual(left, right, places=10)


class JacobianTest(BaseTest):

    def test_identity(self):
        grid = GridSpec((6, 6, 6))
        jd = field.jacobian_determinant(DeformationMap.identity(grid))
        np.testing.assert_allclose(jd.data, 1.0)

    def test_scaling(self):
        for dims in ((8, 8), (6, 6, 6)):
            grid = GridSpec(dims)
            phi = DeformationMap(
                grid, 0.9 * field.identity_positions(grid.dims))
            jd = field.jacobian_determinant(phi)
            np.testing.assert_allclose(jd.data, 0.9 ** len(dims))

    def test_anisotropic_spacing(self):
        grid = GridSpec((8, 10), spacing=(2.0, 1.5))
        jd = field.jacobian_determinant(DeformationMap.identity(grid))
        np.testing.assert_allclose(jd.data, 1.0)
        positions = field.identity_positions(grid.dims)
        positions[0] *= 0.8
        positions[1] *= 0.9
        jd = field.jacobian_determinant(DeformationMap(grid, positions))
        np.testing.assert_allclose(jd.data, 0.72)

    def test_direct_determinant(self):
        grid = GridSpec((16, 16))
        phi = smooth_map(grid, 1.5, seed=5)
        p = phi.positions
        j00 = np.gradient(p[0], axis=0)
        j01 = np.gradient(p[0], axis=1)
        j10 = np.gradient(p[1], axis=0)
        j11 = np.gradient(p[1], axis=1)
        expected = j00 * j11 - j01 * j10
        np.testing.assert_allclose(
            field.jacobian_determinant(phi).data, expected, atol=1e-12)


class FileFormatTest(BaseTest):

    def test_vector_field(self):
        grid = GridSpec((4, 5), (1.0, 2.0))
        values = np.random.default_rng(0).normal(size=(2, 4, 5))
        loaded = field.loads(field.dumps(VectorField(grid, values)))
        self.assertIsInstance(loaded, VectorField)
        self.assertEqual(loaded.grid, grid)
        np.testing.assert_array_equal(
            loaded.data, values.astype(np.float32))

    def test_mask(self):
        grid = GridSpec((4, 4))
        flags = np.zeros((4, 4), dtype=bool)
        flags[1:3, 2] = True
        loaded = field.loads(field.dumps(Mask(grid, flags)), kind=Mask)
        self.assertEqual(loaded.count, 2)
        np.testing.assert_array_equal(loaded.flags, flags)

    def test_bad_magic(self):
        self.assertRaises(InvalidFieldError, field.loads, b'NOTAFIELD' * 4)

    def test_truncated(self):
        content = field.dumps(ScalarField.zeros(GridSpec((4, 4))))
        self.assertRaises(InvalidFieldError, field.loads, content[:-8])

    def test_wrong_kind(self):
        content = field.dumps(ScalarField.zeros(GridSpec((4, 4))))
        self.assertRaises(
            InvalidFieldError, field.loads, content, kind=VectorField)

    def test_files_and_meta(self):
        grid = GridSpec((4, 4))
        f = ScalarField(grid, np.arange(16.0))
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'f.gff')
            field.write_field(f, path, meta={'subject': 's000'})
            np.testing.assert_array_equal(field.read_field(path).data, f.data)
            self.assertEqual(field.read_meta(path), {'subject': 's000'})

    def test_slice_preview(self):
        grid = GridSpec((6, 8, 10))
        f = ScalarField(grid, np.random.default_rng(0).uniform(size=grid.dims))
        with Image.open(field.save_slice(f)) as image:
            self.assertEqual(image.mode, 'L')
            self.assertEqual(image.size, (10, 8))

    def test_slice_constant(self):
        f = ScalarField(GridSpec((4, 4)), np.full((4, 4), 0.3))
        self.assertEqual(field.to_image(f).getextrema(), (0, 0))
