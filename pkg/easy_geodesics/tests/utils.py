import os
import shutil
import tempfile

import numpy as np
from django.core.files.storage import FileSystemStorage
from django.test import TestCase
from django.utils.deconstruct import deconstructible
from scipy import ndimage

from easy_geodesics.conf import settings
from easy_geodesics.field import GridSpec, Mask, ScalarField, VectorField
from easy_geodesics.kernel import KernelParams, apply_K

#: Acceptance tests that register or train at desk scale only run when
#: ``EASY_GEODESICS_SLOW`` is set.
SLOW_TESTS = bool(os.environ.get('EASY_GEODESICS_SLOW'))


@deconstructible
class TemporaryStorage(FileSystemStorage):
    """
    A storage class useful for tests that uses a temporary location to store
    all files and provides a method to remove this location when it is finished
    with.
    """

    def __init__(self, location=None, *args, **kwargs):
        """
        Create the temporary location.
        """
        if location is None:
            location = tempfile.mkdtemp()
            self.temporary_location = location
        super().__init__(location=location, *args, **kwargs)

    def delete_temporary_storage(self):
        """
        Delete the temporary directory created during initialisation.
        This storage class should not be used again after this method is
        called.
        """
        temporary_location = getattr(self, 'temporary_location', None)
        if temporary_location:
            shutil.rmtree(temporary_location)


class BaseTest(TestCase):
    """
    Remove any customised GEODESICS_* settings in a project's ``settings``
    configuration module before running the tests to ensure there is a
    consistent test environment.
    """

    def setUp(self):
        """
        Isolate all settings.
        """
        output = super().setUp()
        settings.isolated = True
        return output

    def tearDown(self):
        """
        Restore settings to their original state.
        """
        settings.isolated = False
        settings.revert()
        return super().tearDown()

    def assertAllClose(self, actual, expected, atol=1e-12, rtol=0.0):
        np.testing.assert_allclose(actual, expected, atol=atol, rtol=rtol)


def blob(grid, center=None, radius=0.3, width=1.0):
    """
    A smooth bright disk (ball in 3D), ``radius`` relative to the grid.
    """
    dims = np.asarray(grid.dims, dtype=np.float64)
    if center is None:
        center = (dims - 1) / 2.0
    coords = np.indices(grid.dims, dtype=np.float64)
    distance = np.sqrt(sum(
        ((c - o) / (radius * n)) ** 2
        for c, o, n in zip(coords, center, dims)))
    image = (distance <= 1).astype(np.float64)
    return ScalarField(grid, ndimage.gaussian_filter(image, width))


def smooth_momentum(grid, amplitude=1.0, seed=0, kernel=None):
    """
    A random momentum whose velocity ``K m`` peaks at ``amplitude`` voxels
    per unit time.
    """
    kernel = kernel or KernelParams()
    rng = np.random.default_rng(seed)
    raw = ndimage.gaussian_filter(
        rng.normal(size=(grid.ndim,) + grid.dims),
        sigma=(0,) + (2.0,) * grid.ndim)
    velocity = np.abs(apply_K(VectorField(grid, raw), kernel).data).max()
    return VectorField(grid, raw * amplitude / velocity)


def full_mask(grid):
    return Mask.full(grid)


def grid2d(n=16):
    return GridSpec((n, n))
