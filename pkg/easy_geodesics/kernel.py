"""
The smoothing operator ``K = (-a lap - b grad div + c)^-2`` and its inverse.

Both act per component as Fourier multipliers over a periodic grid. The
Laplacian symbol is the one of the discrete 5-point (7-point in 3D) stencil
so that ``L`` is exactly the squared stencil operator.
"""
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from easy_geodesics.conf import settings
from easy_geodesics.exceptions import (
    InvalidParameterError, UnsupportedParameterError)
from easy_geodesics.field import VectorField, check_grids


@dataclass(frozen=True)
class KernelParams:
    a: float = 1.0
    b: float = 0.0
    c: float = 0.1

    def __post_init__(self):
        if self.a < 0:
            raise InvalidParameterError("Kernel weight a must be >= 0")
        if self.c <= 0:
            raise InvalidParameterError("Kernel weight c must be > 0")

    @classmethod
    def from_dict(cls, values=None):
        merged = dict(settings.GEODESICS_KERNEL)
        merged.update(values or {})
        return cls(**{k: float(merged[k]) for k in ('a', 'b', 'c')})

    def as_dict(self):
        return asdict(self)

    def check_supported(self):
        if self.b != 0:
            raise UnsupportedParameterError(
                "The div-grad kernel term is not supported (b={0})".format(
                    self.b))


@lru_cache(maxsize=32)
def laplacian_symbol(dims, spacing):
    """
    ``sum_j (2 - 2 cos(2 pi k_j / N_j)) / h_j^2`` on the half spectrum used
    by ``rfftn``. The returned array is read-only.
    """
    frequencies = [fft.fftfreq(n) for n in dims[:-1]]
    frequencies.append(fft.rfftfreq(dims[-1]))
    grids = np.meshgrid(*frequencies, indexing='ij')
    symbol = sum(
        (2.0 - 2.0 * np.cos(2.0 * np.pi * k)) / h ** 2
        for k, h in zip(grids, spacing))
    symbol.setflags(write=False)
    return symbol


def multiplier(grid, params, power):
    params.check_supported()
    symbol = laplacian_symbol(grid.dims, grid.spacing)
    return (params.a * symbol + params.c) ** power


def smooth(array, grid, params, power=-2):
    """
    Apply ``(a lap + c)^power`` to every component of ``array`` (shape
    ``(d,) + dims``). The FFTs use as many threads as
    ``scipy.fft.set_workers`` allows, one unless a caller raised it.
    """
    axes = tuple(range(1, grid.ndim + 1))
    spectrum = fft.rfftn(array, axes=axes)
    spectrum *= multiplier(grid, params, power)
    return fft.irfftn(spectrum, s=grid.dims, axes=axes)


def apply_K(m, params):
    """
    Velocity from momentum, ``v = K m``.
    """
    return VectorField(m.grid, smooth(m.data, m.grid, params, -2))


def apply_L(v, params):
    """
    Momentum from velocity, ``m = L v``.
    """
    return VectorField(v.grid, smooth(v.data, v.grid, params, 2))


def inner_product_K(m1, m2, params):
    """
    ``<m1, K m2>``, summed over voxels and components and weighted by the
    voxel volume.
    """
    grid = check_grids(m1, m2)
    smoothed = smooth(m2.data, grid, params, -2)
    return float(np.sum(m1.data * smoothed) * grid.voxel_volume)
