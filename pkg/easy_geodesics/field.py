"""
Regular-grid scalar and vector fields.

Fields hold numpy arrays: a scalar field has the shape of its grid, vector
fields and deformation maps have one leading component axis. Deformation maps
store absolute positions in voxel coordinates; the identity map of voxel
``(i, j)`` is ``(i, j)``.
"""
import itertools
import json
import os
from dataclasses import dataclass
from io import BytesIO

import numpy as np
from PIL import Image

from easy_geodesics.exceptions import GridMismatchError, InvalidFieldError

MAGIC = b'GEOFIELD\x00\x00\x00\x00v001'


@dataclass(frozen=True)
class GridSpec:
    dims: tuple
    spacing: tuple = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if self.spacing is None:
            spacing = (1.0,) * len(dims)
        else:
            spacing = tuple(float(s) for s in self.spacing)
        if len(dims) not in (2, 3):
            raise InvalidFieldError(
                "Grids have 2 or 3 axes, not {0}".format(len(dims)))
        if len(spacing) != len(dims):
            raise InvalidFieldError("One spacing per axis is required")
        if min(dims) < 4:
            raise InvalidFieldError(
                "Every grid axis needs at least 4 voxels: {0}".format(dims))
        if min(spacing) <= 0:
            raise InvalidFieldError("Grid spacing must be positive")
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'spacing', spacing)

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self):
        return float(np.prod(self.spacing))

    def as_dict(self):
        return {'dims': list(self.dims), 'spacing': list(self.spacing)}


class BaseField:
    """
    Immutable array data living on a :class:`GridSpec`.

    ``data`` may be given flat (row-major) or already shaped.
    """
    components = None

    def __init__(self, grid, data):
        self.grid = grid
        array = np.array(data, dtype=self.dtype)
        try:
            array = array.reshape(self.shape_for(grid))
        except ValueError:
            raise InvalidFieldError(
                "{0} of {1} values does not fit grid {2}".format(
                    type(self).__name__, array.size, grid.dims))
        if array.dtype.kind == 'f' and not np.isfinite(array).all():
            raise InvalidFieldError(
                "{0} holds non-finite values".format(type(self).__name__))
        array.setflags(write=False)
        self.data = array

    dtype = np.float64

    @classmethod
    def shape_for(cls, grid):
        return grid.dims

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(cls.shape_for(grid), dtype=cls.dtype))

    def __repr__(self):
        return '<{0} {1}>'.format(
            type(self).__name__, 'x'.join(str(n) for n in self.grid.dims))


class ScalarField(BaseField):
    components = 1


class VectorField(BaseField):

    @classmethod
    def shape_for(cls, grid):
        return (grid.ndim,) + grid.dims

    @property
    def components(self):
        return self.grid.ndim


class DeformationMap(VectorField):

    @classmethod
    def identity(cls, grid):
        return cls(grid, identity_positions(grid.dims))

    @property
    def positions(self):
        return self.data

    def displacement(self):
        """
        The map minus the identity, in voxels.
        """
        return VectorField(
            self.grid, self.data - identity_positions(self.grid.dims))


class Mask(BaseField):
    components = 1
    dtype = np.bool_

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.dims, dtype=bool))

    @property
    def flags(self):
        return self.data

    @property
    def count(self):
        return int(self.data.sum())


def identity_positions(dims):
    return np.indices(dims, dtype=np.float64)


def check_grids(*fields):
    grid = fields[0].grid
    for other in fields[1:]:
        if other is not None and other.grid != grid:
            raise GridMismatchError(
                "Grid {0} does not match {1}".format(
                    other.grid.dims, grid.dims))
    return grid


def sample(values, positions, gradient=False):
    """
    Multilinear interpolation of ``values`` at continuous voxel
    ``positions``.

    ``values`` has the grid's shape, optionally preceded by one component
    axis; ``positions`` has one leading axis per grid axis. Positions outside
    the grid are clamped to its boundary.

    With ``gradient=True`` a second array is returned holding the derivative
    of the samples with respect to each position coordinate (leading axis),
    zero along axes where the position was clamped.
    """
    values = np.asarray(values)
    ndim = positions.shape[0]
    scalar = values.ndim == ndim
    if scalar:
        values = values[np.newaxis]
    dims = values.shape[1:]
    base, frac, inside = [], [], []
    for axis in range(ndim):
        p = positions[axis]
        clamped = np.clip(p, 0, dims[axis] - 1)
        i0 = np.clip(np.floor(clamped), 0, dims[axis] - 2).astype(np.intp)
        base.append(i0)
        frac.append(clamped - i0)
        if gradient:
            inside.append((p >= 0) & (p <= dims[axis] - 1))
    out = np.zeros((values.shape[0],) + positions.shape[1:])
    grad = np.zeros((ndim,) + out.shape) if gradient else None
    for corner in itertools.product((0, 1), repeat=ndim):
        index = tuple(base[a] + corner[a] for a in range(ndim))
        corner_values = values[(slice(None),) + index]
        factors = [frac[a] if corner[a] else 1 - frac[a] for a in range(ndim)]
        out += np.prod(factors, axis=0) * corner_values
        if gradient:
            for axis in range(ndim):
                others = [f for a, f in enumerate(factors) if a != axis]
                weight = np.prod(others, axis=0) if others else 1.0
                sign = 1.0 if corner[axis] else -1.0
                grad[axis] += sign * weight * corner_values
    if gradient:
        for axis in range(ndim):
            grad[axis] *= inside[axis]
        if scalar:
            return out[0], grad[:, 0]
        return out, grad
    return out[0] if scalar else out


def diff(a, axis, h):
    """
    Central differences along ``axis``, one-sided at both ends, divided by
    the spacing ``h``.
    """
    return np.gradient(a, h, axis=axis)


def diff_adjoint(g, axis, h):
    """
    The transpose of :func:`diff`: ``sum(diff(a) * g) == sum(a * diff_adjoint(g))``.
    """
    g = np.moveaxis(g, axis, 0)
    out = np.zeros_like(g)
    interior = g[1:-1] / (2.0 * h)
    out[2:] += interior
    out[:-2] -= interior
    out[0] -= g[0] / h
    out[1] += g[0] / h
    out[-2] -= g[-1] / h
    out[-1] += g[-1] / h
    return np.moveaxis(out, 0, axis)


def spatial_gradient(a, spacing):
    return np.stack([diff(a, axis, h) for axis, h in enumerate(spacing)])


def interpolate(f, p):
    """
    The value of scalar field ``f`` at continuous voxel coordinate ``p``.
    """
    positions = np.asarray(p, dtype=np.float64).reshape(f.grid.ndim, 1)
    return float(sample(f.data, positions)[0])


def warp(f, phi_inv):
    """
    Pull ``f`` back through a map: ``output(x) = f(phi_inv(x))``.
    """
    grid = check_grids(f, phi_inv)
    return ScalarField(grid, sample(f.data, phi_inv.positions))


def compose(outer, inner):
    """
    The map ``outer(inner(x))``.
    """
    grid = check_grids(outer, inner)
    return DeformationMap(grid, sample(outer.positions, inner.positions))


def invert_map(phi, iterations=30):
    """
    Numerically invert a map close to the identity by fixed point iteration.
    """
    identity = identity_positions(phi.grid.dims)
    displacement = phi.positions - identity
    inverse = identity.copy()
    for _ in range(iterations):
        inverse = identity - sample(displacement, inverse)
    return DeformationMap(phi.grid, inverse)


def central_gradient(f):
    return VectorField(f.grid, spatial_gradient(f.data, f.grid.spacing))


def jacobian_matrices(positions):
    """
    Per-voxel Jacobians of a position map, shaped ``dims + (d, d)``.

    Positions and the grid they live on are both in voxel units, so the
    derivatives take unit steps whatever the physical spacing. The
    determinant is the same in physical units.
    """
    rows = [spatial_gradient(component, (1.0,) * len(positions))
            for component in positions]
    return np.moveaxis(np.stack(rows), (0, 1), (-2, -1))


def jacobian_determinant(phi):
    jacobians = jacobian_matrices(phi.positions)
    return ScalarField(phi.grid, np.linalg.det(jacobians))


# On-disk format.

def dumps(field):
    """
    Serialise a field to GFF bytes.
    """
    grid = field.grid
    values = np.asarray(field.data, dtype='<f4')
    components = 1 if values.ndim == grid.ndim else values.shape[0]
    header = np.array(
        [grid.ndim, components] + list(grid.dims), dtype='<u4').tobytes()
    spacing = np.array(grid.spacing, dtype='<f4').tobytes()
    return MAGIC + header + spacing + values.tobytes()


def loads(content, kind=None):
    """
    Parse GFF bytes. Single component files load as ``ScalarField`` and
    multi component ones as ``VectorField`` unless ``kind`` says otherwise.
    """
    if content[:len(MAGIC)] != MAGIC:
        raise InvalidFieldError("Not a GFF field (bad magic)")
    offset = len(MAGIC)
    try:
        ndim, components = np.frombuffer(content, '<u4', 2, offset)
        offset += 8
        dims = np.frombuffer(content, '<u4', ndim, offset)
        offset += 4 * int(ndim)
        spacing = np.frombuffer(content, '<f4', ndim, offset)
        offset += 4 * int(ndim)
        count = int(components) * int(np.prod(dims))
        values = np.frombuffer(content, '<f4', count, offset)
    except ValueError as e:
        raise InvalidFieldError("Truncated GFF field: {0}".format(e))
    grid = GridSpec(tuple(int(n) for n in dims),
                    tuple(float(s) for s in spacing))
    values = values.astype(np.float64)
    if kind is None:
        kind = ScalarField if components == 1 else VectorField
    if kind is Mask:
        values = values > 0.5
    if components != (1 if kind.components == 1 else grid.ndim):
        raise InvalidFieldError(
            "{0} components cannot make a {1}".format(
                components, kind.__name__))
    return kind(grid, values)


def sidecar_path(path):
    return os.path.splitext(path)[0] + '.json'


def write_field(field, path, meta=None):
    with open(path, 'wb') as f:
        f.write(dumps(field))
    if meta is not None:
        with open(sidecar_path(path), 'w') as f:
            json.dump(meta, f, indent=2, sort_keys=True)


def read_field(path, kind=None):
    with open(path, 'rb') as f:
        return loads(f.read(), kind=kind)


def read_meta(path):
    with open(sidecar_path(path)) as f:
        return json.load(f)


def to_image(field):
    """
    An 8-bit grayscale PIL image of a field: the middle slice of 3D fields,
    the magnitude of vector fields, intensities scaled linearly to 0-255.
    """
    values = np.asarray(field.data, dtype=np.float64)
    if values.ndim == field.grid.ndim + 1:
        values = np.sqrt((values ** 2).sum(axis=0))
    if values.ndim == 3:
        values = values[values.shape[0] // 2]
    low, high = values.min(), values.max()
    if high > low:
        values = (values - low) * (255.0 / (high - low))
    else:
        values = np.zeros_like(values)
    return Image.fromarray(np.round(values).astype(np.uint8))


def save_slice(field, destination=None):
    """
    Save a quick-look PGM slice of a field, returning the destination (a new
    ``BytesIO`` unless one is given).
    """
    if destination is None:
        destination = BytesIO()
    to_image(field).save(destination, format='PPM')
    if hasattr(destination, 'seek'):
        destination.seek(0)
    return destination
