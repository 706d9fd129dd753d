"""
Geodesic shooting: EPDiff for the momentum, the inverse map evolution
``phi_t + D(phi) v = 0`` and, optionally, the Lagrangian forward map.

Images are never advected directly; ``I(t)`` is the baseline pulled back
through the inverse map.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from django.core.files.base import ContentFile

from easy_geodesics.conf import settings
from easy_geodesics.exceptions import DivergenceError, InvalidParameterError
from easy_geodesics.field import (
    DeformationMap, ScalarField, VectorField, check_grids, diff, dumps,
    identity_positions, sample, spatial_gradient)
from easy_geodesics.kernel import inner_product_K, smooth

logger = logging.getLogger('easy_geodesics.shooting')

INTEGRATORS = ('rk4', 'euler')


@dataclass(frozen=True)
class ShootConfig:
    steps: int = 10
    integrator: str = 'rk4'

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidParameterError(
                "Shooting needs a positive whole number of steps per unit "
                "time, not {0!r}".format(self.steps))
        if self.integrator not in INTEGRATORS:
            raise InvalidParameterError(
                "Unknown integrator {0!r}".format(self.integrator))
        object.__setattr__(self, 'steps', int(self.steps))

    @classmethod
    def from_dict(cls, values=None):
        merged = dict(settings.GEODESICS_SHOOT)
        merged.update(values or {})
        return cls(steps=merged['steps'], integrator=merged['integrator'])

    def as_dict(self):
        return asdict(self)

    def step_count(self, duration):
        if duration == 0:
            return 0
        # The small slack keeps 0.3 * 10 from becoming 4 steps.
        return max(1, int(math.ceil(self.steps * abs(duration) - 1e-9)))


@dataclass
class GeodesicState:
    t: float
    image: ScalarField
    momentum: VectorField
    map_inv: DeformationMap
    map: DeformationMap = None


class GeodesicTrajectory:
    """
    The states visited by :func:`shoot`, first to last.
    """

    def __init__(self, states, kernel):
        self.states = list(states)
        self.kernel = kernel

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, index):
        return self.states[index]

    @property
    def final(self):
        return self.states[-1]

    @property
    def times(self):
        return [state.t for state in self.states]

    def energies(self):
        """
        The metric energy ``<m(t), K m(t)>`` of every state.
        """
        return [inner_product_K(state.momentum, state.momentum, self.kernel)
                for state in self.states]


def ad_star(v, m, spacing):
    """
    ``ad*_v m = (Dv)^T m + (Dm) v + m div(v)`` on arrays of shape
    ``(d,) + dims``.
    """
    dv = [spatial_gradient(component, spacing) for component in v]
    dm = [spatial_gradient(component, spacing) for component in m]
    divergence = sum(dv[j][j] for j in range(len(v)))
    out = np.empty_like(m)
    for i in range(len(m)):
        out[i] = m[i] * divergence
        for j in range(len(m)):
            out[i] += dv[j][i] * m[j] + dm[i][j] * v[j]
    return out


def advect(positions, v, spacing):
    """
    ``D(positions) v``: the directional derivative of every map component
    along the velocity.
    """
    out = np.zeros_like(positions)
    for k in range(len(positions)):
        for j, h in enumerate(spacing):
            out[k] += v[j] * diff(positions[k], j, h)
    return out


def voxel_velocity(v, positions, spacing):
    """
    The velocity sampled at ``positions``, converted to voxels per unit
    time.
    """
    scale = np.asarray(spacing).reshape((-1,) + (1,) * (v.ndim - 1))
    return sample(v, positions) / scale


def geodesic_rhs(state, grid, kernel):
    """
    Time derivative of ``(m, phi_inv, phi)``; ``phi`` may be ``None``.
    """
    m, phi_inv, phi = state
    v = smooth(m, grid, kernel)
    dm = -ad_star(v, m, grid.spacing)
    dphi_inv = -advect(phi_inv, v, grid.spacing)
    dphi = None if phi is None else voxel_velocity(v, phi, grid.spacing)
    return dm, dphi_inv, dphi


def _axpy(state, h, slope):
    return tuple(
        None if x is None else x + h * dx for x, dx in zip(state, slope))


def advance(state, h, grid, kernel, integrator='rk4'):
    """
    One explicit step of size ``h``.
    """
    k1 = geodesic_rhs(state, grid, kernel)
    if integrator == 'euler':
        return _axpy(state, h, k1)
    k2 = geodesic_rhs(_axpy(state, h / 2, k1), grid, kernel)
    k3 = geodesic_rhs(_axpy(state, h / 2, k2), grid, kernel)
    k4 = geodesic_rhs(_axpy(state, h, k3), grid, kernel)
    return tuple(
        None if x is None else
        x + h / 6 * (a + 2 * b + 2 * c + d)
        for x, a, b, c, d in zip(state, k1, k2, k3, k4))


def integrate(m0, grid, duration, cfg, kernel, forward_map=False,
              callback=None):
    """
    Integrate the geodesic equations from momentum array ``m0`` over
    ``duration``, returning the final ``(m, phi_inv, phi)`` arrays.

    A negative duration shoots ``-m0`` for ``|duration|``. ``callback`` is
    called with the step index and state after every step.
    """
    kernel.check_supported()
    m = np.array(m0, dtype=np.float64)
    if duration < 0:
        m = -m
    identity = identity_positions(grid.dims)
    state = (m, identity, identity.copy() if forward_map else None)
    steps = cfg.step_count(duration)
    h = abs(duration) / steps if steps else 0.0
    for step in range(1, steps + 1):
        state = advance(state, h, grid, kernel, cfg.integrator)
        if not all(x is None or np.isfinite(x).all() for x in state):
            raise DivergenceError(
                "Non-finite values at shooting step {0} of {1}".format(
                    step, steps), step=step)
        if callback is not None:
            callback(step, state)
    return state


def shoot(I0, m0, T, cfg, kernel, forward_map=False):
    """
    Shoot the geodesic starting at image ``I0`` with initial momentum ``m0``
    for duration ``T``, recording every step.
    """
    grid = check_grids(I0, m0)
    steps = cfg.step_count(T)
    h = math.copysign(abs(T) / steps, T) if steps else 0.0

    def make_state(t, state):
        m, phi_inv, phi = state
        if T < 0:
            m = -m
        return GeodesicState(
            t=t,
            image=ScalarField(grid, sample(I0.data, phi_inv)),
            momentum=VectorField(grid, m),
            map_inv=DeformationMap(grid, phi_inv),
            map=None if phi is None else DeformationMap(grid, phi))

    identity = identity_positions(grid.dims)
    states = [make_state(0.0, (
        m0.data * (-1 if T < 0 else 1), identity,
        identity if forward_map else None))]
    integrate(
        m0.data, grid, T, cfg, kernel, forward_map=forward_map,
        callback=lambda step, state: states.append(
            make_state(step * h, state)))
    return GeodesicTrajectory(states, kernel)


def exponential_map(m0, t, cfg, kernel, forward=False):
    """
    The inverse map ``phi^-1(t)`` of the geodesic with initial momentum
    ``m0`` (the forward map ``phi(t)`` when ``forward`` is set).
    """
    _, phi_inv, phi = integrate(
        m0.data, m0.grid, t, cfg, kernel, forward_map=forward)
    return DeformationMap(m0.grid, phi if forward else phi_inv)


def epdiff_rhs(m, kernel):
    """
    ``-ad*_v m`` with ``v = K m``.
    """
    kernel.check_supported()
    v = smooth(m.data, m.grid, kernel)
    return VectorField(m.grid, -ad_star(v, m.data, m.grid.spacing))


def export_trajectory(trajectory, storage, prefix):
    """
    Save every state of a trajectory as numbered GFF files plus a
    ``manifest.json`` listing them, returning the manifest name.
    """
    entries = []
    for index, state in enumerate(trajectory):
        names = {}
        for part in ('image', 'momentum', 'map_inv', 'map'):
            value = getattr(state, part)
            if value is None:
                continue
            name = '{0}/{1:03d}_{2}.gff'.format(prefix, index, part)
            if storage.exists(name):
                storage.delete(name)
            names[part] = storage.save(name, ContentFile(dumps(value)))
        entries.append({'t': state.t, 'files': names})
    manifest = json.dumps(
        {'kernel': trajectory.kernel.as_dict(), 'states': entries},
        indent=2, sort_keys=True)
    name = '{0}/manifest.json'.format(prefix)
    if storage.exists(name):
        storage.delete(name)
    return storage.save(name, ContentFile(manifest.encode('utf-8')))
