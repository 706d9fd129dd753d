"""
Simple geodesic regression.

The regression geodesic of a longitudinal series starts at its baseline
image. Its momentum is the time weighted average of the unit-time pairwise
momenta registering the baseline to every follow-up::

    m_bar = sum((t_i - t0) m_i) / sum((t_i - t0)^2)

Series times are in months; geodesic time is months divided by
``GEODESICS_MONTHS_PER_UNIT``.
"""
import json
import logging
import posixpath
from dataclasses import dataclass, field

import numpy as np
from django.core.files.base import ContentFile
from scipy import optimize

from easy_geodesics import predictor
from easy_geodesics.analytics import overlay_error
from easy_geodesics.conf import settings
from easy_geodesics.exceptions import (
    EmptyDatasetError, GeodesicsError, InvalidFieldError,
    InvalidParameterError, PairwiseError)
from easy_geodesics.field import (
    Mask, ScalarField, VectorField, check_grids, dumps, loads)
from easy_geodesics.kernel import KernelParams, inner_product_K, smooth
from easy_geodesics.register import RegConfig, register_best_effort
from easy_geodesics.shooting import ShootConfig, exponential_map, shoot

logger = logging.getLogger('easy_geodesics.sgr')

BACKENDS = {
    'opt': 'optimized',
    'pred': 'predicted',
    'pred-corr': 'predicted+corrected',
}


def geodesic_time(months):
    return months / float(settings.GEODESICS_MONTHS_PER_UNIT)


@dataclass
class LongitudinalSeries:
    """
    A baseline image and its follow-ups ``(months, image)`` in strictly
    increasing time order.
    """
    baseline: ScalarField
    followups: list
    mask: Mask = None
    t0: float = 0.0
    subject: str = ''

    def __post_init__(self):
        self.followups = [(float(t), image) for t, image in self.followups]
        if not self.followups:
            raise EmptyDatasetError("A series needs at least one follow-up")
        times = [self.t0] + self.times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidParameterError(
                "Follow-up times must increase strictly after t0: {0}".format(
                    times))
        check_grids(self.baseline, self.mask, *self.images)

    def __len__(self):
        return len(self.followups)

    @property
    def times(self):
        return [t for t, _ in self.followups]

    @property
    def images(self):
        return [image for _, image in self.followups]

    @property
    def grid(self):
        return self.baseline.grid

    def elapsed(self, t):
        """
        Geodesic time from the baseline to month ``t``.
        """
        return geodesic_time(t - self.t0)


@dataclass
class RegressionGeodesic:
    baseline: ScalarField
    m_bar: VectorField
    t0: float = 0.0
    provenance: list = field(default_factory=list)
    momenta: list = field(default_factory=list)
    shoot: ShootConfig = ShootConfig()
    kernel: KernelParams = KernelParams()

    def __post_init__(self):
        if not np.isfinite(self.m_bar.data).all():
            raise InvalidFieldError("Regression momentum is not finite")
        check_grids(self.baseline, self.m_bar)

    def energy(self):
        """
        The metric energy ``1/2 <m_bar, K m_bar>`` per unit of geodesic time.
        """
        return inner_product_K(self.m_bar, self.m_bar, self.kernel) / 2.0


def _sorted_momenta(momenta, t0):
    momenta = sorted(momenta, key=lambda item: item[0])
    if not momenta:
        raise EmptyDatasetError("No momenta to average")
    check_grids(*[m for _, m in momenta])
    return [(t - t0, m) for t, m in momenta]


def average_momentum(momenta, t0, sigma=None):
    """
    The regression momentum of pairwise unit-time momenta ``(t_i, m_i)``.

    With ``sigma`` the noise variance is kept in the denominator, which is
    the exact minimiser of :func:`regression_energy`.
    """
    weighted = _sorted_momenta(momenta, t0)
    total = sum(dt ** 2 for dt, _ in weighted)
    if total <= 0:
        raise InvalidParameterError(
            "All follow-ups coincide with the baseline time")
    numerator = np.zeros_like(weighted[0][1].data)
    for dt, m in weighted:
        numerator += dt * m.data
    if sigma is not None:
        total += sigma ** 2
    return VectorField(weighted[0][1].grid, numerator / total)


def regression_energy(m_bar, momenta, t0, sigma, kernel):
    """
    ``1/2 <m_bar, K m_bar> + 1/(2 sigma^2) sum (t_i - t0)^2 |m_bar - n_i|_K^2``
    with ``n_i = m_i / (t_i - t0)`` the per-unit-time pairwise momenta.

    This is the regression energy with every image match replaced by the
    metric distance of the momenta.
    """
    energy = inner_product_K(m_bar, m_bar, kernel) / 2.0
    for dt, m in _sorted_momenta(momenta, t0):
        difference = VectorField(m_bar.grid, m_bar.data - m.data / dt)
        energy += dt ** 2 * inner_product_K(
            difference, difference, kernel) / (2.0 * sigma ** 2)
    return energy


def regression_energy_gap(momenta, t0, sigma, kernel):
    """
    How much energy dropping ``sigma`` from the closed form costs:
    ``1/2 sigma^2 / (sigma^2 + W) |m_bar|_K^2`` with ``W = sum (t_i-t0)^2``.
    """
    closed = average_momentum(momenta, t0)
    total = sum(dt ** 2 for dt, _ in _sorted_momenta(momenta, t0))
    return 0.5 * sigma ** 2 / (sigma ** 2 + total) * inner_product_K(
        closed, closed, kernel)


def minimize_regression_energy(momenta, t0, sigma, kernel, initial=None,
                               max_iters=2000):
    """
    Minimise :func:`regression_energy` numerically with L-BFGS-B, starting
    from ``initial`` (zero by default). Returns the minimiser and its energy.
    """
    weighted = _sorted_momenta(momenta, t0)
    grid = weighted[0][1].grid
    shape = VectorField.shape_for(grid)
    volume = grid.voxel_volume
    total = sum(dt ** 2 for dt, _ in weighted)
    pull = sum(dt * m.data for dt, m in weighted)

    def energy_and_gradient(flat):
        m = flat.reshape(shape)
        # The energy is quadratic: (1 + W/s^2) m - (1/s^2) sum dt m_i,
        # smoothed and weighted by the voxel volume.
        linear = (1.0 + total / sigma ** 2) * m - pull / sigma ** 2
        smoothed = smooth(linear, grid, kernel)
        value = regression_energy(
            VectorField(grid, m), momenta, t0, sigma, kernel)
        return value, (volume * smoothed).ravel()

    start = np.zeros(shape) if initial is None else initial.data
    result = optimize.minimize(
        energy_and_gradient, np.ravel(start), jac=True, method='L-BFGS-B',
        options={'maxiter': max_iters, 'ftol': 1e-15, 'gtol': 1e-12})
    logger.debug(
        "Brute force regression energy %.10g after %d iterations (%s)",
        result.fun, result.nit, result.message)
    return VectorField(grid, result.x.reshape(shape)), float(result.fun)


def pairwise_momentum(series, index, backend='opt', reg_cfg=None, pred=None,
                      corr=None, net_cfg=None):
    """
    The unit-time momentum registering the baseline to follow-up ``index``.
    """
    reg_cfg = reg_cfg or RegConfig.from_dict()
    target = series.images[index]
    if backend == 'opt':
        momentum, _ = register_best_effort(series.baseline, target, reg_cfg)
        return momentum
    if pred is None:
        raise InvalidParameterError(
            "The {0!r} backend needs a prediction model".format(backend))
    if backend == 'pred':
        return predictor.predict_momentum(
            pred, series.baseline, target, series.mask, net_cfg)
    if backend == 'pred-corr':
        if corr is None:
            raise InvalidParameterError(
                "The 'pred-corr' backend needs a correction model")
        return predictor.predict_with_correction(
            pred, corr, series.baseline, target, series.mask, net_cfg,
            reg_cfg.shoot, reg_cfg.kernel)
    raise InvalidParameterError("Unknown backend {0!r}".format(backend))


def pairwise_momenta(series, backend='opt', reg_cfg=None, pred=None,
                     corr=None, net_cfg=None):
    """
    ``(geodesic time, momentum)`` for every follow-up. The first failure
    aborts with a :class:`PairwiseError` naming the follow-up.
    """
    momenta = []
    for index, t in enumerate(series.times):
        try:
            momentum = pairwise_momentum(
                series, index, backend, reg_cfg, pred, corr, net_cfg)
        except InvalidParameterError:
            raise
        except GeodesicsError as e:
            raise PairwiseError(
                "Follow-up {0} (t={1:g}) of {2!r} failed: {3}".format(
                    index, t, series.subject, e), index=index) from e
        logger.debug(
            "Pairwise %s momentum for %r at t=%g", backend, series.subject, t)
        momenta.append((series.elapsed(t), momentum))
    return momenta


def regress(series, backend='opt', reg_cfg=None, pred=None, corr=None,
            net_cfg=None, momenta=None):
    """
    The regression geodesic of a series from pairwise momenta obtained with
    ``backend`` (``opt``, ``pred`` or ``pred-corr``). Already computed
    pairwise ``momenta`` may be passed in.
    """
    if backend not in BACKENDS:
        raise InvalidParameterError("Unknown backend {0!r}".format(backend))
    reg_cfg = reg_cfg or RegConfig.from_dict()
    if momenta is None:
        momenta = pairwise_momenta(
            series, backend, reg_cfg, pred, corr, net_cfg)
    m_bar = average_momentum(momenta, 0.0)
    return RegressionGeodesic(
        baseline=series.baseline, m_bar=m_bar, t0=series.t0,
        provenance=[BACKENDS[backend]] * len(momenta), momenta=momenta,
        shoot=reg_cfg.shoot, kernel=reg_cfg.kernel)


def state_at(geodesic, t):
    """
    The :class:`~easy_geodesics.shooting.GeodesicState` of the regression
    geodesic at month ``t``, forward map included.
    """
    if t < geodesic.t0:
        raise InvalidParameterError(
            "Cannot evaluate at {0:g}, before the baseline at {1:g}".format(
                t, geodesic.t0))
    trajectory = shoot(
        geodesic.baseline, geodesic.m_bar, geodesic_time(t - geodesic.t0),
        geodesic.shoot, geodesic.kernel, forward_map=True)
    return trajectory.final


def evaluate(geodesic, t):
    """
    The regressed image at month ``t`` and the inverse map producing it.
    """
    state = state_at(geodesic, t)
    return state.image, state.map_inv


def replace_impute(series, t_future):
    """
    A copy of ``series`` with the measured image closest in time to
    ``t_future`` appended as a pseudo follow-up at ``t_future``.
    """
    if t_future <= series.times[-1]:
        raise InvalidParameterError(
            "Imputed time {0:g} does not lie beyond the data".format(t_future))
    closest = min(series.followups, key=lambda item: abs(item[0] - t_future))
    return LongitudinalSeries(
        baseline=series.baseline,
        followups=series.followups + [(t_future, closest[1])],
        mask=series.mask, t0=series.t0, subject=series.subject)


def forecast(series, t_future, backend='opt', reg_cfg=None, pred=None,
             corr=None, net_cfg=None, momenta=None):
    """
    Regress on the measured data and extrapolate the geodesic to
    ``t_future``. Returns the geodesic and its state at that time.
    """
    if t_future <= series.times[-1]:
        raise InvalidParameterError(
            "Forecast time {0:g} does not lie beyond the data".format(
                t_future))
    geodesic = regress(
        series, backend, reg_cfg, pred, corr, net_cfg, momenta=momenta)
    return geodesic, state_at(geodesic, t_future)


def pairwise_maps(series, backend='opt', reg_cfg=None, pred=None, corr=None,
                  net_cfg=None, momenta=None):
    """
    ``(month, forward map)`` of every pairwise registration, the reference
    regression is compared against.
    """
    reg_cfg = reg_cfg or RegConfig.from_dict()
    if momenta is None:
        momenta = pairwise_momenta(
            series, backend, reg_cfg, pred, corr, net_cfg)
    return [
        (t, exponential_map(m, 1.0, reg_cfg.shoot, reg_cfg.kernel,
                            forward=True))
        for t, (_, m) in zip(series.times, momenta)]


def regression_overlay_errors(geodesic, series, brain=None):
    """
    ``(month, regression overlay error, baseline overlay error)`` for every
    follow-up of ``series``.
    """
    brain = brain if brain is not None else series.mask
    if brain is None:
        brain = Mask.full(series.grid)
    rows = []
    for t, measured in series.followups:
        image, _ = evaluate(geodesic, t)
        rows.append((
            t, overlay_error(image, measured, brain),
            overlay_error(series.baseline, measured, brain)))
    return rows


# Storage.

def save_series(series, storage, prefix):
    """
    Write a series as GFF fields plus a ``series.json`` manifest naming
    them relative to itself; returns the manifest name.
    """
    def save(name, value):
        name = '{0}/{1}'.format(prefix, name)
        if storage.exists(name):
            storage.delete(name)
        saved = storage.save(name, ContentFile(dumps(value)))
        return posixpath.relpath(saved, prefix)

    manifest = {
        'subject': series.subject,
        't0': series.t0,
        'baseline': save('baseline.gff', series.baseline),
        'mask': None if series.mask is None else save(
            'mask.gff', series.mask),
        'followups': [
            {'t': t, 'image': save('t{0:03g}.gff'.format(t), image)}
            for t, image in series.followups],
    }
    name = '{0}/series.json'.format(prefix)
    if storage.exists(name):
        storage.delete(name)
    content = json.dumps(manifest, indent=2, sort_keys=True)
    return storage.save(name, ContentFile(content.encode('utf-8')))


def load_series(storage, name):
    base = posixpath.dirname(name)

    def load(path, kind):
        with storage.open(posixpath.join(base, path), 'rb') as f:
            return loads(f.read(), kind=kind)

    with storage.open(name, 'rb') as f:
        manifest = json.loads(f.read().decode('utf-8'))
    return LongitudinalSeries(
        baseline=load(manifest['baseline'], ScalarField),
        followups=[(entry['t'], load(entry['image'], ScalarField))
                   for entry in manifest['followups']],
        mask=None if manifest.get('mask') is None else load(
            manifest['mask'], Mask),
        t0=manifest.get('t0', 0.0),
        subject=manifest.get('subject', ''))


def save_geodesic(geodesic, storage, prefix):
    """
    Write the regression momentum and a ``geodesic.json`` description.
    """
    name = '{0}/m_bar.gff'.format(prefix)
    if storage.exists(name):
        storage.delete(name)
    m_bar = storage.save(name, ContentFile(dumps(geodesic.m_bar)))
    description = {
        't0': geodesic.t0,
        'm_bar': m_bar,
        'provenance': geodesic.provenance,
        'times': [t for t, _ in geodesic.momenta],
        'energy': geodesic.energy(),
        'kernel': geodesic.kernel.as_dict(),
        'shoot': geodesic.shoot.as_dict(),
    }
    name = '{0}/geodesic.json'.format(prefix)
    if storage.exists(name):
        storage.delete(name)
    content = json.dumps(description, indent=2, sort_keys=True)
    return storage.save(name, ContentFile(content.encode('utf-8')))


def map_at(geodesic, t):
    """
    The forward map of the regression geodesic at month ``t``.
    """
    return state_at(geodesic, t).map
