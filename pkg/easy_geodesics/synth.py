"""
A synthetic longitudinal cohort with planted geodesic atrophy.

Every subject is a smooth phantom (a bright "brain" ellipse holding a dark
ventricle and a bright stat-ROI) deformed along a geodesic whose momentum is
calibrated so the ROI loses volume at the subject's planted rate.
"""
import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
from django.core.files.base import ContentFile
from scipy import ndimage

from easy_geodesics import analytics, sgr
from easy_geodesics.conf import settings
from easy_geodesics.exceptions import (
    CalibrationError, DivergenceError, InvalidParameterError)
from easy_geodesics.field import (
    GridSpec, Mask, ScalarField, VectorField, dumps, spatial_gradient)
from easy_geodesics.register import register_best_effort
from easy_geodesics.shooting import exponential_map, shoot

logger = logging.getLogger('easy_geodesics.synth')

BACKGROUND, BRAIN, VENTRICLE, ROI = 0.0, 0.8, 0.2, 1.0
VENTRICLE_WEIGHT = 0.5
CODES = {name: code for code, name in analytics.DIAGNOSES.items()}
REGIMES = ('longitudinal', 'cross-sectional')


@dataclass(frozen=True)
class SubjectSpec:
    subject: str
    seed: int
    first_dx: int = 0
    last_dx: int = 0
    rate: float = 0.0
    noise: float = 0.01
    times: tuple = (6, 12, 18, 24)
    dims: tuple = (64, 64)
    conversion: int = 0
    training: bool = False

    def __post_init__(self):
        times = (0,) + tuple(self.times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidParameterError(
                "Visit times must increase strictly: {0}".format(times))
        if self.rate < 0 or self.noise < 0:
            raise InvalidParameterError(
                "Rates and noise levels cannot be negative")
        object.__setattr__(self, 'times', tuple(float(t) for t in self.times))
        object.__setattr__(self, 'dims', tuple(int(n) for n in self.dims))

    @property
    def grid(self):
        return GridSpec(self.dims)

    @property
    def group(self):
        return analytics.diagnostic_change_group(self.first_dx, self.last_dx)

    def diagnoses(self):
        """
        Diagnosis codes of the baseline and every follow-up visit; converters
        switch at visit ``conversion``.
        """
        visits = len(self.times) + 1
        if self.first_dx == self.last_dx:
            return [self.first_dx] * visits
        switch = self.conversion or 1
        return [self.first_dx if visit < switch else self.last_dx
                for visit in range(visits)]

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CohortSpec:
    dims: tuple = (64, 64)
    times: tuple = (6, 12, 18, 24)
    groups: dict = field(default_factory=OrderedDict)
    rates: dict = field(default_factory=dict)
    noise: float = 0.01
    score_base: float = 30.0
    score_gamma: float = 1.0
    score_noise: float = 0.5
    train_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for group, size in self.groups.items():
            if group not in analytics.CHANGE_GROUPS:
                raise InvalidParameterError(
                    "Unknown diagnosis-change group {0!r}".format(group))
            if size < 0:
                raise InvalidParameterError(
                    "Group {0} cannot have {1} subjects".format(group, size))
            if size and group not in self.rates:
                raise InvalidParameterError(
                    "No atrophy rate for group {0}".format(group))
        if self.score_gamma <= 0:
            raise InvalidParameterError("score_gamma must be positive")
        if not 0 <= self.train_fraction <= 1:
            raise InvalidParameterError("train_fraction must lie in [0, 1]")

    @classmethod
    def from_dict(cls, values=None, seed=None):
        merged = dict(settings.GEODESICS_COHORT)
        merged.update(values or {})
        groups = OrderedDict(
            (group, int(merged['groups'].get(group, 0)))
            for group in analytics.CHANGE_GROUPS)
        return cls(
            dims=tuple(merged['dims']),
            times=tuple(merged['times']),
            groups=groups,
            rates={k: tuple(v) for k, v in merged['rates'].items()},
            noise=float(merged['noise']),
            score_base=float(merged['score_base']),
            score_gamma=float(merged['score_gamma']),
            score_noise=float(merged['score_noise']),
            train_fraction=float(merged['train_fraction']),
            seed=settings.GEODESICS_SEED if seed is None else int(seed))

    def as_dict(self):
        values = asdict(self)
        values['groups'] = dict(self.groups)
        values['rates'] = {k: list(v) for k, v in self.rates.items()}
        values['dims'] = list(self.dims)
        values['times'] = list(self.times)
        return values

    @property
    def size(self):
        return sum(self.groups.values())


@dataclass
class Subject:
    """
    A generated subject: its series and the planted ground truth.
    """
    spec: SubjectSpec
    series: sgr.LongitudinalSeries
    m_star: VectorField
    maps: OrderedDict
    roi: Mask
    brain: Mask
    alpha: float = 0.0


def _coordinates(dims):
    """
    Voxel coordinates scaled to [-1, 1] along every axis.
    """
    half = (np.asarray(dims, dtype=np.float64) - 1) / 2.0
    half = half.reshape((-1,) + (1,) * len(dims))
    return np.indices(dims, dtype=np.float64) / half - 1.0


def _ellipsoid(coords, center, radii):
    return sum(((c - o) / r) ** 2 for c, o, r in zip(coords, center, radii)) <= 1


def smoothing_width(dims):
    return max(1.0, min(dims) / 32.0)


def phantom(grid, rng=None):
    """
    The baseline phantom of a subject.

    Returns the smoothed image and the brain, ventricle and stat-ROI masks.
    ``rng`` jitters the geometry; without it the phantom is canonical.
    """
    ndim = grid.ndim

    def jitter(scale):
        if rng is None:
            return np.zeros(ndim)
        return rng.normal(0.0, scale, ndim)

    coords = _coordinates(grid.dims)
    brain_radii = np.array((0.8, 0.7, 0.75)[:ndim]) * (1 + jitter(0.03))
    brain = _ellipsoid(coords, np.zeros(ndim), brain_radii)
    ventricle = _ellipsoid(
        coords, jitter(0.02), np.full(ndim, 0.16) * (1 + jitter(0.05)))
    roi_center = np.array((-0.3, 0.35, 0.0)[:ndim]) + jitter(0.02)
    roi = _ellipsoid(coords, roi_center, np.full(ndim, 0.2) * (1 + jitter(0.05)))
    roi &= brain & ~ventricle
    image = np.full(grid.dims, BACKGROUND)
    image[brain] = BRAIN
    image[ventricle & brain] = VENTRICLE
    image[roi] = ROI
    image = ndimage.gaussian_filter(image, smoothing_width(grid.dims))
    return (ScalarField(grid, image), Mask(grid, brain),
            Mask(grid, ventricle & brain), Mask(grid, roi))


def atrophy_direction(image, roi, ventricle):
    """
    The planted momentum of unit amplitude: the image gradient weighted
    towards the stat-ROI (which shrinks) and the ventricle (which expands).
    """
    width = smoothing_width(image.grid.dims)
    weight = ndimage.gaussian_filter(roi.data.astype(np.float64), width)
    weight += VENTRICLE_WEIGHT * ndimage.gaussian_filter(
        ventricle.data.astype(np.float64), width)
    gradient = spatial_gradient(image.data, image.grid.spacing)
    return VectorField(image.grid, weight * gradient)


def calibrate(direction, roi, rate, kernel, shoot_cfg, rel_tol=0.005,
              max_doublings=30, max_bisections=60):
    """
    The amplitude ``alpha`` for which shooting ``alpha * direction`` for one
    unit of time makes the stat-ROI lose ``rate`` percent of its volume.

    The amplitude is doubled until the target is bracketed, then bisected.
    """
    if rate == 0:
        return 0.0

    def score(alpha):
        momentum = VectorField(direction.grid, alpha * direction.data)
        try:
            phi = exponential_map(momentum, 1.0, shoot_cfg, kernel,
                                  forward=True)
        except DivergenceError as e:
            raise CalibrationError(
                "Shooting diverged at amplitude {0:g}".format(alpha)) from e
        return analytics.atrophy_score(phi, roi)

    low, high = 0.0, 1.0
    for _ in range(max_doublings):
        value = score(high)
        if abs(value - rate) <= rel_tol * rate:
            return high
        if value > rate:
            break
        low, high = high, 2.0 * high
    else:
        raise CalibrationError(
            "Could not bracket an atrophy rate of {0:g}%".format(rate))
    for _ in range(max_bisections):
        alpha = (low + high) / 2.0
        value = score(alpha)
        logger.debug(
            "Calibration bracket [%.6g, %.6g]: %.6g%% at %.6g",
            low, high, value, alpha)
        if abs(value - rate) <= rel_tol * rate:
            return alpha
        if value < rate:
            low = alpha
        else:
            high = alpha
    raise CalibrationError(
        "Bisection did not reach {0:g}% within tolerance".format(rate))


def generate_subject(spec, kernel, shoot_cfg):
    """
    Generate one subject: the phantom baseline, follow-ups shot along the
    planted geodesic with additive clipped Gaussian noise, and the ground
    truth forward maps.
    """
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid
    image, brain, ventricle, roi = phantom(grid, rng)
    direction = atrophy_direction(image, roi, ventricle)
    alpha = calibrate(direction, roi, spec.rate, kernel, shoot_cfg)
    m_star = VectorField(grid, alpha * direction.data)
    followups = []
    maps = OrderedDict()
    for t in spec.times:
        state = shoot(image, m_star, sgr.geodesic_time(t), shoot_cfg, kernel,
                      forward_map=True).final
        noisy = state.image.data + rng.normal(0.0, spec.noise, grid.dims)
        followups.append((t, ScalarField(grid, np.clip(noisy, 0.0, 1.0))))
        maps[t] = state.map
    series = sgr.LongitudinalSeries(
        baseline=image, followups=followups, mask=brain, subject=spec.subject)
    logger.debug(
        "Subject %s: %s at %.3g%%/unit (alpha %.6g)",
        spec.subject, spec.group, spec.rate, alpha)
    return Subject(spec, series, m_star, maps, roi, brain, alpha)


def _subject_seeds(seed, count):
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def planted_score(spec, cohort, t, rng):
    """
    The cognitive score at month ``t``: it falls with the cumulative planted
    atrophy.
    """
    atrophy = spec.rate * sgr.geodesic_time(t)
    return (cohort.score_base - cohort.score_gamma * atrophy
            + rng.normal(0.0, cohort.score_noise))


def plan_cohort(cohort):
    """
    The subject specs of a cohort and the planted covariates of every visit
    (as ``AtrophyRecord`` with backend ``'planted'``), without any images.
    """
    rng = np.random.default_rng(cohort.seed)
    seeds = _subject_seeds(cohort.seed, cohort.size)
    order = rng.permutation(cohort.size)
    training = {int(i) for i in order[
        :int(round(cohort.train_fraction * cohort.size))]}
    specs, records = [], []
    index = 0
    for group, size in cohort.groups.items():
        first, last = (CODES[name] for name in group.split('-'))
        mean, sd = cohort.rates.get(group, (0.0, 0.0))
        for _ in range(size):
            spec = SubjectSpec(
                subject='s{0:03d}'.format(index),
                seed=seeds[index],
                first_dx=first,
                last_dx=last,
                rate=max(0.0, float(rng.normal(mean, sd))),
                noise=cohort.noise,
                times=cohort.times,
                dims=cohort.dims,
                conversion=int(rng.integers(1, len(cohort.times) + 1)),
                training=index in training)
            specs.append(spec)
            for t, dx in zip((0.0,) + spec.times, spec.diagnoses()):
                records.append(analytics.AtrophyRecord(
                    subject=spec.subject, time=t,
                    atrophy=spec.rate * sgr.geodesic_time(t), dx=dx,
                    mmse=planted_score(spec, cohort, t, rng),
                    backend='planted', group=spec.group))
            index += 1
    return specs, records


def _save(storage, name, content):
    if storage.exists(name):
        storage.delete(name)
    return storage.save(name, ContentFile(content))


def save_subject(subject, storage, prefix='subjects'):
    """
    Write a subject's series and ground truth, returning its manifest entry.
    """
    spec = subject.spec
    base = '{0}/{1}'.format(prefix, spec.subject)
    entry = spec.as_dict()
    entry.update(
        group=spec.group,
        alpha=subject.alpha,
        series=sgr.save_series(subject.series, storage, base),
        roi=_save(storage, base + '/roi.gff', dumps(subject.roi)),
        brain=_save(storage, base + '/brain.gff', dumps(subject.brain)),
        m_star=_save(storage, base + '/m_star.gff', dumps(subject.m_star)),
        maps={'{0:g}'.format(t): _save(
            storage, '{0}/truth_t{1:03g}.gff'.format(base, t), dumps(phi))
            for t, phi in subject.maps.items()},
        dx=spec.diagnoses())
    return entry


def generate_cohort(cohort, storage, kernel, shoot_cfg, mapper=map):
    """
    Generate and store every subject of a cohort, with ``cohort.json`` (the
    manifest) and ``covariates.csv``. ``mapper`` runs the per-subject
    generation and may be parallel.

    Returns the manifest and the covariate records.
    """
    specs, records = plan_cohort(cohort)
    subjects = mapper(
        generate_subject, specs, [kernel] * len(specs),
        [shoot_cfg] * len(specs))
    entries = [save_subject(subject, storage) for subject in subjects]
    manifest = {'cohort': cohort.as_dict(), 'subjects': entries}
    _save(storage, 'covariates.csv', analytics.dumps_csv(
        [r.as_row() for r in records],
        analytics.ATROPHY_FIELDS + ('group',)).encode('utf-8'))
    _save(storage, 'cohort.json', json.dumps(
        manifest, indent=2, sort_keys=True).encode('utf-8'))
    logger.info("Generated %d synthetic subjects", len(entries))
    return manifest, records


def generate_pairs(subjects, regime='longitudinal', reg_cfg=None):
    """
    Training pairs ``(source, target, momentum, mask)``.

    Longitudinal pairs register a baseline to its own follow-ups and carry
    the planted unit-time momentum. Cross-sectional pairs register a baseline
    to the baseline of the next subject, labelled by optimisation.
    """
    if regime not in REGIMES:
        raise InvalidParameterError("Unknown regime {0!r}".format(regime))
    subjects = list(subjects)
    pairs = []
    if regime == 'longitudinal':
        for subject in subjects:
            for t, image in subject.series.followups:
                momentum = VectorField(
                    subject.m_star.grid,
                    sgr.geodesic_time(t) * subject.m_star.data)
                pairs.append((subject.series.baseline, image, momentum,
                              subject.brain))
        return pairs
    for index, subject in enumerate(subjects):
        other = subjects[(index + 1) % len(subjects)]
        if other is subject:
            continue
        momentum, _ = register_best_effort(
            subject.series.baseline, other.series.baseline, reg_cfg)
        pairs.append((subject.series.baseline, other.series.baseline,
                      momentum, subject.brain))
    return pairs
