"""
The pipeline driver: configuration, artifact access, stage execution with
content-stamp caching, and the run report.
"""
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from functools import partial
from io import BytesIO

import numpy as np
from django.core.files.base import ContentFile
from django.utils.module_loading import import_string
from scipy import fft

from easy_geodesics import namers, signals
from easy_geodesics.conf import settings
from easy_geodesics.exceptions import (
    GeodesicsError, InvalidParameterError, StageError)
from easy_geodesics.field import dumps, loads, save_slice
from easy_geodesics.kernel import KernelParams
from easy_geodesics.options import StageOptions
from easy_geodesics.predictor import NetConfig, TrainConfig
from easy_geodesics.register import RegConfig
from easy_geodesics.shooting import ShootConfig
from easy_geodesics.storage import get_storage
from easy_geodesics.synth import CohortSpec

logger = logging.getLogger('easy_geodesics.engine')

SECTIONS = ('kernel', 'shoot', 'registration', 'net', 'train', 'cohort')
STAMPS = 'stamps.json'
RUN_REPORT = 'run_report.json'


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


class PipelineConfig:
    """
    A pipeline configuration document: one section per module plus
    ``paths``, ``backend``, ``seed``, ``parallelism`` and ``stages``.

    Missing values fall back to the ``GEODESICS_*`` settings. Every section
    is validated by building its configuration object.
    """

    def __init__(self, values=None):
        values = deepcopy(values or {})
        unknown = set(values) - set(SECTIONS) - {
            'paths', 'backend', 'seed', 'parallelism', 'stages'}
        if unknown:
            raise InvalidParameterError(
                "Unknown configuration sections: {0}".format(
                    ', '.join(sorted(unknown))))
        for section in SECTIONS:
            values.setdefault(section, {})
        values.setdefault('paths', {})
        values.setdefault('backend', settings.GEODESICS_BACKEND)
        values.setdefault('seed', settings.GEODESICS_SEED)
        values.setdefault('parallelism', settings.GEODESICS_PARALLELISM)
        values.setdefault('stages', None)
        self.values = values
        self.validate()

    @classmethod
    def from_file(cls, path, overrides=()):
        with open(path) as f:
            values = json.load(f)
        return cls(values).with_overrides(overrides)

    def with_overrides(self, overrides):
        """
        A copy with ``section.key=value`` overrides applied; values are
        parsed as JSON, falling back to plain strings.
        """
        values = deepcopy(self.values)
        for override in overrides:
            path, sep, text = override.partition('=')
            if not sep or not path:
                raise InvalidParameterError(
                    "Overrides look like section.key=value, not {0!r}".format(
                        override))
            keys = path.split('.')
            target = values
            for key in keys[:-1]:
                target = target.setdefault(key, {})
            target[keys[-1]] = _parse_value(text)
        return type(self)(values)

    def validate(self):
        if self.backend not in ('opt', 'pred', 'pred-corr'):
            raise InvalidParameterError(
                "Unknown backend {0!r}".format(self.backend))
        if int(self.parallelism) < 1:
            raise InvalidParameterError("parallelism must be at least 1")
        # Building the configuration objects validates every section.
        return (self.reg_config, self.net_config(), self.train_config,
                self.cohort)

    def as_dict(self):
        return deepcopy(self.values)

    def section(self, name):
        return self.values[name]

    @property
    def backend(self):
        return self.values['backend']

    @property
    def seed(self):
        return int(self.values['seed'])

    @property
    def parallelism(self):
        return int(self.values['parallelism'])

    @property
    def out(self):
        return self.values['paths'].get('out')

    @property
    def stages(self):
        stages = self.values['stages']
        if stages is None:
            return list(settings.GEODESICS_STAGES)
        return list(stages)

    @property
    def kernel(self):
        return KernelParams.from_dict(self.values['kernel'])

    @property
    def shoot(self):
        return ShootConfig.from_dict(self.values['shoot'])

    @property
    def reg_config(self):
        return RegConfig.from_dict(
            self.values['registration'], shoot=self.shoot, kernel=self.kernel)

    def net_config(self, role='prediction'):
        return NetConfig.from_dict(
            self.values['net'], dim=len(self.cohort.dims), role=role)

    @property
    def train_config(self):
        values = dict(self.values['train'])
        values.setdefault('seed', self.seed)
        return TrainConfig.from_dict(values)

    @property
    def cohort(self):
        return CohortSpec.from_dict(self.values['cohort'], seed=self.seed)


def stage(*sections, inputs=(), outputs=()):
    """
    Declare what a stage callable depends on (configuration ``sections`` and
    ``inputs`` artifacts) and which ``outputs`` it writes.
    """
    def decorator(func):
        func.sections = sections
        func.inputs = inputs
        func.outputs = outputs
        return func
    return decorator


def single_threaded(func, *args):
    """
    Call ``func`` with the FFTs of the kernel held to one thread.
    """
    with fft.set_workers(1):
        return func(*args)


class Pipeline:
    """
    Runs a configured list of stages against an artifact storage.
    """

    def __init__(self, config, storage=None):
        self.config = config
        if storage is None:
            storage = get_storage(config.out)
        self.storage = storage
        self.results = []
        self.interrupted = False

    # Artifacts.

    def exists(self, name):
        return self.storage.exists(name)

    def read_bytes(self, name):
        with self.storage.open(name, 'rb') as f:
            return f.read()

    def write_bytes(self, name, content):
        if self.storage.exists(name):
            self.storage.delete(name)
        return self.storage.save(name, ContentFile(content))

    def read_json(self, name):
        return json.loads(self.read_bytes(name).decode('utf-8'))

    def write_json(self, name, value):
        return self.write_bytes(name, json.dumps(
            value, indent=2, sort_keys=True).encode('utf-8'))

    def read_text(self, name):
        return self.read_bytes(name).decode('utf-8')

    def write_text(self, name, text):
        return self.write_bytes(name, text.encode('utf-8'))

    def read_field(self, name, kind=None):
        return loads(self.read_bytes(name), kind=kind)

    def write_field(self, name, field, preview=False):
        """
        Save a field as GFF, with an 8-bit PGM slice next to it when
        ``preview`` is set.
        """
        saved = self.write_bytes(name, dumps(field))
        if preview:
            base = name.rsplit('.', 1)[0]
            self.write_bytes(base + '.pgm', save_slice(field, BytesIO()).read())
        return saved

    # Execution.

    def map(self, func, *iterables):
        """
        ``map`` over subjects, in worker processes when the configured
        parallelism allows. Results keep their input order.
        """
        if self.config.parallelism > 1:
            with ProcessPoolExecutor(self.config.parallelism) as executor:
                return list(executor.map(
                    partial(single_threaded, func), *iterables))
        return list(map(func, *iterables))

    def _input_bytes(self, func):
        return [self.read_bytes(name) for name in func.inputs
                if self.exists(name)]

    def stamp(self, name, func, previous):
        options = StageOptions(
            (section, self.config.section(section))
            for section in func.sections)
        return namers.stage_stamp(
            name, options.prepared_options(), self._input_bytes(func),
            previous=previous)

    def _load_stamps(self):
        if self.exists(STAMPS):
            return self.read_json(STAMPS)
        return {}

    def _record(self, sender, pipeline, status, seconds, **kwargs):
        if pipeline is self:
            self.results.append({
                'stage': sender, 'status': status,
                'seconds': seconds})

    def run(self):
        """
        Run every configured stage in order. A stage whose stamp and outputs
        are unchanged since its last run is skipped as ``cached``.

        Returns the run report; a failing stage raises :class:`StageError`
        after the report has been written. Errors that are not
        :class:`GeodesicsError` are wrapped the same way.
        """
        signals.stage_finished.connect(self._record)
        self.results = []
        self.interrupted = True
        stamps = self._load_stamps()
        previous = ''
        try:
            for path in self.config.stages:
                func = import_string(path)
                name = path.rsplit('.', 1)[-1]
                stamp = self.stamp(name, func, previous)
                previous = stamp
                signals.stage_started.send(
                    sender=name, pipeline=self)
                if stamps.get(name) == stamp and all(
                        self.exists(output) for output in func.outputs):
                    signals.stage_finished.send(
                        sender=name, pipeline=self,
                        status='cached', seconds=0.0)
                    continue
                started = time.perf_counter()
                try:
                    with fft.set_workers(self.config.parallelism):
                        func(self)
                except Exception as e:
                    signals.stage_finished.send(
                        sender=name, pipeline=self,
                        status='failed',
                        seconds=time.perf_counter() - started)
                    stamps.pop(name, None)
                    self.write_json(STAMPS, stamps)
                    if not isinstance(e, GeodesicsError):
                        logger.exception("Unexpected error in stage %s", name)
                    raise StageError(str(e), stage=name) from e
                stamps[name] = stamp
                self.write_json(STAMPS, stamps)
                signals.stage_finished.send(
                    sender=name, pipeline=self, status='ran',
                    seconds=time.perf_counter() - started)
            self.interrupted = False
        finally:
            signals.stage_finished.disconnect(self._record)
            report = self.report()
            if self.config.stages:
                self.write_json(RUN_REPORT, report)
        return report

    def efficiency(self):
        """
        Mean seconds per optimised registration and per prediction with and
        without correction, and how many times faster each prediction is.
        """
        def mean_seconds(name, key='seconds'):
            if not self.exists(name):
                return None
            seconds = [
                entry[key]
                for visits in self.read_json(name)['subjects'].values()
                for entry in visits.values() if key in entry]
            return float(np.mean(seconds)) if seconds else None

        def ratio(slow, fast):
            return slow / fast if slow and fast else None

        registration = mean_seconds('registrations.json')
        prediction = mean_seconds('predictions.json')
        corrected = mean_seconds('predictions.json', 'seconds_corr')
        return {
            'registration_seconds': registration,
            'prediction_seconds': prediction,
            'prediction_corr_seconds': corrected,
            'speedup': ratio(registration, prediction),
            'speedup_corr': ratio(registration, corrected),
        }

    def report(self):
        failed = self.interrupted or any(
            r['status'] == 'failed' for r in self.results)
        return {
            'status': 'failed' if failed else 'ok',
            'stages': list(self.results),
            'efficiency': self.efficiency(),
            'config': self.config.as_dict(),
        }
