import json
import logging
import os
from io import BytesIO

from django.core.files.base import ContentFile
from django.core.management.base import BaseCommand, CommandError

from easy_geodesics import reports, sgr
from easy_geodesics.conf import settings
from easy_geodesics.engine import Pipeline, PipelineConfig
from easy_geodesics.exceptions import GeodesicsError
from easy_geodesics.field import (
    ScalarField, dumps, read_field, save_slice, write_field)
from easy_geodesics.predictor import load_model
from easy_geodesics.register import register_best_effort
from easy_geodesics.storage import ArtifactFileSystemStorage
from easy_geodesics.stages import CORRECTOR, PREDICTOR

STAGE_COMMANDS = {
    'synth': 'easy_geodesics.stages.synth',
    'register': 'easy_geodesics.stages.register',
    'train-predictor': 'easy_geodesics.stages.train_predictor',
    'train-corrector': 'easy_geodesics.stages.train_corrector',
    'predict': 'easy_geodesics.stages.predict',
    'regress': 'easy_geodesics.stages.regress',
    'analyze': 'easy_geodesics.stages.analyze',
}
REGRESSION = 'regression'
LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO}


class GeodesicsRunner:
    """
    Run pipeline stages and single-series commands, writing a short summary
    to ``stdout``.
    """

    def __init__(self, stdout, stderr):
        self.stdout = stdout
        self.stderr = stderr

    def config(self, options, stages=None):
        if options.get('config'):
            config = PipelineConfig.from_file(
                options['config'], options.get('overrides') or ())
        else:
            config = PipelineConfig().with_overrides(
                options.get('overrides') or ())
        values = config.as_dict()
        if options.get('out'):
            values['paths']['out'] = options['out']
        if stages is not None:
            values['stages'] = stages
        return PipelineConfig(values)

    def run(self, config):
        report = Pipeline(config).run()
        for result in report['stages']:
            self.stdout.write("{0:<40} {1:>7} {2:>9.2f}s".format(
                result['stage'], result['status'], result['seconds']))
        return report

    def run_pipeline(self, options):
        config = self.config(options)
        self.run(config)
        storage = ArtifactFileSystemStorage(config.out)
        self.stdout.write(reports.render_report(storage))

    def run_stage(self, subcommand, options):
        self.run(self.config(options, stages=[STAGE_COMMANDS[subcommand]]))

    def _models(self, options, backend):
        if backend == 'opt':
            return None, None
        if not options.get('models'):
            raise CommandError(
                "The {0!r} backend needs --models".format(backend))
        storage = ArtifactFileSystemStorage(options['models'])
        with storage.open(PREDICTOR, 'rb') as f:
            pred = load_model(f)
        corr = None
        if backend == 'pred-corr':
            with storage.open(CORRECTOR, 'rb') as f:
                corr = load_model(f)
        return pred, corr

    def _output(self, options):
        if not options.get('out'):
            raise CommandError("--out is required with --series")
        return ArtifactFileSystemStorage(options['out'])

    def _save(self, storage, name, content):
        return storage.save(name, ContentFile(content))

    def _series(self, options):
        if not options.get('series'):
            raise CommandError("--series is required")
        path = os.path.abspath(options['series'])
        storage = ArtifactFileSystemStorage(os.path.dirname(path))
        return sgr.load_series(storage, os.path.basename(path))

    def register(self, options):
        if not (options.get('target') and options.get('out')):
            raise CommandError("--source needs --target and --out")
        source = read_field(options['source'], kind=ScalarField)
        target = read_field(options['target'], kind=ScalarField)
        momentum, report = register_best_effort(
            source, target, self.config(options).reg_config)
        write_field(momentum, options['out'])
        self.stdout.write(json.dumps(report.as_dict(), indent=2))

    def regress(self, options):
        series = self._series(options)
        backend = options['backend']
        pred, corr = self._models(options, backend)
        geodesic = sgr.regress(
            series, backend, self.config(options).reg_config,
            pred=pred, corr=corr)
        out = self._output(options)
        name = sgr.save_geodesic(geodesic, out, REGRESSION)
        self.stdout.write("{0:<40} {1:>7}".format(
            "Regression energy:", '{0:.6g}'.format(geodesic.energy())))
        self.stdout.write("Wrote {0}".format(out.path(name)))

    def forecast(self, options):
        series = self._series(options)
        backend = options['backend']
        pred, corr = self._models(options, backend)
        geodesic, state = sgr.forecast(
            series, options['time'], backend,
            self.config(options).reg_config, pred=pred, corr=corr)
        out = self._output(options)
        sgr.save_geodesic(geodesic, out, REGRESSION)
        stem = 'forecast_t{0:03g}'.format(options['time'])
        self._save(out, stem + '_image.gff', dumps(state.image))
        self._save(out, stem + '_image.pgm',
                   save_slice(state.image, BytesIO()).read())
        name = self._save(out, stem + '_map.gff', dumps(state.map))
        self.stdout.write("Wrote {0}".format(out.path(name)))

    def report(self, options):
        storage = ArtifactFileSystemStorage(options['directory'])
        self.stdout.write(reports.render_report(storage), ending='')


class Command(BaseCommand):
    help = """ Synthesise, register, predict, regress and analyse geodesics. """

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand')
        subparsers.required = True
        subcommands = {}
        for name in list(STAGE_COMMANDS) + ['pipeline']:
            subcommands[name] = subparsers.add_parser(name)
            self.add_config_arguments(subcommands[name])
        subcommands['register'].add_argument(
            '--source', help='Register this GFF image (instead of the stage).')
        subcommands['register'].add_argument('--target')
        self.add_series_arguments(subcommands['regress'])
        forecast = subparsers.add_parser('forecast')
        self.add_config_arguments(forecast)
        self.add_series_arguments(forecast)
        forecast.add_argument(
            '--time', type=float, required=True,
            help='The month to extrapolate to.')
        report = subparsers.add_parser('report')
        report.add_argument('directory', help='The analysis directory.')

    def add_config_arguments(self, parser):
        parser.add_argument(
            '--config', help='A JSON pipeline configuration file.')
        parser.add_argument(
            '--out', help='Where artifacts are written.')
        parser.add_argument(
            '--set', action='append', dest='overrides', default=[],
            metavar='SECTION.KEY=VALUE',
            help='Override one configuration value.')

    def add_series_arguments(self, parser):
        parser.add_argument(
            '--series', help='A series manifest (series.json).')
        parser.add_argument(
            '--backend', default=settings.GEODESICS_BACKEND,
            choices=sorted(sgr.BACKENDS))
        parser.add_argument(
            '--models', help='Directory holding the trained models.')

    def handle(self, *args, **options):
        verbosity = int(options.get('verbosity', 1))
        logging.getLogger('easy_geodesics').setLevel(
            LOG_LEVELS.get(verbosity, logging.DEBUG))
        runner = GeodesicsRunner(self.stdout, self.stderr)
        subcommand = options['subcommand']
        try:
            if subcommand == 'pipeline':
                runner.run_pipeline(options)
            elif subcommand == 'report':
                runner.report(options)
            elif subcommand == 'forecast':
                runner.forecast(options)
            elif subcommand == 'register' and options.get('source'):
                runner.register(options)
            elif subcommand == 'regress' and options.get('series'):
                runner.regress(options)
            else:
                runner.run_stage(subcommand, options)
        except GeodesicsError as e:
            raise CommandError(str(e))
