"""
The stages of the pipeline. Each stage receives the running
:class:`~easy_geodesics.engine.Pipeline` and communicates with the others
only through artifacts in its storage.
"""
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass
from io import BytesIO

import numpy as np

from easy_geodesics import analytics, namers, predictor, sgr, statistics
from easy_geodesics.conf import settings
from easy_geodesics.engine import stage
from easy_geodesics.exceptions import (
    DegenerateInputError, EmptyDatasetError, InvalidParameterError)
from easy_geodesics.field import Mask, VectorField
from easy_geodesics.predictor.conf import settings as predictor_settings
from easy_geodesics.register import register_best_effort
from easy_geodesics.shooting import exponential_map
from easy_geodesics.synth import generate_cohort, phantom

logger = logging.getLogger('easy_geodesics.stages')

COHORT = 'cohort.json'
COVARIATES = 'covariates.csv'
REGISTRATIONS = 'registrations.json'
PREDICTIONS = 'predictions.json'
REGRESSIONS = 'regressions.json'
PREDICT_BACKENDS = ('pred', 'pred-corr')


def checkpoint_name(role):
    return 'models/{0}.{1}'.format(
        role, predictor_settings.GEODESICS_CHECKPOINT_EXTENSION)


PREDICTOR = checkpoint_name('predictor')
CORRECTOR = checkpoint_name('corrector')


@dataclass
class CohortSubject:
    entry: dict
    series: sgr.LongitudinalSeries
    roi: Mask
    brain: Mask

    @property
    def subject(self):
        return self.entry['subject']

    @property
    def training(self):
        return self.entry['training']


def load_subjects(pipeline, training=None):
    """
    The stored subjects of the cohort, optionally only the training (or
    only the held out) ones.
    """
    subjects = []
    for entry in pipeline.read_json(COHORT)['subjects']:
        if training is not None and entry['training'] != training:
            continue
        subjects.append(CohortSubject(
            entry=entry,
            series=sgr.load_series(pipeline.storage, entry['series']),
            roi=pipeline.read_field(entry['roi'], Mask),
            brain=pipeline.read_field(entry['brain'], Mask)))
    return subjects


def _key(t):
    return '{0:g}'.format(t)


def load_momenta(pipeline, subject, backend):
    """
    ``(geodesic time, momentum)`` of every follow-up of a subject.
    """
    if backend == 'opt':
        visits = pipeline.read_json(REGISTRATIONS)['subjects'][subject.subject]
        names = [visits[_key(t)]['momentum'] for t in subject.series.times]
    else:
        visits = pipeline.read_json(PREDICTIONS)['subjects'][subject.subject]
        names = [visits[_key(t)][backend] for t in subject.series.times]
    return [(subject.series.elapsed(t), pipeline.read_field(name, VectorField))
            for t, name in zip(subject.series.times, names)]


def available_backends(pipeline):
    backends = []
    if pipeline.exists(REGISTRATIONS):
        backends.append('opt')
    if pipeline.exists(PREDICTIONS):
        backends.extend(PREDICT_BACKENDS)
    return backends


def required_backends(pipeline):
    backends = available_backends(pipeline)
    if not backends:
        raise InvalidParameterError(
            "No momenta to work with: neither {0} nor {1} exists".format(
                REGISTRATIONS, PREDICTIONS))
    return backends


def load_model(pipeline, name):
    with pipeline.storage.open(name, 'rb') as f:
        return predictor.load_model(f)


def save_model(pipeline, name, model):
    content = BytesIO()
    predictor.save_model(model, content)
    pipeline.write_bytes(name, content.getvalue())
    pipeline.write_json(name.rsplit('.', 1)[0] + '.json', {
        'net_config': model.net_config.as_dict(),
        'seed': model.fingerprint.seed,
        'epochs': model.fingerprint.epochs,
        'losses': model.fingerprint.losses,
    })


@stage('cohort', 'kernel', 'shoot', 'seed', outputs=(COHORT, COVARIATES))
def synth(pipeline):
    config = pipeline.config
    generate_cohort(
        config.cohort, pipeline.storage, config.kernel, config.shoot,
        mapper=pipeline.map)


def register_series(series, reg_cfg):
    """
    Optimisation based registration of the baseline to every follow-up:
    ``(month, momentum, report)`` triples.
    """
    results = []
    for t, image in series.followups:
        momentum, report = register_best_effort(series.baseline, image, reg_cfg)
        results.append((t, momentum, report))
    return results


@stage('registration', 'kernel', 'shoot', inputs=(COHORT,),
       outputs=(REGISTRATIONS,))
def register(pipeline):
    subjects = load_subjects(pipeline)
    reg_cfg = pipeline.config.reg_config
    results = pipeline.map(
        register_series, [s.series for s in subjects],
        [reg_cfg] * len(subjects))
    registrations = OrderedDict()
    for subject, visits in zip(subjects, results):
        entries = registrations[subject.subject] = OrderedDict()
        for t, momentum, report in visits:
            name = pipeline.write_field(
                'momenta/opt/' + namers.default(subject.subject, t),
                momentum)
            entries[_key(t)] = {
                'momentum': name,
                'seconds': report.seconds,
                'iterations': report.iterations,
                'reason': report.reason,
                'final_overlay_error': report.final_overlay_error,
            }
    pipeline.write_json(REGISTRATIONS, {'subjects': registrations})


def training_pairs(pipeline):
    """
    ``(source, target, optimised momentum, brain)`` of every training
    follow-up.
    """
    pairs = []
    for subject in load_subjects(pipeline, training=True):
        momenta = load_momenta(pipeline, subject, 'opt')
        for (_, image), (_, momentum) in zip(
                subject.series.followups, momenta):
            pairs.append((subject.series.baseline, image, momentum,
                          subject.brain))
    if not pairs:
        raise EmptyDatasetError("The cohort has no training subjects")
    return pairs


@stage('net', 'train', 'seed', inputs=(REGISTRATIONS,),
       outputs=(PREDICTOR,))
def train_predictor(pipeline):
    config = pipeline.config
    net_cfg = config.net_config('prediction')
    dataset = predictor.PatchDataset.concatenate([
        predictor.extract_patches(source, target, momentum, mask, net_cfg)
        for source, target, momentum, mask in training_pairs(pipeline)])
    logger.info("Training the predictor on %d patches", len(dataset))
    model = predictor.train(dataset, net_cfg, config.train_config)
    save_model(pipeline, PREDICTOR, model)


@stage('net', 'train', 'kernel', 'shoot', 'seed', inputs=(PREDICTOR,),
       outputs=(CORRECTOR,))
def train_corrector(pipeline):
    config = pipeline.config
    pred = load_model(pipeline, PREDICTOR)
    dataset = predictor.make_correction_dataset(
        pred, training_pairs(pipeline), pred.net_config, config.shoot,
        config.kernel)
    logger.info("Training the corrector on %d patches", len(dataset))
    model = predictor.train(
        dataset, config.net_config('correction'), config.train_config)
    save_model(pipeline, CORRECTOR, model)


@stage('kernel', 'shoot', inputs=(PREDICTOR, CORRECTOR),
       outputs=(PREDICTIONS,))
def predict(pipeline):
    config = pipeline.config
    pred = load_model(pipeline, PREDICTOR)
    corr = load_model(pipeline, CORRECTOR)
    predictions = OrderedDict()
    for subject in load_subjects(pipeline):
        series = subject.series
        entries = predictions[subject.subject] = OrderedDict()
        for t, image in series.followups:
            started = time.perf_counter()
            momentum = predictor.predict_momentum(
                pred, series.baseline, image, series.mask)
            seconds = time.perf_counter() - started
            started = time.perf_counter()
            corrected = predictor.predict_with_correction(
                pred, corr, series.baseline, image, series.mask,
                shoot_cfg=config.shoot, kernel=config.kernel)
            corrected_seconds = time.perf_counter() - started
            name = namers.default(subject.subject, t)
            entries[_key(t)] = {
                'pred': pipeline.write_field('momenta/pred/' + name, momentum),
                'pred-corr': pipeline.write_field(
                    'momenta/pred-corr/' + name, corrected),
                'seconds': seconds,
                'seconds_corr': corrected_seconds,
            }
    pipeline.write_json(PREDICTIONS, {'subjects': predictions})


def regress_subject(series, roi, momenta_by_backend, reg_cfg):
    """
    Regression geodesics of one subject for every backend, with the atrophy,
    overlay and extrapolation measurements made on them.
    """
    out = {'geodesics': {}, 'atrophy': [], 'overlay': [], 'forecast': []}
    for backend, momenta in momenta_by_backend.items():
        geodesic = sgr.regress(series, backend, reg_cfg, momenta=momenta)
        out['geodesics'][backend] = geodesic
        for t, _ in series.followups:
            state = sgr.state_at(geodesic, t)
            out['atrophy'].append(
                ('sgr-' + backend, t, analytics.atrophy_score(state.map, roi)))
        pairwise = sgr.pairwise_maps(series, backend, reg_cfg, momenta=momenta)
        for t, phi in pairwise:
            out['atrophy'].append(
                ('pairwise-' + backend, t,
                 analytics.atrophy_score(phi, roi)))
        for t, regressed, original in sgr.regression_overlay_errors(
                geodesic, series):
            out['overlay'].append((backend, t, regressed, original))
        if len(series) < 2:
            continue
        # Hold out the last follow-up and extrapolate to it.
        t_last = series.times[-1]
        measured = analytics.atrophy_score(
            sgr.state_at(geodesic, t_last).map, roi)
        truncated = sgr.LongitudinalSeries(
            series.baseline, series.followups[:-1], series.mask, series.t0,
            series.subject)
        _, state = sgr.forecast(
            truncated, t_last, backend, reg_cfg, momenta=momenta[:-1])
        out['forecast'].append((
            backend, 'forecast', t_last,
            analytics.atrophy_score(state.map, roi), measured))
        replaced = sgr.replace_impute(truncated, t_last)
        imputed = momenta[:-1] + [(series.elapsed(t_last), momenta[-2][1])]
        geodesic = sgr.regress(replaced, backend, reg_cfg, momenta=imputed)
        out['forecast'].append((
            backend, 'replace', t_last,
            analytics.atrophy_score(sgr.state_at(geodesic, t_last).map, roi),
            measured))
    return out


def covariates(pipeline):
    """
    Planted diagnosis, cognitive score and group per ``(subject, month)``.
    """
    table = {}
    for row in analytics.loads_csv(pipeline.read_text(COVARIATES)):
        table[row['subject'], float(row['time'])] = row
    return table


@stage('registration', 'kernel', 'shoot',
       inputs=(REGISTRATIONS, PREDICTIONS),
       outputs=(REGRESSIONS, 'atrophy.csv', 'overlay.csv', 'forecast.csv'))
def regress(pipeline):
    subjects = load_subjects(pipeline)
    backends = required_backends(pipeline)
    reg_cfg = pipeline.config.reg_config
    momenta = [
        OrderedDict((b, load_momenta(pipeline, s, b)) for b in backends)
        for s in subjects]
    results = pipeline.map(
        regress_subject, [s.series for s in subjects],
        [s.roi for s in subjects], momenta, [reg_cfg] * len(subjects))
    table = covariates(pipeline)
    regressions = OrderedDict()
    records, overlay, forecasts = [], [], []
    for subject, result in zip(subjects, results):
        sid = subject.subject
        regressions[sid] = OrderedDict(
            (backend, sgr.save_geodesic(
                geodesic, pipeline.storage,
                'geodesics/{0}/{1}'.format(backend, sid)))
            for backend, geodesic in result['geodesics'].items())
        for backend, t, atrophy in result['atrophy']:
            row = table[sid, t]
            records.append(analytics.AtrophyRecord(
                subject=sid, time=t, atrophy=atrophy, dx=int(row['dx']),
                mmse=float(row['mmse']), backend=backend,
                group=row['group']))
        for backend, t, regressed, original in result['overlay']:
            overlay.append(OrderedDict(
                subject=sid, backend=backend, time=t,
                regression=regressed, baseline=original))
        planted = subject.entry['rate']
        for backend, method, t, atrophy, measured in result['forecast']:
            forecasts.append(OrderedDict(
                subject=sid, backend=backend, method=method, time=t,
                atrophy=atrophy, measured=measured,
                planted=planted * sgr.geodesic_time(t)))
    pipeline.write_json(REGRESSIONS, {'subjects': regressions})
    pipeline.write_text('atrophy.csv', analytics.dumps_csv(
        analytics.atrophy_rows(records),
        analytics.ATROPHY_FIELDS + ('group',)))
    pipeline.write_text('overlay.csv', analytics.dumps_csv(
        overlay, OVERLAY_FIELDS))
    pipeline.write_text('forecast.csv', analytics.dumps_csv(
        forecasts, FORECAST_FIELDS))


OVERLAY_FIELDS = ('subject', 'backend', 'time', 'regression', 'baseline')
FORECAST_FIELDS = ('subject', 'backend', 'method', 'time', 'atrophy',
                   'measured', 'planted')
TEST_FIELDS = ('comparison', 'n', 't', 'p_t', 'wilcoxon', 'p_wilcoxon')
COMPARISONS = (
    ('sgr-opt', 'pairwise-opt'),
    ('sgr-pred', 'pairwise-pred'),
    ('sgr-pred-corr', 'pairwise-pred-corr'),
    ('sgr-pred-corr', 'sgr-pred'),
)


def load_records(pipeline):
    return [
        analytics.AtrophyRecord(
            subject=row['subject'], time=float(row['time']),
            atrophy=float(row['atrophy']), dx=int(row['dx']),
            mmse=float(row['mmse']), backend=row['backend'],
            group=row['group'])
        for row in analytics.loads_csv(pipeline.read_text('atrophy.csv'))]


def method_tests(correlations):
    """
    Paired tests of correlation magnitudes between backends, pairing the
    cognitive score and diagnosis correlations of equal visit times.
    """
    by_backend = {}
    for row in correlations:
        by_backend.setdefault(row['backend'], {})[row['time']] = row
    rows = []
    for first, second in COMPARISONS:
        if first not in by_backend or second not in by_backend:
            continue
        times = sorted(set(by_backend[first]) & set(by_backend[second]))
        a, b = [], []
        for t in times:
            for name in ('rho_mmse', 'rho_dx'):
                x, y = by_backend[first][t][name], by_backend[second][t][name]
                if np.isfinite(x) and np.isfinite(y):
                    a.append(x)
                    b.append(y)
        if len(a) < 2:
            continue
        row = OrderedDict(comparison='{0} vs {1}'.format(first, second))
        row.update(analytics.compare_methods(a, b))
        rows.append(row)
    return rows


def deformation_error_rows(pipeline, subjects, percentiles):
    """
    Percentiles of the deformation error of predicted maps against the
    optimised ones, over the held out subjects.
    """
    config = pipeline.config
    errors = OrderedDict((b, []) for b in PREDICT_BACKENDS)
    for subject in subjects:
        reference = load_momenta(pipeline, subject, 'opt')
        for backend in PREDICT_BACKENDS:
            for (_, m_ref), (_, m) in zip(
                    reference, load_momenta(pipeline, subject, backend)):
                errors[backend].append(analytics.deformation_errors(
                    exponential_map(m, 1.0, config.shoot, config.kernel,
                                    forward=True),
                    exponential_map(m_ref, 1.0, config.shoot, config.kernel,
                                    forward=True),
                    subject.brain))
    rows = []
    for backend, values in errors.items():
        if not values:
            continue
        row = OrderedDict(backend=backend)
        row.update(zip(
            ['p{0:g}'.format(p) for p in percentiles],
            statistics.percentiles(np.concatenate(values), percentiles)))
        rows.append(row)
    return rows


def final_maps(pipeline, subjects, backend):
    """
    Forward maps of every subject's regression geodesic at its last visit.
    """
    config = pipeline.config
    maps = []
    for subject in subjects:
        series = subject.series
        geodesic = sgr.regress(
            series, backend, config.reg_config,
            momenta=load_momenta(pipeline, subject, backend))
        maps.append(sgr.map_at(geodesic, series.times[-1]))
    return maps


@stage('backend', inputs=('atrophy.csv', REGRESSIONS),
       outputs=('fits.csv', 'correlations.csv', 'tests.csv'))
def analyze(pipeline):
    backends = required_backends(pipeline)
    records = load_records(pipeline)
    fits = analytics.group_fits(records)
    pipeline.write_text('fits.csv', analytics.dumps_csv(
        analytics.fit_rows(fits), analytics.FIT_FIELDS))
    correlations = analytics.correlation_table(records)
    pipeline.write_text('correlations.csv', analytics.dumps_csv(
        correlations, analytics.CORRELATION_FIELDS))
    pipeline.write_text('tests.csv', analytics.dumps_csv(
        method_tests(correlations), TEST_FIELDS))

    subjects = load_subjects(pipeline)
    percentiles = settings.GEODESICS_PERCENTILES
    if 'opt' in backends and PREDICT_BACKENDS[0] in backends:
        held_out = [s for s in subjects if not s.training] or subjects
        pipeline.write_text('deformation_errors.csv', analytics.dumps_csv(
            deformation_error_rows(pipeline, held_out, percentiles),
            ('backend',) + tuple('p{0:g}'.format(p) for p in percentiles)))

    backend = pipeline.config.backend
    if backend not in backends:
        backend = backends[0]
    maps = final_maps(pipeline, subjects, backend)
    groups = OrderedDict()
    for subject, phi in zip(subjects, maps):
        groups.setdefault(subject.entry['group'], []).append(phi)
    for group, members in groups.items():
        pipeline.write_field(
            'analysis/mean_jd_{0}.gff'.format(group),
            analytics.mean_jd_map(members), preview=True)

    # Subjects share the canonical phantom as their atlas space.
    _, _, _, roi = phantom(subjects[0].series.grid)
    table = covariates(pipeline)
    local_maps, scores = [], []
    for subject, phi in zip(subjects, maps):
        t_last = subject.series.times[-1]
        local_maps.append(analytics.local_atrophy(phi, roi))
        scores.append(float(table[subject.subject, t_last]['mmse']))
    rows = []
    try:
        field, selected = analytics.local_correlations(local_maps, scores, roi)
    except DegenerateInputError:
        selected = []
    else:
        pipeline.write_field(
            'analysis/local_correlation_{0}.gff'.format(backend), field,
            preview=True)
    if len(selected):
        rows.append(OrderedDict(
            backend=backend, voxels=len(selected),
            median=float(np.median(selected)),
            strongest=float(selected[0]), weakest=float(selected[-1])))
    pipeline.write_text('local_correlations.csv', analytics.dumps_csv(
        rows, ('backend', 'voxels', 'median', 'strongest', 'weakest')))
