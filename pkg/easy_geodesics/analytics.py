"""
Atrophy scores, overlay and deformation errors, and the cohort level
analyses built from them.

Atrophy is measured on forward maps (baseline to follow-up) evaluated over a
stat-ROI in baseline space: positive scores mean the region lost volume.
"""
import csv
import io
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from easy_geodesics import statistics
from easy_geodesics.conf import settings
from easy_geodesics.exceptions import DegenerateInputError, EmptyDatasetError
from easy_geodesics.field import ScalarField, check_grids, jacobian_determinant

DIAGNOSES = {0: 'NC', 1: 'MCI', 2: 'AD'}
CHANGE_GROUPS = ('NC-NC', 'NC-MCI', 'MCI-MCI', 'MCI-NC', 'MCI-AD', 'AD-AD')


@dataclass
class AtrophyRecord:
    subject: str
    time: float
    atrophy: float
    dx: int
    mmse: float
    backend: str = 'opt'
    group: str = ''

    def __post_init__(self):
        if not np.isfinite(self.atrophy):
            raise DegenerateInputError("Atrophy must be finite")
        if self.dx not in DIAGNOSES:
            raise DegenerateInputError(
                "Unknown diagnosis code {0!r}".format(self.dx))

    def as_row(self):
        return asdict(self)


def _roi_flags(roi):
    if roi.count == 0:
        raise DegenerateInputError("The stat-ROI is empty")
    return roi.flags


def atrophy_score(phi, roi):
    """
    ``(1 - mean Jacobian determinant over the ROI) * 100``.
    """
    check_grids(phi, roi)
    flags = _roi_flags(roi)
    determinant = jacobian_determinant(phi).data
    return float((1.0 - determinant[flags].mean()) * 100.0)


def local_atrophy(phi, roi):
    """
    Voxelwise ``(1 - det) * 100`` inside the ROI, zero outside.
    """
    check_grids(phi, roi)
    flags = _roi_flags(roi)
    determinant = jacobian_determinant(phi).data
    return ScalarField(phi.grid, np.where(flags, (1.0 - determinant) * 100.0, 0.0))


def overlay_error(regressed, measured, brain):
    """
    Mean absolute intensity difference over the brain mask.
    """
    check_grids(regressed, measured, brain)
    flags = _roi_flags(brain)
    return float(np.abs(regressed.data - measured.data)[flags].mean())


def deformation_errors(pred, ref, mask=None):
    """
    Voxelwise Euclidean distance between two maps (in voxels) over a mask.
    """
    check_grids(pred, ref, mask)
    distances = np.sqrt(((pred.positions - ref.positions) ** 2).sum(axis=0))
    if mask is not None:
        distances = distances[_roi_flags(mask)]
    return distances.ravel()


def deformation_error_percentiles(pred, ref, mask=None, percentiles=None):
    """
    The requested percentiles of :func:`deformation_errors`, as an ordered
    ``{percentile: error}`` mapping.
    """
    if percentiles is None:
        percentiles = settings.GEODESICS_PERCENTILES
    values = statistics.percentiles(
        deformation_errors(pred, ref, mask), percentiles)
    return OrderedDict(zip(percentiles, values))


def mean_jd_map(maps):
    """
    Voxelwise mean Jacobian determinant of a group of maps.
    """
    maps = list(maps)
    if not maps:
        raise EmptyDatasetError("No maps to average")
    check_grids(*maps)
    total = sum(jacobian_determinant(phi).data for phi in maps)
    return ScalarField(maps[0].grid, total / len(maps))


def diagnostic_change_group(first, last):
    """
    The diagnosis-change group of a trajectory from its first and last
    diagnosis codes. Reversions from AD are not a group (``None``).
    """
    if first == 0:
        return 'NC-NC' if last == 0 else 'NC-MCI'
    if first == 1:
        return {0: 'MCI-NC', 1: 'MCI-MCI', 2: 'MCI-AD'}[last]
    if first == 2 and last == 2:
        return 'AD-AD'
    return None


def group_fits(records):
    """
    Line fits of atrophy over time per diagnosis-change group and backend.

    Returns an ordered mapping of ``(backend, group)`` to ``FitResult``;
    groups with too few points are left out.
    """
    points = OrderedDict()
    for record in sorted(records, key=lambda r: (r.backend, r.group)):
        if record.group:
            points.setdefault((record.backend, record.group), []).append(
                (record.time, record.atrophy))
    fits = OrderedDict()
    for key, values in points.items():
        try:
            fits[key] = statistics.linfit_ci(values)
        except DegenerateInputError:
            continue
    return fits


def correlation_table(records, q=None):
    """
    Spearman correlations of atrophy with the cognitive score and with the
    diagnosis per ``(time, backend)``, with Benjamini-Hochberg flags over
    all p-values of the table.
    """
    if q is None:
        q = settings.GEODESICS_FDR_Q
    groups = OrderedDict()
    for record in sorted(records, key=lambda r: (r.time, r.backend)):
        groups.setdefault((record.time, record.backend), []).append(record)
    rows = []
    for (time, backend), members in groups.items():
        atrophy = [r.atrophy for r in members]
        row = OrderedDict(time=time, backend=backend)
        for name, values in (('mmse', [r.mmse for r in members]),
                             ('dx', [r.dx for r in members])):
            try:
                rho, p = statistics.spearman(atrophy, values)
            except DegenerateInputError:
                rho, p = float('nan'), 1.0
            row['rho_' + name] = rho
            row['p_' + name] = p
        row['n'] = len(members)
        rows.append(row)
    flags = statistics.benjamini_hochberg(
        [p for row in rows for p in (row['p_mmse'], row['p_dx'])], q)
    for index, row in enumerate(rows):
        row['bh_flag'] = int(flags[2 * index] or flags[2 * index + 1])
        row['bh_mmse'] = int(flags[2 * index])
        row['bh_dx'] = int(flags[2 * index + 1])
    return rows


def local_correlations(local_maps, scores, roi, fraction=None):
    """
    Voxelwise Spearman correlation between local atrophy and a score across
    subjects, summarised by the ``fraction`` of ROI voxels with the largest
    magnitude.

    Returns the correlation field (zero outside the ROI) and the selected
    correlations, largest magnitude first.
    """
    if fraction is None:
        fraction = settings.GEODESICS_TOP_FRACTION
    local_maps = list(local_maps)
    if len(local_maps) != len(scores):
        raise DegenerateInputError("One score per local atrophy map")
    check_grids(roi, *local_maps)
    flags = _roi_flags(roi)
    stacked = np.stack([m.data[flags] for m in local_maps])
    rhos = np.zeros(stacked.shape[1])
    for voxel in range(stacked.shape[1]):
        try:
            rhos[voxel] = statistics.spearman(stacked[:, voxel], scores)[0]
        except DegenerateInputError:
            rhos[voxel] = 0.0
    field = np.zeros(roi.grid.dims)
    field[flags] = rhos
    selected = rhos[statistics.top_fraction(rhos, fraction)]
    return ScalarField(roi.grid, field), selected


def compare_methods(first, second):
    """
    Whether correlations of ``first`` are stronger (in magnitude) than the
    paired ones of ``second``: paired t-test and Wilcoxon signed-rank test.
    """
    a = np.abs(np.asarray(first, dtype=np.float64))
    b = np.abs(np.asarray(second, dtype=np.float64))
    result = OrderedDict(n=len(a))
    for name, test in (('t', statistics.paired_t_test),
                       ('wilcoxon', statistics.wilcoxon_signed_rank)):
        try:
            statistic, p = test(a, b)
        except DegenerateInputError:
            statistic, p = float('nan'), float('nan')
        result[name] = statistic
        result['p_' + name] = p
    return result


# CSV outputs.

ATROPHY_FIELDS = ('subject', 'time', 'atrophy', 'dx', 'mmse', 'backend')
FIT_FIELDS = ('backend', 'group', 'slope_lo', 'slope', 'slope_hi',
              'intercept_lo', 'intercept', 'intercept_hi', 'n')
CORRELATION_FIELDS = ('time', 'backend', 'rho_mmse', 'p_mmse', 'rho_dx',
                      'p_dx', 'n', 'bh_flag', 'bh_mmse', 'bh_dx')


def format_value(value):
    if isinstance(value, (float, np.floating)):
        return '{0:.10g}'.format(value)
    return value


def dumps_csv(rows, fieldnames):
    """
    Render dictionaries as CSV text with a header, floats to 10 significant
    digits.
    """
    output = io.StringIO()
    writer = csv.DictWriter(
        output, fieldnames=fieldnames, extrasaction='ignore',
        lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({k: format_value(v) for k, v in dict(row).items()})
    return output.getvalue()


def loads_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def atrophy_rows(records):
    return [r.as_row() for r in records]


def fit_rows(fits):
    rows = []
    for (backend, group), fit in fits.items():
        row = OrderedDict(backend=backend, group=group)
        row.update(fit.as_row())
        rows.append(row)
    return rows
