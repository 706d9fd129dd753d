"""
Human readable summaries of the CSV outputs of an analysis directory.
"""
import json
from collections import OrderedDict

import numpy as np

from easy_geodesics.analytics import loads_csv

NO_RESULTS = "No results found."


def format_table(title, header, rows):
    """
    Left aligned first column, right aligned others, every column as wide
    as its widest cell.
    """
    rows = [[str(cell) for cell in row] for row in rows]
    widths = [max([len(str(h))] + [len(row[i]) for row in rows])
              for i, h in enumerate(header)]
    lines = ['{0:-<{1}}'.format(title + ' ', sum(widths) + 2 * len(widths))]

    def line(cells):
        parts = ['{0:<{1}}'.format(cells[0], widths[0])]
        parts.extend('{0:>{1}}'.format(cell, width)
                     for cell, width in zip(cells[1:], widths[1:]))
        return '  '.join(parts).rstrip()

    lines.append(line(header))
    lines.extend(line(row) for row in rows)
    return '\n'.join(lines)


def _number(value):
    return '{0:.4g}'.format(value)


def _read(storage, name):
    if not storage.exists(name):
        return None
    with storage.open(name, 'rb') as f:
        return f.read().decode('utf-8')


def _csv_table(title, text, columns=None):
    rows = loads_csv(text)
    if not rows:
        return None
    columns = columns or list(rows[0])
    return format_table(
        title, columns, [[row.get(c, '') for c in columns] for row in rows])


def _overlay_table(text):
    groups = OrderedDict()
    for row in loads_csv(text):
        key = (row['backend'], float(row['time']))
        groups.setdefault(key, []).append(
            (float(row['regression']), float(row['baseline'])))
    rows = [[backend, '{0:g}'.format(t),
             _number(np.mean([r for r, _ in values])),
             _number(np.mean([b for _, b in values])), len(values)]
            for (backend, t), values in sorted(groups.items())]
    if not rows:
        return None
    return format_table(
        'Overlay errors', ['backend', 'time', 'regression', 'baseline', 'n'],
        rows)


def _forecast_table(text):
    groups = OrderedDict()
    for row in loads_csv(text):
        planted = float(row['planted'])
        if planted <= 0:
            continue
        groups.setdefault((row['backend'], row['method']), []).append(
            (float(row['atrophy']), float(row['measured']), planted))
    rows = []
    for (backend, method), values in sorted(groups.items()):
        values = np.array(values)
        relative = np.abs(values[:, 0] - values[:, 2]) / values[:, 2]
        rows.append([
            backend, method, _number(values[:, 0].mean()),
            _number(values[:, 1].mean()), _number(values[:, 2].mean()),
            _number(np.median(relative)), len(values)])
    if not rows:
        return None
    return format_table(
        'Forecast and replace vs planted atrophy',
        ['backend', 'method', 'atrophy', 'measured', 'planted',
         'median rel. error', 'n'], rows)


def _efficiency_table(text):
    efficiency = json.loads(text).get('efficiency') or {}
    rows = [[key, 'n/a' if value is None else _number(value)]
            for key, value in sorted(efficiency.items())]
    if not rows:
        return None
    return format_table('Efficiency', ['measure', 'value'], rows)


SECTIONS = (
    ('deformation_errors.csv',
     lambda text: _csv_table('Deformation errors (voxels)', text)),
    ('overlay.csv', _overlay_table),
    ('fits.csv',
     lambda text: _csv_table('Atrophy over time per group', text)),
    ('correlations.csv',
     lambda text: _csv_table('Spearman correlations', text)),
    ('local_correlations.csv',
     lambda text: _csv_table('Strongest local correlations', text)),
    ('tests.csv', lambda text: _csv_table('Paired method tests', text)),
    ('forecast.csv', _forecast_table),
    ('run_report.json', _efficiency_table),
)


def render_report(storage):
    """
    The text summary of every known output found in ``storage``, or
    :data:`NO_RESULTS` when there is none.
    """
    tables = []
    for name, render in SECTIONS:
        text = _read(storage, name)
        if text is None:
            continue
        table = render(text)
        if table:
            tables.append(table)
    if not tables:
        return NO_RESULTS + '\n'
    return '\n\n'.join(tables) + '\n'
