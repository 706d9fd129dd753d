import json

from easy_geodesics import analytics, reports
from easy_geodesics.tests.utils import BaseTest, TemporaryStorage


class FormatTableTest(BaseTest):

    def test_alignment(self):
        table = reports.format_table(
            'Title', ['name', 'value'], [['a', '1'], ['longer', '22']])
        self.assertEqual(table.splitlines(), [
            'Title ---------',
            'name    value',
            'a           1',
            'longer     22',
        ])


class RenderReportTest(BaseTest):

    def setUp(self):
        super().setUp()
        self.storage = TemporaryStorage()

    def tearDown(self):
        self.storage.delete_temporary_storage()
        super().tearDown()

    def write(self, name, text):
        with self.storage.open(name, 'w') as f:
            f.write(text)

    def test_empty(self):
        self.assertEqual(
            reports.render_report(self.storage), "No results found.\n")

    def test_empty_csv(self):
        self.write('fits.csv', 'backend,group\n')
        self.assertEqual(
            reports.render_report(self.storage), "No results found.\n")

    def test_overlay(self):
        self.write('overlay.csv', analytics.dumps_csv([
            {'subject': 's000', 'backend': 'opt', 'time': 6.0,
             'regression': 0.1, 'baseline': 0.3},
            {'subject': 's001', 'backend': 'opt', 'time': 6.0,
             'regression': 0.2, 'baseline': 0.5},
        ], ('subject', 'backend', 'time', 'regression', 'baseline')))
        lines = reports.render_report(self.storage).splitlines()
        self.assertTrue(lines[0].startswith('Overlay errors'))
        self.assertEqual(lines[2].split(), ['opt', '6', '0.15', '0.4', '2'])

    def test_forecast(self):
        self.write('forecast.csv', analytics.dumps_csv([
            {'backend': 'opt', 'method': 'forecast', 'atrophy': 1.8,
             'measured': 2.1, 'planted': 2.0},
            {'backend': 'opt', 'method': 'forecast', 'atrophy': 2.2,
             'measured': 1.9, 'planted': 2.0},
            {'backend': 'opt', 'method': 'replace', 'atrophy': 1.0,
             'measured': 2.0, 'planted': 0.0},
        ], ('backend', 'method', 'atrophy', 'measured', 'planted')))
        lines = reports.render_report(self.storage).splitlines()
        self.assertEqual(len(lines), 3)
        self.assertEqual(
            lines[2].split(), ['opt', 'forecast', '2', '2', '2', '0.1', '2'])

    def test_efficiency(self):
        self.write('run_report.json', json.dumps({'efficiency': {
            'registration_seconds': 3.0, 'prediction_seconds': None,
            'speedup': None}}))
        lines = reports.render_report(self.storage).splitlines()
        self.assertEqual(lines[0].split()[0], 'Efficiency')
        self.assertEqual(lines[2].split(), ['prediction_seconds', 'n/a'])
        self.assertEqual(lines[3].split(), ['registration_seconds', '3'])

    def test_deterministic(self):
        self.write('tests.csv', 'comparison,n,t\nsgr-opt vs pairwise-opt,4,2.5\n')
        first = reports.render_report(self.storage)
        self.assertEqual(reports.render_report(self.storage), first)
        self.assertIn('Paired method tests', first)
