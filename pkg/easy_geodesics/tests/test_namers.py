from django.test import TestCase

from easy_geodesics import namers
from easy_geodesics.options import StageOptions


class Default(TestCase):

    def test_basic(self):
        self.assertEqual(namers.default('s007', 12), 's007_t012.gff')

    def test_fractional_time(self):
        self.assertEqual(
            namers.default(3, 6.5, extension='pgm'), 's3_t6.5.pgm')


class StageStamp(TestCase):

    def test_basic(self):
        stamp = namers.stage_stamp('register', ['kernel.a-1', 'kernel.c-0.1'])
        self.assertEqual(len(stamp), 12)
        self.assertEqual(
            stamp,
            namers.stage_stamp('register', ['kernel.a-1', 'kernel.c-0.1']))

    def test_changes(self):
        stamp = namers.stage_stamp('register', ['kernel.c-0.1'])
        self.assertNotEqual(
            stamp, namers.stage_stamp('register', ['kernel.c-0.2']))
        self.assertNotEqual(
            stamp, namers.stage_stamp('regress', ['kernel.c-0.1']))
        self.assertNotEqual(
            stamp, namers.stage_stamp(
                'register', ['kernel.c-0.1'], previous='abc'))
        self.assertNotEqual(
            stamp, namers.stage_stamp(
                'register', ['kernel.c-0.1'], inputs=[b'cohort']))


class PreparedOptions(TestCase):

    def test_sorted(self):
        options = StageOptions([
            ('shoot', {'steps': 10, 'integrator': 'rk4'}),
            ('kernel', {'c': 0.1, 'a': 1.0}),
            ('seed', 3),
        ])
        self.assertEqual(options.prepared_options(), [
            'kernel.a-1', 'kernel.c-0.1', 'seed-3', 'shoot.integrator-rk4',
            'shoot.steps-10'])

    def test_nested(self):
        options = StageOptions(
            cohort={'groups': {'NC-NC': 2}, 'dims': [32, 32]})
        self.assertEqual(options.prepared_options(), [
            'cohort.dims-[32,32]', 'cohort.groups-{"NC-NC":2}'])

    def test_empty_section(self):
        self.assertEqual(StageOptions(kernel={}).prepared_options(), [])
