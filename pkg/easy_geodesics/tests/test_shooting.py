from unittest import mock

import numpy as np

from easy_geodesics import shooting
from easy_geodesics.exceptions import DivergenceError, InvalidParameterError
from easy_geodesics.field import (
    DeformationMap, GridSpec, VectorField, compose, identity_positions,
    jacobian_determinant, warp)
from easy_geodesics.kernel import KernelParams, smooth
from easy_geodesics.shooting import ShootConfig
from easy_geodesics.tests.utils import (
    BaseTest, TemporaryStorage, blob, smooth_momentum)


def interior_gap(phi, margin=4):
    interior = (slice(None),) + (slice(margin, -margin),) * phi.grid.ndim
    return np.abs(phi.displacement().data[interior]).max()


def interior_distance(a, b, margin=4):
    interior = (slice(None),) + (slice(margin, -margin),) * a.grid.ndim
    return np.abs(a.data - b.data)[interior].max()


class ShootConfigTest(BaseTest):

    def test_defaults(self):
        self.assertEqual(ShootConfig.from_dict(), ShootConfig(10, 'rk4'))

    def test_invalid(self):
        self.assertRaises(InvalidParameterError, ShootConfig, steps=0)
        self.assertRaises(InvalidParameterError, ShootConfig, steps=2.5)
        self.assertRaises(
            InvalidParameterError, ShootConfig, integrator='leapfrog')

    def test_step_count(self):
        cfg = ShootConfig(steps=10)
        self.assertEqual(cfg.step_count(0), 0)
        self.assertEqual(cfg.step_count(0.3), 3)
        self.assertEqual(cfg.step_count(0.31), 4)
        self.assertEqual(cfg.step_count(-1.0), 10)
        self.assertEqual(cfg.step_count(0.001), 1)


class EPDiffTest(BaseTest):

    def test_zero(self):
        m = VectorField.zeros(GridSpec((8, 8)))
        rhs = shooting.epdiff_rhs(m, KernelParams())
        np.testing.assert_array_equal(rhs.data, 0)

    def test_constant(self):
        grid = GridSpec((8, 8))
        m = VectorField(grid, np.stack([np.full((8, 8), 0.3),
                                        np.full((8, 8), -0.2)]))
        rhs = shooting.epdiff_rhs(m, KernelParams())
        np.testing.assert_allclose(rhs.data, 0, atol=1e-12)

    def test_term_by_term(self):
        grid = GridSpec((16, 16))
        params = KernelParams()
        m = smooth_momentum(grid, seed=7)
        v = smooth(m.data, grid, params)
        dv = [[np.gradient(v[i], axis=j) for j in range(2)] for i in range(2)]
        dm = [[np.gradient(m.data[i], axis=j) for j in range(2)]
              for i in range(2)]
        divergence = dv[0][0] + dv[1][1]
        expected = np.empty_like(m.data)
        for i in range(2):
            transposed = dv[0][i] * m.data[0] + dv[1][i] * m.data[1]
            convected = dm[i][0] * v[0] + dm[i][1] * v[1]
            expected[i] = -(transposed + convected + m.data[i] * divergence)
        rhs = shooting.epdiff_rhs(m, params)
        np.testing.assert_allclose(rhs.data, expected, atol=1e-12)


class ShootTest(BaseTest):

    def setUp(self):
        super().setUp()
        self.grid = GridSpec((32, 32))
        self.kernel = KernelParams()
        self.image = blob(self.grid, width=2.0)

    def test_zero_momentum(self):
        trajectory = shooting.shoot(
            self.image, VectorField.zeros(self.grid), 1.0, ShootConfig(),
            self.kernel, forward_map=True)
        final = trajectory.final
        np.testing.assert_array_equal(final.image.data, self.image.data)
        np.testing.assert_array_equal(final.momentum.data, 0)
        np.testing.assert_array_equal(
            final.map_inv.data, identity_positions(self.grid.dims))
        np.testing.assert_array_equal(
            final.map.data, identity_positions(self.grid.dims))

    def test_states(self):
        m0 = smooth_momentum(self.grid, 0.5)
        trajectory = shooting.shoot(
            self.image, m0, 0.5, ShootConfig(steps=10), self.kernel)
        self.assertEqual(len(trajectory), 6)
        np.testing.assert_allclose(
            trajectory.times, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
        self.assertIsNone(trajectory.final.map)
        self.assertIs(trajectory[0].image, trajectory.states[0].image)

    def test_image_is_pulled_back(self):
        m0 = smooth_momentum(self.grid, 1.0)
        final = shooting.shoot(
            self.image, m0, 1.0, ShootConfig(), self.kernel).final
        np.testing.assert_allclose(
            final.image.data, warp(self.image, final.map_inv).data,
            atol=1e-12)

    def test_energy_conservation(self):
        m0 = smooth_momentum(self.grid, 2.0, seed=11)
        trajectory = shooting.shoot(
            self.image, m0, 1.0, ShootConfig(steps=20), self.kernel)
        energies = trajectory.energies()
        drift = max(abs(e - energies[0]) for e in energies)
        self.assertLess(drift, 0.01 * energies[0])

    def test_energy_conservation_64(self):
        grid = GridSpec((64, 64))
        m0 = smooth_momentum(grid, 2.0, seed=11)
        trajectory = shooting.shoot(
            blob(grid, width=2.0), m0, 1.0, ShootConfig(steps=20),
            self.kernel)
        energies = trajectory.energies()
        drift = max(abs(e - energies[0]) for e in energies)
        self.assertLess(drift, 0.01 * energies[0])

    def test_diffeomorphic(self):
        m0 = smooth_momentum(self.grid, 2.0, seed=11)
        final = shooting.shoot(
            self.image, m0, 1.0, ShootConfig(), self.kernel,
            forward_map=True).final
        self.assertGreater(jacobian_determinant(final.map_inv).data.min(), 0)
        self.assertGreater(jacobian_determinant(final.map).data.min(), 0)

    def test_time_scaling(self):
        cfg = ShootConfig(steps=20)
        m0 = smooth_momentum(self.grid, 1.0, seed=3)
        doubled = VectorField(self.grid, 2 * m0.data)
        a = shooting.exponential_map(m0, 1.0, cfg, self.kernel)
        b = shooting.exponential_map(doubled, 0.5, cfg, self.kernel)
        self.assertLess(np.abs(a.data - b.data).max(), 0.05)

    def test_negative_duration(self):
        cfg = ShootConfig()
        m0 = smooth_momentum(self.grid, 1.0)
        negated = VectorField(self.grid, -m0.data)
        backwards = shooting.exponential_map(m0, -0.5, cfg, self.kernel)
        forwards = shooting.exponential_map(negated, 0.5, cfg, self.kernel)
        np.testing.assert_array_equal(backwards.data, forwards.data)


class ExponentialMapTest(BaseTest):

    def setUp(self):
        super().setUp()
        self.grid = GridSpec((32, 32))
        self.kernel = KernelParams()
        self.cfg = ShootConfig(steps=20)

    def test_time_zero(self):
        m0 = smooth_momentum(self.grid, 1.0)
        phi_inv = shooting.exponential_map(m0, 0.0, self.cfg, self.kernel)
        np.testing.assert_array_equal(
            phi_inv.data, DeformationMap.identity(self.grid).data)

    def test_forward_and_inverse(self):
        m0 = smooth_momentum(self.grid, 1.0, seed=2)
        phi = shooting.exponential_map(
            m0, 1.0, self.cfg, self.kernel, forward=True)
        phi_inv = shooting.exponential_map(m0, 1.0, self.cfg, self.kernel)
        self.assertLess(interior_gap(compose(phi, phi_inv)), 0.1)
        self.assertLess(interior_gap(compose(phi_inv, phi)), 0.1)

    def test_negated_momentum(self):
        m0 = smooth_momentum(self.grid, 0.3, seed=5)
        negated = VectorField(self.grid, -m0.data)
        there = shooting.exponential_map(m0, 1.0, self.cfg, self.kernel)
        back = shooting.exponential_map(negated, 1.0, self.cfg, self.kernel)
        self.assertLess(interior_gap(compose(back, there)), 0.1)

    def test_composition_first_order(self):
        m_a = smooth_momentum(self.grid, 1.0, seed=1)
        m_b = smooth_momentum(self.grid, 1.0, seed=2)
        difference = VectorField(self.grid, m_b.data - m_a.data)

        def gap(t):
            composed = compose(
                shooting.exponential_map(m_b, t, self.cfg, self.kernel),
                shooting.exponential_map(m_a, -t, self.cfg, self.kernel))
            direct = shooting.exponential_map(
                difference, t, self.cfg, self.kernel)
            return interior_distance(composed, direct)

        ratio = gap(0.2) / gap(0.1)
        self.assertGreaterEqual(ratio, 3.0)
        self.assertLessEqual(ratio, 5.0)

    def test_divergence(self):
        m0 = smooth_momentum(self.grid, 1.0)

        def broken(state, grid, kernel):
            return tuple(
                None if x is None else np.full_like(x, np.nan) for x in state)

        with mock.patch.object(shooting, 'geodesic_rhs', broken):
            with self.assertRaises(DivergenceError) as cm:
                shooting.exponential_map(m0, 1.0, self.cfg, self.kernel)
        self.assertEqual(cm.exception.step, 1)


class IntegratorOrderTest(BaseTest):
    """
    Halving the step shrinks the error of the final inverse map by the
    order of the integrator.
    """

    def setUp(self):
        super().setUp()
        self.grid = GridSpec((32, 32))
        self.kernel = KernelParams()
        self.m0 = smooth_momentum(self.grid, 1.0, seed=9)
        self.reference = shooting.exponential_map(
            self.m0, 1.0, ShootConfig(steps=160), self.kernel)

    def error(self, steps, integrator):
        phi_inv = shooting.exponential_map(
            self.m0, 1.0, ShootConfig(steps, integrator), self.kernel)
        return np.abs(phi_inv.data - self.reference.data).max()

    def test_euler(self):
        ratio = self.error(10, 'euler') / self.error(20, 'euler')
        self.assertGreater(ratio, 1.5)
        self.assertLess(ratio, 2.7)

    def test_rk4(self):
        ratio = self.error(5, 'rk4') / self.error(10, 'rk4')
        self.assertGreater(ratio, 8.0)
        self.assertLess(ratio, 32.0)


class ExportTest(BaseTest):

    def setUp(self):
        super().setUp()
        self.storage = TemporaryStorage()

    def tearDown(self):
        self.storage.delete_temporary_storage()
        super().tearDown()

    def test_export(self):
        grid = GridSpec((8, 8))
        image = blob(grid)
        trajectory = shooting.shoot(
            image, smooth_momentum(grid, 0.5), 0.2, ShootConfig(steps=10),
            KernelParams(), forward_map=True)
        name = shooting.export_trajectory(trajectory, self.storage, 'traj')
        self.assertEqual(name, 'traj/manifest.json')
        self.assertTrue(self.storage.exists('traj/002_map.gff'))
        self.assertTrue(self.storage.exists('traj/000_image.gff'))
        self.assertFalse(self.storage.exists('traj/003_image.gff'))
