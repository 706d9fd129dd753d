"""
Optimisation based LDDMM registration by geodesic shooting.

The energy of an initial momentum ``m0`` is::

    E(m0) = 1/2 <m0, K m0> + 1/sigma^2 ||I0 o phi^-1(1) - Y||^2

Its gradient is the exact gradient of the discretised energy: the shooting
integrator is differentiated step by step and swept in reverse.
"""
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from easy_geodesics import signals
from easy_geodesics.conf import settings
from easy_geodesics.exceptions import (
    DivergenceError, InvalidParameterError, StallError)
from easy_geodesics.field import (
    VectorField, check_grids, diff, diff_adjoint, identity_positions, sample,
    spatial_gradient)
from easy_geodesics.kernel import KernelParams, inner_product_K, smooth
from easy_geodesics.shooting import ShootConfig, advance, geodesic_rhs

logger = logging.getLogger('easy_geodesics.register')

TERMS = ('regularizer', 'similarity')


@dataclass(frozen=True)
class RegConfig:
    sigma: float = 0.1
    max_iters: int = 300
    step_size: float = 0.5
    shrink: float = 0.5
    grow: float = 1.5
    grad_tol: float = 1e-6
    max_shrinks: int = 20
    precondition: bool = False
    shoot: ShootConfig = ShootConfig()
    kernel: KernelParams = KernelParams()

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidParameterError("sigma must be positive")
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be at least 1")
        if self.step_size <= 0:
            raise InvalidParameterError("step_size must be positive")
        if not 0 < self.shrink < 1:
            raise InvalidParameterError("shrink must lie in (0, 1)")
        if self.grow < 1:
            raise InvalidParameterError("grow must be at least 1")
        if self.max_shrinks < 1:
            raise InvalidParameterError("max_shrinks must be at least 1")

    @classmethod
    def from_dict(cls, values=None, shoot=None, kernel=None):
        merged = dict(settings.GEODESICS_REGISTRATION)
        merged.update(values or {})
        return cls(
            sigma=float(merged['sigma']),
            max_iters=int(merged['max_iters']),
            step_size=float(merged['step_size']),
            shrink=float(merged['shrink']),
            grow=float(merged['grow']),
            grad_tol=float(merged['grad_tol']),
            max_shrinks=int(merged['max_shrinks']),
            precondition=bool(merged['precondition']),
            shoot=shoot or ShootConfig.from_dict(),
            kernel=kernel or KernelParams.from_dict())

    def as_dict(self):
        values = asdict(self)
        del values['shoot'], values['kernel']
        return values

    def with_options(self, **changes):
        return replace(self, **changes)


@dataclass
class RegistrationReport:
    iterations: int = 0
    energies: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    reason: str = ''
    initial_overlay_error: float = 0.0
    final_overlay_error: float = 0.0
    seconds: float = 0.0

    def as_dict(self):
        return asdict(self)


class Problem:
    """
    The discretised registration energy of one image pair.
    """

    def __init__(self, I0, Y, cfg):
        self.grid = check_grids(I0, Y)
        cfg.kernel.check_supported()
        self.source = np.asarray(I0.data)
        self.target = np.asarray(Y.data)
        self.cfg = cfg
        self.steps = cfg.shoot.step_count(1.0)
        self.h = 1.0 / self.steps
        self.weight = self.grid.voxel_volume / cfg.sigma ** 2

    def shoot(self, m0, keep=False):
        """
        Integrate ``(m, phi_inv)`` over unit time, returning the final state
        and, when ``keep`` is set, the state before every step.
        """
        identity = identity_positions(self.grid.dims)
        state = (np.asarray(m0, dtype=np.float64), identity, None)
        history = []
        for step in range(1, self.steps + 1):
            if keep:
                history.append(state[:2])
            state = advance(
                state, self.h, self.grid, self.cfg.kernel,
                self.cfg.shoot.integrator)
            if not (np.isfinite(state[0]).all()
                    and np.isfinite(state[1]).all()):
                raise DivergenceError(
                    "Non-finite values at shooting step {0} of {1}".format(
                        step, self.steps), step=step)
        return state[:2], history

    def regularizer(self, m0):
        smoothed = smooth(m0, self.grid, self.cfg.kernel)
        return 0.5 * float(np.sum(m0 * smoothed)) * self.grid.voxel_volume

    def residual(self, phi_inv):
        return sample(self.source, phi_inv) - self.target

    def energy_terms(self, m0):
        (_, phi_inv), _ = self.shoot(m0)
        residual = self.residual(phi_inv)
        return self.regularizer(m0), self.weight * float(np.sum(residual ** 2))

    def energy(self, m0):
        return sum(self.energy_terms(m0))

    def gradient(self, m0, terms=TERMS):
        m0 = np.asarray(m0, dtype=np.float64)
        gradient = np.zeros_like(m0)
        if 'regularizer' in terms:
            gradient += self.grid.voxel_volume * smooth(
                m0, self.grid, self.cfg.kernel)
        if 'similarity' in terms:
            (_, phi_inv), history = self.shoot(m0, keep=True)
            values, slopes = sample(self.source, phi_inv, gradient=True)
            cotangent = (
                np.zeros_like(m0),
                2.0 * self.weight * (values - self.target) * slopes)
            for state in reversed(history):
                cotangent = self.step_vjp(state, cotangent)
            gradient += cotangent[0]
        return gradient

    def rhs(self, state):
        return geodesic_rhs(
            (state[0], state[1], None), self.grid, self.cfg.kernel)[:2]

    def step_vjp(self, x, bar):
        """
        Pull the cotangent ``bar`` of a step's output back to its input
        ``x``, for the configured integrator.
        """
        h = self.h
        if self.cfg.shoot.integrator == 'euler':
            return _add(bar, self.rhs_vjp(x, _scale(bar, h)))
        k1 = self.rhs(x)
        y2 = _add(x, _scale(k1, h / 2))
        k2 = self.rhs(y2)
        y3 = _add(x, _scale(k2, h / 2))
        k3 = self.rhs(y3)
        y4 = _add(x, _scale(k3, h))

        x_bar = bar
        k1_bar = _scale(bar, h / 6)
        k2_bar = _scale(bar, h / 3)
        k3_bar = _scale(bar, h / 3)
        k4_bar = _scale(bar, h / 6)
        y4_bar = self.rhs_vjp(y4, k4_bar)
        x_bar = _add(x_bar, y4_bar)
        k3_bar = _add(k3_bar, _scale(y4_bar, h))
        y3_bar = self.rhs_vjp(y3, k3_bar)
        x_bar = _add(x_bar, y3_bar)
        k2_bar = _add(k2_bar, _scale(y3_bar, h / 2))
        y2_bar = self.rhs_vjp(y2, k2_bar)
        x_bar = _add(x_bar, y2_bar)
        k1_bar = _add(k1_bar, _scale(y2_bar, h / 2))
        return _add(x_bar, self.rhs_vjp(x, k1_bar))

    def rhs_vjp(self, state, cotangent):
        """
        Transposed Jacobian of :meth:`rhs` at ``state`` applied to
        ``cotangent``.
        """
        m, phi_inv = state
        spacing = self.grid.spacing
        ndim = len(spacing)
        v = smooth(m, self.grid, self.cfg.kernel)
        # The momentum and map derivatives are -ad*_v m and -D(phi_inv) v.
        a = -cotangent[0]
        b = -cotangent[1]
        dv = [spatial_gradient(component, spacing) for component in v]
        dm = [spatial_gradient(component, spacing) for component in m]
        divergence = sum(dv[j][j] for j in range(ndim))

        m_bar = np.zeros_like(m)
        v_bar = np.zeros_like(v)
        phi_bar = np.zeros_like(phi_inv)
        for i in range(ndim):
            m_bar[i] += a[i] * divergence
            for j in range(ndim):
                m_bar[j] += a[i] * dv[j][i]
                v_bar[j] += diff_adjoint(a[i] * m[j], i, spacing[i])
                m_bar[i] += diff_adjoint(a[i] * v[j], j, spacing[j])
                v_bar[j] += a[i] * dm[i][j]
        contracted = sum(a[i] * m[i] for i in range(ndim))
        for j in range(ndim):
            v_bar[j] += diff_adjoint(contracted, j, spacing[j])
        for k in range(ndim):
            for j in range(ndim):
                phi_bar[k] += diff_adjoint(v[j] * b[k], j, spacing[j])
                v_bar[j] += b[k] * diff(phi_inv[k], j, spacing[j])
        m_bar += smooth(v_bar, self.grid, self.cfg.kernel)
        return m_bar, phi_bar


def _add(x, y):
    return tuple(a + b for a, b in zip(x, y))


def _scale(x, factor):
    return tuple(factor * a for a in x)


def registration_energy(m0, I0, Y, cfg):
    check_grids(m0, I0)
    return Problem(I0, Y, cfg).energy(m0.data)


def energy_gradient(m0, I0, Y, cfg, terms=TERMS):
    """
    Gradient of :func:`registration_energy` with respect to ``m0``, or of a
    subset of its ``terms``.
    """
    check_grids(m0, I0)
    return VectorField(m0.grid, Problem(I0, Y, cfg).gradient(m0.data, terms))


def _descent(problem, gradient):
    if problem.cfg.precondition:
        return -smooth(gradient, problem.grid, problem.cfg.kernel)
    return -gradient


def _initial_step(problem, direction):
    velocity = smooth(direction, problem.grid, problem.cfg.kernel)
    scale = np.asarray(problem.grid.spacing).reshape(
        (-1,) + (1,) * problem.grid.ndim)
    largest = np.abs(velocity / scale).max()
    return problem.cfg.step_size / largest


def register(I0, Y, cfg):
    """
    Register ``I0`` to ``Y`` by gradient descent with a backtracking line
    search, starting from zero momentum.

    Returns the best momentum and a :class:`RegistrationReport`. Raises
    :class:`StallError` (carrying the best momentum) when no decreasing step
    is found after ``max_shrinks`` consecutive shrinks.
    """
    started = time.perf_counter()
    problem = Problem(I0, Y, cfg)
    grid = problem.grid
    m = np.zeros((grid.ndim,) + grid.dims)
    energy = problem.energy(m)
    report = RegistrationReport(energies=[energy])
    report.initial_overlay_error = float(np.mean(np.abs(
        problem.source - problem.target)))

    def finish(reason, m):
        report.reason = reason
        (_, phi_inv), _ = problem.shoot(m)
        report.final_overlay_error = float(
            np.mean(np.abs(problem.residual(phi_inv))))
        report.seconds = time.perf_counter() - started
        signals.registration_finished.send(sender=register, report=report)
        return VectorField(grid, m)

    gradient = problem.gradient(m)
    initial_norm = np.linalg.norm(gradient)
    if initial_norm == 0:
        return finish('converged', m), report
    direction = _descent(problem, gradient)
    tau = _initial_step(problem, direction)

    reason = 'max_iters'
    for iteration in range(1, cfg.max_iters + 1):
        shrinks = 0
        while True:
            trial = m + tau * direction
            try:
                trial_energy = problem.energy(trial)
            except DivergenceError:
                trial_energy = np.inf
            if trial_energy < energy:
                break
            tau *= cfg.shrink
            shrinks += 1
            if shrinks >= cfg.max_shrinks:
                logger.warning(
                    "Line search stalled at iteration %d (energy %.6g)",
                    iteration, energy)
                best = finish('stalled', m)
                raise StallError(
                    "No decreasing step after {0} shrinks at iteration "
                    "{1}".format(shrinks, iteration),
                    momentum=best, report=report)
        m, energy = trial, trial_energy
        report.iterations = iteration
        report.energies.append(energy)
        report.step_sizes.append(tau)
        logger.debug("Iteration %d: energy %.6g", iteration, energy)
        tau *= cfg.grow
        gradient = problem.gradient(m)
        if np.linalg.norm(gradient) <= cfg.grad_tol * initial_norm:
            reason = 'converged'
            break
        direction = _descent(problem, gradient)
    return finish(reason, m), report


def geodesic_distance(A, B, cfg):
    """
    The squared geodesic distance ``1/2 <m0, K m0>`` of the momentum
    registering ``A`` to ``B``. The metric energy is constant along the
    geodesic, so the initial momentum suffices.
    """
    m0, _ = register(A, B, cfg)
    return inner_product_K(m0, m0, cfg.kernel) / 2.0


def register_best_effort(I0, Y, cfg):
    """
    Like :func:`register`, but a stalled line search yields its best
    iterate (with a warning) instead of raising.
    """
    try:
        return register(I0, Y, cfg)
    except StallError as e:
        logger.warning("Using the best iterate of a stalled registration")
        return e.momentum, e.report
