import os
from contextlib import contextmanager

from django.conf import settings as django_settings


class BaseSettings:
    pass


class AppSettings(BaseSettings):
    """
    A holder for app-specific settings.

    Upper case attributes are looked up in the project's settings module
    first, falling back to the defaults declared on the class. When
    :attr:`isolated` is ``True`` the project's settings are ignored and any
    assignment only lives until :meth:`revert` is called.
    """

    def __init__(self, isolated=False):
        self.isolated = isolated
        self._changed = {}
        self._added = []

    @property
    def isolated(self):
        return self._isolated

    @isolated.setter
    def isolated(self, value):
        if value:
            self._overrides = BaseSettings()
        self._isolated = value

    def revert(self):
        """
        Revert any changes made to settings.
        """
        for attr, value in self._changed.items():
            setattr(django_settings, attr, value)
        for attr in self._added:
            delattr(django_settings, attr)
        self._changed = {}
        self._added = []
        if self.isolated:
            self._overrides = BaseSettings()

    @contextmanager
    def override(self, **values):
        """
        Temporarily change some settings, reverting them on exit.
        """
        previous = {attr: getattr(self, attr) for attr in values}
        for attr, value in values.items():
            setattr(self, attr, value)
        try:
            yield self
        finally:
            for attr, value in previous.items():
                setattr(self, attr, value)

    def __getattribute__(self, attr):
        if attr.isupper():
            if object.__getattribute__(self, '_isolated'):
                overrides = object.__getattribute__(self, '_overrides')
                if hasattr(overrides, attr):
                    return getattr(overrides, attr)
            elif django_settings.configured and hasattr(django_settings, attr):
                return getattr(django_settings, attr)
        try:
            return super().__getattribute__(attr)
        except AttributeError:
            if not attr.isupper():
                raise
            return getattr(django_settings, attr)

    def __setattr__(self, attr, value):
        if not attr.isupper():
            return super().__setattr__(attr, value)
        if self.isolated and hasattr(type(self), attr):
            # Overrides of app defaults never reach the project settings.
            return setattr(self._overrides, attr, value)
        if attr not in self._added and attr not in self._changed:
            if hasattr(django_settings, attr):
                self._changed[attr] = getattr(django_settings, attr)
            else:
                self._added.append(attr)
        setattr(django_settings, attr, value)


def _default_parallelism():
    try:
        return max(1, int(os.environ.get('EASY_GEODESICS_THREADS', 1)))
    except ValueError:
        return 1


class Settings(AppSettings):
    """
    These default settings for easy-geodesics can be specified in your Django
    project's settings module to alter the behaviour of easy-geodesics.

    Pipeline configuration files take precedence over all of them.
    """

    GEODESICS_KERNEL = {'a': 1.0, 'b': 0.0, 'c': 0.1}
    """
    Parameters of the smoothing operator ``K = (-a lap - b grad div + c)^-2``
    connecting momentum and velocity. Only ``b = 0`` is supported.
    """

    GEODESICS_SHOOT = {'steps': 10, 'integrator': 'rk4'}
    """
    Time discretisation of geodesic shooting: the number of steps per unit of
    time and the integrator (``'rk4'`` or ``'euler'``).
    """

    GEODESICS_REGISTRATION = {
        'sigma': 0.1,
        'max_iters': 300,
        'step_size': 0.5,
        'shrink': 0.5,
        'grow': 1.5,
        'grad_tol': 1e-6,
        'max_shrinks': 20,
        'precondition': False,
    }
    """
    Optimisation based registration. ``step_size`` is the largest velocity
    change (in voxels) of the very first trial step; ``grad_tol`` is relative
    to the norm of the initial gradient.
    """

    GEODESICS_NET = {'patch_size': 15, 'stride': 14, 'base_features': 64}
    """
    Geometry of the patch-wise momentum predictor.
    """

    GEODESICS_TRAIN = {
        'epochs': 10,
        'learning_rate': 1e-4,
        'adam_beta1': 0.9,
        'adam_beta2': 0.999,
        'adam_eps': 1e-8,
        'batch_size': 16,
        'seed': 0,
    }
    """
    Adam training of the predictor and correction networks.
    """

    GEODESICS_MONTHS_PER_UNIT = 12.0
    """
    How many months of a longitudinal series make one unit of geodesic time.
    Atrophy rates are given per unit of geodesic time (per year by default).
    """

    GEODESICS_SEED = 0
    """
    The seed all randomness of a pipeline run derives from.
    """

    GEODESICS_PARALLELISM = _default_parallelism()
    """
    How many subjects are processed concurrently. Defaults to the
    ``EASY_GEODESICS_THREADS`` environment variable, or ``1`` (serial and
    bit-reproducible).
    """

    GEODESICS_BACKEND = 'pred-corr'
    """
    The momentum source used when a command is not told otherwise: ``opt``
    (optimisation), ``pred`` (prediction) or ``pred-corr`` (prediction plus
    correction).
    """

    GEODESICS_STAGES = (
        'easy_geodesics.stages.synth',
        'easy_geodesics.stages.register',
        'easy_geodesics.stages.train_predictor',
        'easy_geodesics.stages.train_corrector',
        'easy_geodesics.stages.predict',
        'easy_geodesics.stages.regress',
        'easy_geodesics.stages.analyze',
    )
    """
    The stages a pipeline runs, in order, when its configuration names none.
    Each stage is a callable receiving the running
    :class:`easy_geodesics.engine.Pipeline`.
    """

    GEODESICS_DEFAULT_STORAGE = (
        'easy_geodesics.storage.ArtifactFileSystemStorage')
    """
    The Django storage used for pipeline artifacts.
    """

    GEODESICS_MEDIA_ROOT = ''
    """
    Where the default storage writes artifacts. If not provided, Django's
    standard ``MEDIA_ROOT`` setting is used.
    """

    GEODESICS_PERCENTILES = (0.3, 5, 25, 50, 75, 95, 99.7)
    """
    Percentiles reported for deformation errors.
    """

    GEODESICS_FDR_Q = 0.01
    """
    The false discovery rate of the Benjamini-Hochberg procedure applied to
    the correlation tables.
    """

    GEODESICS_TOP_FRACTION = 0.1
    """
    Fraction of voxels (by correlation magnitude) summarised in local
    atrophy correlations.
    """

    GEODESICS_COHORT = {
        'dims': (64, 64),
        'times': (6, 12, 18, 24),
        'groups': {
            'NC-NC': 4, 'NC-MCI': 2, 'MCI-MCI': 4,
            'MCI-NC': 2, 'MCI-AD': 4, 'AD-AD': 4,
        },
        'rates': {
            'NC-NC': (1.0, 0.2), 'MCI-NC': (1.5, 0.2), 'NC-MCI': (2.0, 0.3),
            'MCI-MCI': (2.5, 0.3), 'MCI-AD': (3.5, 0.4), 'AD-AD': (4.5, 0.4),
        },
        'noise': 0.01,
        'score_base': 30.0,
        'score_gamma': 1.0,
        'score_noise': 0.5,
        'train_fraction': 0.5,
    }
    """
    The synthetic cohort generated by the ``synth`` stage. ``rates`` map a
    diagnosis-change group to the mean and standard deviation of its planted
    stat-ROI atrophy rate (percent per unit of geodesic time).
    """


settings = Settings()
