import django.dispatch

stage_started = django.dispatch.Signal()
"""
A signal sent before a pipeline stage runs.

* The ``sender`` argument is the stage name.
* The ``pipeline`` argument is the running ``Pipeline``.
"""

stage_finished = django.dispatch.Signal()
"""
A signal sent after a pipeline stage ran, was found cached, or failed.

* The ``sender`` argument is the stage name.
* The ``pipeline`` argument is the running ``Pipeline``.
* The ``status`` argument is one of ``'ran'``, ``'cached'`` or ``'failed'``.
* The ``seconds`` argument is the wall-clock duration of the stage.
"""

registration_finished = django.dispatch.Signal()
"""
A signal sent every time an optimisation based registration ends, converged
or not.

* The ``sender`` argument is the registration function.
* The ``report`` argument is the ``RegistrationReport``.
"""

epoch_finished = django.dispatch.Signal()
"""
A signal sent after each training epoch of a predictor model.

* The ``sender`` argument is the ``PredictorModel`` being trained.
* The ``epoch`` argument is the one-based epoch index.
* The ``loss`` argument is the mean training loss of that epoch.
"""
