import logging

from django.dispatch import receiver

from easy_geodesics import signals

logger = logging.getLogger('easy_geodesics')


@receiver(signals.stage_started)
def log_stage_started(sender, **kwargs):
    logger.info("Stage %s started", sender)


@receiver(signals.stage_finished)
def log_stage_finished(sender, status, seconds, **kwargs):
    """
    Log the outcome of each pipeline stage, failures as errors.
    """
    if status == 'failed':
        logger.error("Stage %s failed after %.2fs", sender, seconds)
    else:
        logger.info("Stage %s %s in %.2fs", sender, status, seconds)


@receiver(signals.registration_finished)
def log_registration(sender, report, **kwargs):
    logger.debug(
        "Registration %s after %d iterations, energy %.6g -> %.6g",
        report.reason, report.iterations, report.energies[0],
        report.energies[-1])


@receiver(signals.epoch_finished)
def log_epoch(sender, epoch, loss, **kwargs):
    logger.info("Epoch %d: loss %.6g", epoch, loss)
