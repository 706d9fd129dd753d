from django.apps import AppConfig


class EasyGeodesicsConfig(AppConfig):
    name = 'easy_geodesics'
    verbose_name = 'Easy geodesics'

    def ready(self):
        # Connect the logging receivers.
        from easy_geodesics import signal_handlers  # NOQA
