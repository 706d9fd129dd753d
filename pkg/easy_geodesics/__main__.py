"""
Run the ``geodesics`` management command without a Django project::

    python -m easy_geodesics pipeline --config pipeline.json --out results/
"""
import os
import sys

import django
from django.conf import settings
from django.core.management import execute_from_command_line


def configure():
    if settings.configured:
        return
    settings.configure(
        INSTALLED_APPS=['easy_geodesics'],
        MEDIA_ROOT=os.getcwd(),
        LOGGING={
            'version': 1,
            'disable_existing_loggers': False,
            'formatters': {
                'simple': {
                    'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
                },
            },
            'handlers': {
                'console': {
                    'class': 'logging.StreamHandler',
                    'formatter': 'simple',
                },
            },
            'loggers': {
                'easy_geodesics': {
                    'handlers': ['console'],
                    'level': 'INFO',
                },
            },
        },
    )
    django.setup()


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    configure()
    execute_from_command_line(['easy-geodesics', 'geodesics'] + argv)


if __name__ == '__main__':
    main()
