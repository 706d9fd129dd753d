# Sphinx configuration for the easy-geodesics documentation.

import django
from django.conf import settings

# autodoc imports the app, which reads its settings on import.
settings.configure(
    SECRET_KEY='easy',
    INSTALLED_APPS=['easy_geodesics'],
)
django.setup()

import easy_geodesics  # noqa: E402

extensions = ['sphinx.ext.autodoc']
autodoc_member_order = 'bysource'

source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = ['_build']

project = 'easy-geodesics'
copyright = 'easy-geodesics contributors'
version = '%s.%s' % tuple(easy_geodesics.VERSION[:2])
release = easy_geodesics.get_version()

pygments_style = 'sphinx'
html_theme = 'agogo'
htmlhelp_basename = 'easy-geodesicsdoc'
