# -*- coding: utf-8 -*-
#
# mvgeom documentation build configuration file.

import os
import sys
import sphinx_bootstrap_theme
sys.path.insert(0, os.path.abspath('..'))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.autosummary',
    'sphinx.ext.intersphinx',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'mvgeom'

from mvgeom import __version__ as version  # noqa
release = version

language = None
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'

html_theme = 'bootstrap'
html_theme_options = {
    'navbar_sidebarrel': False,
    'navbar_links': [("API", "API")],
    'bootswatch_theme': "united"
}
html_theme_path = sphinx_bootstrap_theme.get_html_theme_path()
htmlhelp_basename = 'mvgeomdoc'

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}
