#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# pvebayes documentation build configuration file
#
# Note that not all possible configuration values are present in this
# autogenerated file.

import os
import sys
import pvebayes

sys.path.insert(0, os.path.abspath('../../pvebayes'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
    'sphinx.ext.autosummary',
]

templates_path = ['_templates']

source_suffix = '.rst'

master_doc = 'index'

project = 'pvebayes'
copyright = '2026, the pvebayes developers'
author = 'the pvebayes developers'

version = pvebayes.__version__
release = pvebayes.__version__

language = 'en'

exclude_patterns = []

pygments_style = 'sphinx'

todo_include_todos = False

# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'

html_static_path = []

htmlhelp_basename = 'pvebayesdoc'

# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    (master_doc, 'pvebayes.tex', 'pvebayes Documentation',
     author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'pvebayes', 'pvebayes Documentation',
     [author], 1)
]

intersphinx_mapping = {'python': ('https://docs.python.org/3', None),
                       'numpy': ('https://numpy.org/doc/stable/', None),
                       'scipy': ('https://docs.scipy.org/doc/scipy/', None),
                       'astropy': ('https://docs.astropy.org/en/stable',
                                   None)}
