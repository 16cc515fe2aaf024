# -*- coding: utf-8 -*-
#
# pyRobustStudent documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

# Insert pyRobustStudent path to read current version in it
sys.path.insert(0, os.path.abspath('..'))

import pyRobustStudent

# -- General configuration ------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx_rtd_theme']

templates_path = ['_templates']

source_suffix = '.rst'

master_doc = 'index'

project = u'pyRobustStudent'
copyright = u'2026, pyRobustStudent developers'
author = u'pyRobustStudent developers'

# The short X.Y version.
version = pyRobustStudent.__version__
# The full version, including alpha/beta/rc tags.
release = pyRobustStudent.__version__

language = 'en'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

pygments_style = 'sphinx'

todo_include_todos = False

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'

htmlhelp_basename = 'pyRobustStudentdoc'

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}

latex_documents = [
    (master_doc, 'pyRobustStudent.tex', u'pyRobustStudent Documentation',
     author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'pyrobuststudent', u'pyRobustStudent Documentation',
     [author], 1)
]

# -- Options for Texinfo output -------------------------------------------

texinfo_documents = [
    (master_doc, 'pyRobustStudent', u'pyRobustStudent Documentation',
     author, 'pyRobustStudent', 'Robust student network learning by knowledge distillation.',
     'Miscellaneous'),
]
