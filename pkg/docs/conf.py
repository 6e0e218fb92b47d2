# Configuration file for the Sphinx documentation builder.
#
# For the full list of options see
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

from mbcnet import __version__

# -- Project information -----------------------------------------------------

project = 'mbcnet'
copyright = '2026, mbcnet developers'
author = 'mbcnet developers'
release = __version__

# -- General configuration ---------------------------------------------------

extensions = [
    'myst_parser',
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.intersphinx',
    'sphinx_copybutton',
]

intersphinx_mapping = {
    'numpy': ('https://numpy.org/doc/stable/', None),
}
# Require :external: to reference intersphinx. Prevents accidentally linking
# to something from numpy.
intersphinx_disabled_reftypes = ['*']

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

# Make sphinx give errors for bad cross-references
nitpicky = True

# -- Options for HTML output -------------------------------------------------

html_theme = 'furo'

myst_enable_extensions = ["dollarmath", "linkify"]

# Lets us use single backticks for code
default_role = 'code'
