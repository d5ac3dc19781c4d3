# Configuration file for the Sphinx documentation builder.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

# autodoc imports the package from the repository root
sys.path.insert(0, os.path.abspath(".."))


# -- Project information -----------------------------------------------------

project = "bpinn-ageing"
copyright = "2026, bpinn-ageing developers"
author = "bpinn-ageing developers"

release = "0.1.0"


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx_autodoc_typehints",
    "sphinx_rtd_theme",
    "sphinxarg.ext",
]

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

# dataclass fields are documented on the class
autodoc_member_order = "bysource"
typehints_fully_qualified = False


# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_rtd_theme"

# -- LaTeX options -----------------------------------------------------------

# docstrings use units and Greek letters
latex_engine = "xelatex"
