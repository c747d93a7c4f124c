"""Sphinx configuration for the TacoVC API reference"""
import os
import subprocess
import sys

sys.path.insert(0, os.path.abspath("../../../tacovc"))

project = "TacoVC"
copyright = "2026, TacoVC developers"
author = "TacoVC developers"
release = "v0.1.0"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
    "autodocsumm",
    "sphinx_copybutton",
]

# Document __init__ parameters together with the class docstring
autoclass_content = "both"
autodoc_default_options = {
    "autosummary": True,
    "members": True,
    "undoc-members": True,
    "show-inheritance": True,
}

html_theme = "alabaster"

try:
    release = (
        subprocess.check_output(["git", "describe", "--tags"], stderr=subprocess.DEVNULL)
        .strip()
        .decode("utf-8")
    )
except (subprocess.CalledProcessError, FileNotFoundError):
    pass

rst_epilog = """
TacoVC |release|
"""
