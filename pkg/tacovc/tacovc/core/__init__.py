"""This package contains the feature layer and the four networks of the
conversion pipeline

The submodules are imported by the package root and by :mod:`tacovc.corpus`;
this package itself imports nothing to keep the import graph acyclic.
"""
