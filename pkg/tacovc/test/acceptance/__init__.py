"""Overfit and end-to-end training runs

These take minutes on a CPU and are selected with ``pytest -m acceptance``.
"""
