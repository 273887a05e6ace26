"""Reporting tools for zipfgrid runs.

This package deliberately reads nothing but the public run-directory
artifacts: ``metrics.csv`` (the delimited evaluation log) and ``config.json``
(for the condition name). It never touches checkpoints or internals.
"""

__version__ = "0.1.0"
