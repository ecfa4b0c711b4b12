"""Selects the compiled matching kernel when available.

Set ``CHASEKIT_PURE=1`` to force the pure-Python implementation.
"""
import os

from . import _pykernel

py_match = _pykernel.match

if os.environ.get("CHASEKIT_PURE"):
    match = py_match
    BACKEND = "python"
else:
    try:
        from ._ckernel import match  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        match = py_match
        BACKEND = "python"
