"""Kernel selection: compiled extension when importable, NumPy otherwise.

Set ``EIVBIAS_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _kernels_py

py_accumulate = _kernels_py.accumulate

try:
    if os.environ.get("EIVBIAS_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from ._kernels import accumulate as ext_accumulate
except ImportError:
    ext_accumulate = None

if ext_accumulate is not None:
    accumulate = ext_accumulate
    BACKEND = "cython"
else:
    accumulate = py_accumulate
    BACKEND = "python"
