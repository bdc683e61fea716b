"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set ``TYPERET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from typeret import _pykernels as python

if os.environ.get("TYPERET_PURE_PYTHON") == "1":
    compiled = None
else:
    try:
        from typeret import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

orientation_histograms = _impl.orientation_histograms
sift_descriptors = _impl.sift_descriptors
nonmax_suppress = _impl.nonmax_suppress
hysteresis = _impl.hysteresis
smo_solve = _impl.smo_solve
