"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting
``HERDTWIN_PURE_PYTHON=1`` forces the numpy fallback.  Both backends stay
importable (``compiled`` may be None) so tests and benchmarks can compare
them directly.
"""
import os

from . import _kernels_py as python

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("HERDTWIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    active = compiled
    BACKEND = "cython"
else:
    active = python
    BACKEND = "python"

hourly_counts = active.hourly_counts
fir_apply = active.fir_apply
gauss_eval_jac = active.gauss_eval_jac
lstm_forward = active.lstm_forward
lstm_backward = active.lstm_backward
