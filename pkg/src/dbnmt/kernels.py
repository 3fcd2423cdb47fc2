"""Backend selection for the hot kernels.

The compiled extension is used when it was built and ``DBNMT_PURE_PYTHON`` is
not set to a truthy value; otherwise the numpy fallback is used. ``BACKEND``
names whichever one is active.
"""

import os

from . import _kernels_py

_FORCE_PURE = os.environ.get("DBNMT_PURE_PYTHON", "").lower() in ("1", "true", "yes")

_impl = _kernels_py
BACKEND = "python"
if not _FORCE_PURE:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

gru_gates = _impl.gru_gates
gru_output = _impl.gru_output
gru_backward_a = _impl.gru_backward_a
gru_backward_b = _impl.gru_backward_b
log_softmax_rows = _impl.log_softmax_rows
max_over_time = _impl.max_over_time
max_over_time_backward = _impl.max_over_time_backward

__all__ = [
    "BACKEND",
    "gru_gates",
    "gru_output",
    "gru_backward_a",
    "gru_backward_b",
    "log_softmax_rows",
    "max_over_time",
    "max_over_time_backward",
]
