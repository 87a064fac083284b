"""Conv/pool kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
numpy fallback in reference.py is used.  Set LOGITSHIFT_KERNELS=py or
LOGITSHIFT_KERNELS=c to force one side (forcing the compiled backend raises
if the extension is missing).  Both backends implement the same four
functions; see benchmarks/bench_kernels.py for a speed comparison.
"""

import os

_forced = os.environ.get("LOGITSHIFT_KERNELS")
if _forced not in (None, "", "c", "py"):
    raise RuntimeError(f"LOGITSHIFT_KERNELS must be 'c' or 'py', got {_forced!r}")

if _forced == "py":
    from . import reference as _impl

    BACKEND = "python"
else:
    try:
        from . import _convpool as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "c":
            raise
        from . import reference as _impl

        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
