"""Pick the compiled kernels when available, else the numpy fallback.

Set ``NEURAL_FILTER_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("NEURAL_FILTER_PURE_PYTHON", "") not in ("", "0"):
    from neural_filter import _pykernels as kernels
else:
    try:
        from neural_filter import _core as kernels

        BACKEND = "cython"
    except ImportError:
        from neural_filter import _pykernels as kernels

__all__ = ["BACKEND", "kernels"]
