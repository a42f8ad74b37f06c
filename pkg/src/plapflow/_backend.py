"""Select the compiled kernels when available, else the NumPy fallback.

Set ``PLAPFLOW_PURE=1`` to force the fallback.
"""

import os

if os.environ.get("PLAPFLOW_PURE", "") not in ("", "0"):
    from . import _pykernels as kernels

    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pykernels as kernels

        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
