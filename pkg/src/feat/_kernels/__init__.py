"""Conv hot kernels with backend selection at import time.

The compiled Cython extension is preferred when present; otherwise the pure
numpy twin takes over. Set FEAT_KERNELS=numpy or FEAT_KERNELS=cython to force
a backend (useful for benchmarking; results are bit-identical either way).
"""

import os

from . import numpy_backend

_forced = os.environ.get("FEAT_KERNELS", "").strip().lower()

_impl = None
if _forced in ("", "cython"):
    try:
        from . import _convops as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = None
        if _forced == "cython":
            raise ImportError(
                "FEAT_KERNELS=cython requested but the compiled extension "
                "is not available; rebuild the package or unset the variable"
            )
if _impl is None:
    _impl = numpy_backend

BACKEND = "cython" if _impl is not numpy_backend else "numpy"

im2col3 = _impl.im2col3
col2im3 = _impl.col2im3


def backend_name() -> str:
    """Name of the kernel backend selected at import ('cython' or 'numpy')."""
    return BACKEND
