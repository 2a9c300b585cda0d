"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``PQCLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("PQCLAB_PURE_PYTHON", "") not in ("", "0"):
    from pqclab import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from pqclab import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        from pqclab import _pykernels as _impl
        BACKEND = "python"

dijkstra = _impl.dijkstra
im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "dijkstra", "im2col", "col2im"]
