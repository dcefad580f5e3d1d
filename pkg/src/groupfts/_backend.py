"""Select the kernel implementation at import time.

The compiled extension is preferred. Set ``GROUPFTS_BACKEND=python`` to
force the numpy fallback (useful for debugging and for the benchmark).
"""
import os

from groupfts import _pykernels

python_kernels = _pykernels

try:
    from groupfts import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("GROUPFTS_BACKEND", "").lower() != "python":
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"

__all__ = ["kernels", "BACKEND", "python_kernels", "compiled_kernels"]
