"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when importable; set ``RVF_KERNELS=python``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _fallback

if os.environ.get("RVF_KERNELS", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

warp_forward = _impl.warp_forward
warp_backward = _impl.warp_backward
block_match = _impl.block_match

__all__ = ["BACKEND", "warp_forward", "warp_backward", "block_match"]
