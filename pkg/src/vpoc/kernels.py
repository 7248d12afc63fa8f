"""Backend selection for the ray kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``VPOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

HIT_NONE = _kernels_py.HIT_NONE
HIT_SPHERE = _kernels_py.HIT_SPHERE
HIT_DISK = _kernels_py.HIT_DISK
HIT_GROUND = _kernels_py.HIT_GROUND

_impl = _kernels_py
BACKEND = "python"

if os.environ.get("VPOC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

cast_rays = _impl.cast_rays
segments_blocked = _impl.segments_blocked
