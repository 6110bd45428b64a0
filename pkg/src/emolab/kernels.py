"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python twin in ``_pykernels`` is used. Set ``EMOLAB_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("EMOLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

transport_simplex = _impl.transport_simplex
lcs_length = _impl.lcs_length

__all__ = ["BACKEND", "transport_simplex", "lcs_length"]
