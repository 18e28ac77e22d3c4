"""Pick the compiled kernels when available.

Set ``BIMATCH_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

import os

from . import _pykernels

kernels = _pykernels
COMPILED = False

if not os.environ.get("BIMATCH_PURE_PYTHON"):
    try:
        from . import _kernels

        kernels = _kernels
        COMPILED = True
    except ImportError:  # extension not built
        pass

__all__ = ["kernels", "COMPILED"]
