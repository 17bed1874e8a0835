"""Kernel backend selection.

The compiled extension is used when it imports cleanly. Setting
``MODELTRANSFER_PURE_PYTHON=1`` forces the numpy fallback, which is how the
benchmark and the parity tests exercise both paths.
"""

import os

from . import _pykernels

compiled = None
if os.environ.get("MODELTRANSFER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else _pykernels
BACKEND = "cython" if compiled is not None else "python"
