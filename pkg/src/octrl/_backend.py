"""Kernel backend selected at import time.

The compiled ``_core`` extension is preferred; set ``OCTRL_BACKEND=python``
to force the numpy fallback.
"""

import os

from . import _pycore

BACKEND = "python"
kernels = _pycore

if os.environ.get("OCTRL_BACKEND", "").lower() != "python":
    try:
        from . import _core
    except ImportError:  # extension not built
        pass
    else:
        kernels = _core
        BACKEND = "cython"


def get(name: str):
    """Kernel module by backend name, for side-by-side comparisons."""
    if name == "python":
        return _pycore
    from . import _core

    return _core
