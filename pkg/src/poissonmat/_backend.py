"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built; otherwise,
or when ``POISSONMAT_PURE_PYTHON`` is set to a non-empty value, the
pure-Python ``_pykernels`` module takes over.  Both expose the same four
sweep functions.
"""
import os

from . import _pykernels

if os.environ.get("POISSONMAT_PURE_PYTHON"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"


def compiled_kernels():
    """The compiled module, or None when the extension is unavailable."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
