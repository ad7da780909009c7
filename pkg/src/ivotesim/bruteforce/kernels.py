"""Kernel selection.

The compiled kernel is used when it imports; ``IVOTESIM_PURE_PYTHON=1``
forces the hashlib fallback.
"""

import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_KERNELS = {"python": _pykernel}
if _ckernel is not None:
    _KERNELS["cython"] = _ckernel

if os.environ.get("IVOTESIM_PURE_PYTHON") == "1" or _ckernel is None:
    default = _pykernel
else:
    default = _ckernel

DEFAULT_BACKEND = default.BACKEND


def available():
    return sorted(_KERNELS)


def get(name=None):
    if name is None:
        return default
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel {name!r}; have {available()}") from None
