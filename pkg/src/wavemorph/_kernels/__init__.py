"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the environment
variable ``WAVEMORPH_DISABLE_NUMBA`` is set to a truthy value. Both backends
expose the same functions:

    circular_filter(x, taps, dilation, axis)
    conv2d_forward(x, w, b)
    conv2d_backward(dout, x, w, need_dx)
    maxpool2_forward(x)
    maxpool2_backward(dout, idx)

Each backend is deterministic on its own; the two agree to floating-point
round-off, not bit for bit.
"""
import os

from . import _numpy as numpy_backend

_TRUTHY = {"1", "true", "yes", "on"}

try:
    from . import _numba as numba_backend

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None
    HAS_NUMBA = False

NUMBA_DISABLED = os.environ.get("WAVEMORPH_DISABLE_NUMBA", "").strip().lower() in _TRUTHY

backend = numpy_backend if (NUMBA_DISABLED or not HAS_NUMBA) else numba_backend


def get_backend(name=None):
    """Return a backend module by name ("numpy" or "numba"), or the active one."""
    if name is None:
        return backend
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if numba_backend is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


__all__ = ["backend", "get_backend", "numpy_backend", "numba_backend", "HAS_NUMBA", "NUMBA_DISABLED"]
