"""Kernel backend selection.

A compiled extension provides float32 fast paths for the convolution, pooling
and span-image kernels. Backend choice happens at import time and may be
overridden with the QUANTEXT_KERNELS environment variable ("native" or
"numpy") or at runtime via use_backend(). Calls with non-float32 inputs
always route to the numpy implementation, which is dtype generic; the
float64 path matters for finite-difference gradient checking.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy

try:
    from . import _native
except ImportError:
    _native = None

_requested = os.environ.get("QUANTEXT_KERNELS", "").strip().lower()
if _requested == "numpy":
    _active = _numpy
elif _requested == "native":
    if _native is None:
        raise ImportError(
            "QUANTEXT_KERNELS=native but the compiled extension is not available"
        )
    _active = _native
else:
    _active = _native if _native is not None else _numpy


def available_backends() -> list[str]:
    names = ["numpy"]
    if _native is not None:
        names.insert(0, "native")
    return names


def backend_name() -> str:
    return "native" if _active is _native else "numpy"


def use_backend(name: str) -> None:
    """Switch the active backend ("native" or "numpy")."""
    global _active
    if name == "numpy":
        _active = _numpy
    elif name == "native":
        if _native is None:
            raise ValueError("compiled extension is not available")
        _active = _native
    else:
        raise ValueError(f"unknown backend {name!r}")


def _impl(*arrays: np.ndarray):
    if _active is _numpy:
        return _numpy
    if all(a.dtype == np.float32 for a in arrays):
        return _native
    return _numpy


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def conv1d_forward(x, w, b):
    return _impl(x, w, b).conv1d_forward(_c(x), _c(w), _c(b))


def conv1d_backward(x, w, gy):
    return _impl(x, w, gy).conv1d_backward(_c(x), _c(w), _c(gy))


def conv2d_forward(x, w, b):
    return _impl(x, w, b).conv2d_forward(_c(x), _c(w), _c(b))


def conv2d_backward(x, w, gy):
    return _impl(x, w, gy).conv2d_backward(_c(x), _c(w), _c(gy))


def maxpool1d_forward(x, window: int):
    return _impl(x).maxpool1d_forward(_c(x), window)


def maxpool1d_backward(idx, gy, n: int):
    return _impl(gy).maxpool1d_backward(_c(idx), _c(gy), n)


def span_outer_forward(s, e):
    return _impl(s, e).span_outer_forward(_c(s), _c(e))


def span_outer_backward(s, e, g):
    return _impl(s, e, g).span_outer_backward(_c(s), _c(e), _c(g))
