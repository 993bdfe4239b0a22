"""Numeric kernel backends.

The hot kernels (batched network evaluation, Jacobian assembly, fitting
loss gradients) exist twice: a compiled Cython core (``_core``) and a pure
numpy fallback (``numpy_backend``).  The compiled core is preferred when it
imported successfully; set ``SPARSEGALERKIN_FORCE_NUMPY=1`` to override.
Non-float64 inputs always route to the numpy backend, which is generic in
dtype.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

try:
    from . import _core  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _core = None
    HAVE_COMPILED = False

_FORCE_NUMPY = os.environ.get("SPARSEGALERKIN_FORCE_NUMPY", "") not in ("", "0")


def active_backend() -> str:
    return "compiled" if (HAVE_COMPILED and not _FORCE_NUMPY) else "numpy"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (or the active default)."""
    if name is None:
        name = active_backend()
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel backend is not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")


def _dispatch(theta):
    if active_backend() == "compiled" and theta.dtype == np.float64:
        return _core
    return numpy_backend


def eval_batch(spec, theta, X, order=2):
    return _dispatch(theta).eval_batch(spec, theta, X, order)


def jacobian_batch(spec, theta, X, cols=None):
    return _dispatch(theta).jacobian_batch(spec, theta, X, cols)


def assemble_batch(spec, theta, X, cols=None):
    return _dispatch(theta).assemble_batch(spec, theta, X, cols)


def loss_grad_batch(spec, theta, X, u_target, du_target, deriv_weight):
    return _dispatch(theta).loss_grad_batch(
        spec, theta, X, u_target, du_target, deriv_weight
    )
