"""Network evaluation: values, exact spatial derivatives, parameter Jacobians.

All derivatives are analytic (layerwise forward propagation for spatial
derivatives, reverse accumulation for parameter gradients); nothing here
uses finite differences.  Operations are pure functions of
(arch, theta, points) and safe to call concurrently on shared inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .arch import ArchSpec, ParamVector, kernel_spec


@dataclass
class EvalBundle:
    """Value and derivatives of the network at one point."""

    value: float
    grad_x: np.ndarray | None = None
    hess_diag: np.ndarray | None = None
    grad_theta: np.ndarray | None = None


def _check(arch: ArchSpec, theta: ParamVector):
    if theta.p != arch.param_count:
        raise ValueError(
            f"parameter vector has {theta.p} entries, architecture needs "
            f"{arch.param_count}"
        )


def _as_points(arch: ArchSpec, x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != arch.input_dim:
        raise ValueError(f"points must have {arch.input_dim} columns")
    return X


def validate_indices(indices, p: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("indices must be a flat integer vector")
    if idx.size and (idx[0] < 0 or idx[-1] >= p):
        raise ValueError(f"indices must lie in [0, {p})")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError("indices must be strictly increasing")
    return idx


def forward(arch: ArchSpec, theta: ParamVector, x) -> float:
    """Network value at a single point."""
    _check(arch, theta)
    X = _as_points(arch, x)
    u, _, _ = kernels.eval_batch(kernel_spec(arch), theta.values, X, order=0)
    return float(u[0])


def forward_batch(arch: ArchSpec, theta: ParamVector, points) -> np.ndarray:
    _check(arch, theta)
    X = _as_points(arch, points)
    u, _, _ = kernels.eval_batch(kernel_spec(arch), theta.values, X, order=0)
    return u


def spatial_derivs(arch: ArchSpec, theta: ParamVector, x) -> EvalBundle:
    """Value, first and second spatial derivatives at one point."""
    _check(arch, theta)
    X = _as_points(arch, x)
    u, ux, uxx = kernels.eval_batch(kernel_spec(arch), theta.values, X, order=2)
    return EvalBundle(value=float(u[0]), grad_x=ux[0], hess_diag=uxx[0])


def spatial_derivs_batch(arch: ArchSpec, theta: ParamVector, points):
    """(value, grad_x, hess_diag) arrays over a batch of points."""
    _check(arch, theta)
    X = _as_points(arch, points)
    return kernels.eval_batch(kernel_spec(arch), theta.values, X, order=2)


def param_gradient(arch: ArchSpec, theta: ParamVector, x, indices=None) -> np.ndarray:
    """Gradient of the network value w.r.t. parameters at one point.

    With ``indices`` (strictly increasing, in range) only those entries are
    produced; entry k of the result is d(u)/d(theta[indices[k]]).
    """
    _check(arch, theta)
    X = _as_points(arch, x)
    cols = None if indices is None else validate_indices(_raw(indices), theta.p)
    J = kernels.jacobian_batch(kernel_spec(arch), theta.values, X, cols)
    return J[0]


def batch_jacobian(arch: ArchSpec, theta: ParamVector, points, indices=None):
    """n x p (or n x s) matrix of per-point parameter gradients."""
    _check(arch, theta)
    X = _as_points(arch, points)
    cols = None if indices is None else validate_indices(_raw(indices), theta.p)
    return kernels.jacobian_batch(kernel_spec(arch), theta.values, X, cols)


def _raw(indices):
    # accept either raw index arrays or sketch objects exposing .indices
    return getattr(indices, "indices", indices)
