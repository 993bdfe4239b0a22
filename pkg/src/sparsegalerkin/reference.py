"""Classical ground-truth solvers, error metrics, and tangent-space diagnostics.

The reference solver is a method-of-lines scheme: 4th-order central finite
differences on periodic equidistant grids, integrated with classical RK4.
It is validated against analytic special cases (heat kernel decay,
free-streaming transport) and by grid-refinement self-convergence rather
than against any external solver.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import fit, network, pde, timestepper
from .arch import ArchSpec, ParamVector
from .timestepper import DivergenceError


@dataclass(frozen=True)
class ReferenceSolution:
    times: np.ndarray
    grid: pde.CollocationSet
    values: np.ndarray  # (n_times, n_points)
    method: str
    grid_shape: tuple

    def content_key(self) -> str:
        blob = json.dumps(
            {
                "method": self.method,
                "grid_shape": list(self.grid_shape),
                "times": [float(t) for t in self.times],
            },
            sort_keys=True,
        ).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ErrorReport:
    spacetime_rel_l2: float
    per_time_rel_l2: np.ndarray
    eval_grid_size: int


def _deriv_ops(n, h):
    """4th-order periodic central-difference first/second derivatives."""

    def d1(u, axis=0):
        return (
            np.roll(u, 2, axis) - 8.0 * np.roll(u, 1, axis)
            + 8.0 * np.roll(u, -1, axis) - np.roll(u, -2, axis)
        ) / (12.0 * h)

    def d2(u, axis=0):
        return (
            -np.roll(u, 2, axis) + 16.0 * np.roll(u, 1, axis) - 30.0 * u
            + 16.0 * np.roll(u, -1, axis) - np.roll(u, -2, axis)
        ) / (12.0 * h * h)

    return d1, d2


def _cfl_check(problem, grid_shape, dt_ref, variant):
    spans = problem.periods
    hs = [span / n for span, n in zip(spans, grid_shape)]
    if problem.name in ("allen_cahn", "burgers") and variant != "free_streaming":
        eps = problem.coefficients["eps"]
        bound = 0.4 * hs[0] ** 2 / eps
        if dt_ref > bound:
            raise ValueError(
                f"dt_ref {dt_ref:g} violates the diffusion stability bound "
                f"{bound:g} for grid {grid_shape}"
            )
    if problem.name == "burgers":
        bound = 0.5 * hs[0] / 1.0  # |u| stays O(1) for the benchmark IC
        if dt_ref > bound:
            raise ValueError(f"dt_ref {dt_ref:g} violates advection bound {bound:g}")
    if problem.name == "vlasov":
        vmax = max(abs(problem.domain[1][0]), abs(problem.domain[1][1]))
        bound = min(0.5 * hs[0] / vmax, 0.5 * hs[1] / 1.0)  # |dphi/dx| <= 1
        if dt_ref > bound:
            raise ValueError(f"dt_ref {dt_ref:g} violates transport bound {bound:g}")


def _rhs_factory(problem, grid_shape, variant):
    spans = problem.periods
    if problem.name in ("allen_cahn", "burgers"):
        n = grid_shape[0]
        h = spans[0] / n
        d1, d2 = _deriv_ops(n, h)
        eps = problem.coefficients["eps"]
        if problem.name == "allen_cahn":
            if variant == "no_reaction":
                return lambda u: eps * d2(u)
            return lambda u: eps * d2(u) + u - u**3
        return lambda u: eps * d2(u) - u * d1(u)
    if problem.name == "vlasov":
        nx, nv = grid_shape
        hx = spans[0] / nx
        hv = spans[1] / nv
        d1x, _ = _deriv_ops(nx, hx)
        d1v, _ = _deriv_ops(nv, hv)
        lo_v = problem.domain[1][0]
        v = (lo_v + hv * np.arange(nv))[None, :]
        lo_x = problem.domain[0][0]
        x = (lo_x + hx * np.arange(nx))[:, None]
        if variant == "free_streaming":
            return lambda u: -v * d1x(u, 0)
        dphi = -np.sin(x)
        return lambda u: -v * d1x(u, 0) + dphi * d1v(u, 1)
    raise ValueError(problem.name)


def solve_reference(
    problem: pde.PdeProblem,
    grid_n,
    dt_ref: float,
    output_times,
    variant: str = "full",
    u0=None,
) -> ReferenceSolution:
    """Method-of-lines reference solve, sampled at the requested times.

    output_times must be (near-)integer multiples of dt_ref.  ``variant``
    selects analytic-oracle modes: 'no_reaction' drops the Allen-Cahn
    reaction term (pure heat equation), 'free_streaming' zeroes the Vlasov
    field.  ``u0`` overrides the initial condition (flat, grid-ordered).
    """
    if np.isscalar(grid_n):
        grid_shape = (int(grid_n),) * problem.spatial_dim
    else:
        grid_shape = tuple(int(g) for g in grid_n)
    if min(grid_shape) < 32:
        raise ValueError("reference grids need at least 32 points per dimension")
    _cfl_check(problem, grid_shape, dt_ref, variant)

    grid = pde.make_grid(problem, grid_shape)
    rhs = _rhs_factory(problem, grid_shape, variant)
    if u0 is None:
        u = pde.initial_condition(problem, grid.points).reshape(grid_shape)
    else:
        u = np.asarray(u0, dtype=np.float64).reshape(grid_shape)

    output_times = np.asarray(sorted(float(t) for t in output_times))
    steps = output_times / dt_ref
    rounded = np.round(steps).astype(int)
    if np.any(np.abs(steps - rounded) > 1e-6):
        raise ValueError("output times must be integer multiples of dt_ref")

    values = []
    times = []
    k = 0
    out_iter = iter(zip(output_times, rounded))
    next_out = next(out_iter, None)
    while next_out is not None:
        t_out, k_out = next_out
        while k < k_out:
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * dt_ref * k1)
            k3 = rhs(u + 0.5 * dt_ref * k2)
            k4 = rhs(u + dt_ref * k3)
            u = u + (dt_ref / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            k += 1
            if k % 200 == 0 or k == k_out:
                m = np.max(np.abs(u))
                if not np.isfinite(m) or m > 1e6:
                    raise DivergenceError(
                        f"reference solution blew up at step {k}", step=k
                    )
        values.append(u.ravel().copy())
        times.append(t_out)
        next_out = next(out_iter, None)

    return ReferenceSolution(
        times=np.asarray(times),
        grid=grid,
        values=np.asarray(values),
        method=f"fd4-rk4 {problem.name}/{variant} grid={grid_shape} dt={dt_ref:g}",
        grid_shape=grid_shape,
    )


def save_reference(path, ref: ReferenceSolution):
    np.savez_compressed(
        path,
        times=ref.times,
        values=ref.values,
        points=ref.grid.points,
        grid_shape=np.asarray(ref.grid_shape, dtype=np.int64),
        method=np.bytes_(ref.method.encode()),
    )


def load_reference(path) -> ReferenceSolution:
    with np.load(path, allow_pickle=False) as data:
        return ReferenceSolution(
            times=np.asarray(data["times"]),
            grid=pde.CollocationSet(np.asarray(data["points"])),
            values=np.asarray(data["values"]),
            method=bytes(data["method"]).decode(),
            grid_shape=tuple(int(g) for g in data["grid_shape"]),
        )


def relative_l2(approx_snapshots, ref: ReferenceSolution, times=None) -> ErrorReport:
    """Per-time and space-time relative L2 errors against the reference.

    approx_snapshots must be sampled on the reference grid; ``times`` (if
    given) are checked against the reference times.
    """
    approx = np.atleast_2d(np.asarray(approx_snapshots))
    if approx.shape != ref.values.shape:
        raise ValueError(
            f"snapshot array {approx.shape} does not match reference "
            f"{ref.values.shape}"
        )
    if times is not None:
        times = np.asarray(times)
        if times.shape != ref.times.shape or np.any(
            np.abs(times - ref.times) > 1e-9 * np.maximum(1.0, np.abs(ref.times))
        ):
            raise ValueError("snapshot times do not match reference times")
    diff = approx - ref.values
    num = np.linalg.norm(diff, axis=1)
    den = np.linalg.norm(ref.values, axis=1)
    per_time = num / np.where(den > 0, den, 1.0)
    spacetime = float(np.sqrt(np.sum(num**2) / np.sum(den**2)))
    return ErrorReport(
        spacetime_rel_l2=spacetime,
        per_time_rel_l2=per_time,
        eval_grid_size=ref.values.shape[1],
    )


def jacobian_spectrum(arch: ArchSpec, theta: ParamVector, points) -> np.ndarray:
    """Singular values (descending) of the full batch Jacobian."""
    J = network.batch_jacobian(arch, theta, _pts(points))
    return np.linalg.svd(J, compute_uv=False)


def column_correlation(
    arch: ArchSpec, theta: ParamVector, points, sample_k: int, seed: int = 0
):
    """Pearson correlations of sample_k randomly chosen Jacobian columns.

    Returns a masked (k, k) array: entries involving a zero-variance column
    are masked out rather than reported as NaN.
    """
    X = _pts(points)
    J = network.batch_jacobian(arch, theta, X)
    p = J.shape[1]
    if sample_k > p:
        raise ValueError(f"sample_k {sample_k} exceeds p={p}")
    rng = np.random.default_rng(seed)
    cols = np.sort(rng.choice(p, size=sample_k, replace=False))
    sub = J[:, cols]
    sub = sub - sub.mean(axis=0, keepdims=True)
    sd = np.linalg.norm(sub, axis=0)
    degenerate = sd < 1e-300
    safe = np.where(degenerate, 1.0, sd)
    corr = (sub / safe).T @ (sub / safe)
    mask = degenerate[:, None] | degenerate[None, :]
    return np.ma.MaskedArray(corr, mask=mask)


def direct_fit_residual(
    problem: pde.PdeProblem,
    arch: ArchSpec,
    fit_cfg: "fit.FitConfig",
    ref: ReferenceSolution,
    times,
    points: pde.CollocationSet,
    rcond: float | None = None,
):
    """Dense Galerkin residual of networks fitted directly to the reference.

    For each requested time, fit the network to the reference snapshot,
    assemble the dense (unsketched) system on ``points``, and record the
    truncated-least-squares residual norm.  Entries whose fit did not reach
    the fit tolerance are flagged (not dropped).
    """
    rcond = problem.default_rcond if rcond is None else rcond
    times = np.asarray([float(t) for t in times])
    residuals = np.empty(times.size)
    converged = np.empty(times.size, dtype=bool)
    for i, t in enumerate(times):
        match = np.where(np.abs(ref.times - t) <= 1e-9 * max(1.0, abs(t)))[0]
        if match.size == 0:
            raise ValueError(f"time {t} not available in reference solution")
        snap = ref.values[match[0]]
        result = fit.fit_to_field(
            arch,
            ref.grid.points,
            snap,
            fit_cfg,
            grid_shape=ref.grid_shape,
            periods=problem.periods,
        )
        converged[i] = result.converged
        system = timestepper.assemble_system(problem, arch, result.theta, points)
        _, res = timestepper.solve_lstsq(system, rcond)
        residuals[i] = res
        if not result.converged:
            warnings.warn(
                f"direct fit at t={t:g} stopped at error "
                f"{result.achieved_error:.2e} (flagged)",
                stacklevel=2,
            )
    return residuals, converged


def _pts(points):
    if isinstance(points, pde.CollocationSet):
        return points.points
    return np.atleast_2d(np.asarray(points, dtype=np.float64))
