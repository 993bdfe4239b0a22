"""Sequential-in-time integration with randomized sparse parameter updates.

Per step: draw a sparse index selection, assemble the sketched Galerkin
least-squares system (restricted Jacobian columns + rhs), solve it by
truncated SVD, lift the update back to the full parameter vector, advance
with forward Euler or classical RK4.  Dense updates are the s = p special
case of the same code path.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels, network, pde, sketch
from .arch import ArchSpec, ParamVector, kernel_spec, make_params


class DivergenceError(RuntimeError):
    """Raised when the parameter trajectory blows up; carries partial data."""

    def __init__(self, message, step=None, record=None):
        super().__init__(message)
        self.step = step
        self.record = record


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    end_time: float
    sketch_size: int
    scheme: str = "rk4"
    rcond: float = 1e-4
    rng_seed: int = 0
    record_every: int = 1
    with_replacement: bool = False
    sketch_per_stage: bool = False  # ablation: redraw indices inside RK4 stages
    lstsq_method: str = "svd"
    theta_sup_guard: float = 1e6

    def __post_init__(self):
        if self.dt <= 0 or self.end_time <= 0:
            raise ValueError("dt and end_time must be positive")
        if self.dt > self.end_time:
            raise ValueError("dt must not exceed end_time")
        if self.sketch_size < 1:
            raise ValueError("sketch_size must be >= 1")
        if not 0 < self.rcond < 1:
            raise ValueError("rcond must lie in (0, 1)")
        if self.scheme not in ("euler", "rk4"):
            raise ValueError("scheme must be 'euler' or 'rk4'")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        k = self.end_time / self.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ValueError("dt must divide end_time to 1e-9 relative")
        return int(round(k))


@dataclass(frozen=True)
class GalerkinSystem:
    """One sketched least-squares problem: jac_s (n x s), rhs (n,)."""

    jac_s: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        jac = np.asarray(self.jac_s)
        f = np.asarray(self.rhs)
        if jac.ndim != 2 or f.ndim != 1 or jac.shape[0] != f.shape[0]:
            raise ValueError("jac_s must be (n, s) and rhs (n,)")
        if jac.shape[0] < jac.shape[1]:
            raise ValueError(
                f"need at least as many collocation points as unknowns "
                f"(n={jac.shape[0]} < s={jac.shape[1]})"
            )
        if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(f))):
            raise FloatingPointError("non-finite entries in least-squares system")

    @property
    def n(self) -> int:
        return self.jac_s.shape[0]

    @property
    def s(self) -> int:
        return self.jac_s.shape[1]


def solve_lstsq(system_or_jac, rhs_or_rcond=None, rcond=None, method="svd"):
    """Minimum-norm solution of the rcond-truncated least-squares problem.

    Accepts either (GalerkinSystem, rcond) or (jac, rhs, rcond).  Singular
    values below rcond * sigma_max are discarded before pseudo-inversion.
    Returns (solution, residual_norm) with residual_norm = ||J x - f||_2.

    method 'svd' computes the singular value decomposition directly (tall
    systems are first reduced by a QR factorization, which leaves the
    singular values and the truncated solution unchanged); 'gram_eigh'
    solves via the eigendecomposition of J^T J, trading a factor ~2-3 of
    runtime on large square-ish systems for squared-conditioning error,
    and is only intended for the huge dense-update baselines.
    """
    if isinstance(system_or_jac, GalerkinSystem):
        jac, f = system_or_jac.jac_s, system_or_jac.rhs
        rcond = float(rhs_or_rcond)
    else:
        jac, f = np.asarray(system_or_jac), np.asarray(rhs_or_rcond)
        rcond = float(rcond)
    n, s = jac.shape

    if method == "gram_eigh":
        gram = jac.T @ jac
        lam, V = np.linalg.eigh(gram)
        lam = np.clip(lam, 0.0, None)
        sing = np.sqrt(lam)
        smax = sing[-1] if sing.size else 0.0
        if smax == 0.0:
            x = np.zeros(s, dtype=jac.dtype)
            return x, float(np.linalg.norm(f))
        keep = sing >= rcond * smax
        jtf = jac.T @ f
        coef = (V[:, keep].T @ jtf) / lam[keep]
        x = V[:, keep] @ coef
        return x, float(np.linalg.norm(jac @ x - f))
    if method != "svd":
        raise ValueError(f"unknown lstsq method {method!r}")

    if n >= 2 * s and s > 64:
        # tall system: QR first; sigma(R) == sigma(J) exactly
        q, r = np.linalg.qr(jac, mode="reduced")
        u, sing, vt = np.linalg.svd(r, full_matrices=False)
        uf = u.T @ (q.T @ f)
    else:
        u, sing, vt = np.linalg.svd(jac, full_matrices=False)
        uf = u.T @ f
    smax = sing[0] if sing.size else 0.0
    if smax == 0.0:
        x = np.zeros(s, dtype=jac.dtype)
        return x, float(np.linalg.norm(f))
    keep = sing >= rcond * smax
    x = vt[keep].T @ (uf[keep] / sing[keep])
    return x, float(np.linalg.norm(jac @ x - f))


def assemble_system(
    problem: pde.PdeProblem,
    arch: ArchSpec,
    theta: ParamVector,
    points: pde.CollocationSet,
    sk: sketch.SketchIndices | None = None,
) -> GalerkinSystem:
    """Sketched Jacobian and rhs for one least-squares solve."""
    model = GalerkinModel(problem, arch, points)
    jac, f = model.assemble(theta.values, None if sk is None else sk.indices)
    return GalerkinSystem(jac_s=jac, rhs=f)


class GalerkinModel:
    """Binds (problem, arch, collocation points) for repeated assembly."""

    def __init__(self, problem: pde.PdeProblem, arch: ArchSpec, points):
        if isinstance(points, pde.CollocationSet):
            points = points.points
        self.problem = problem
        self.arch = arch
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.spec = kernel_spec(arch)
        if arch.input_dim != problem.spatial_dim:
            raise ValueError("architecture input_dim must match problem dimension")

    @property
    def param_count(self) -> int:
        return self.spec.p

    def assemble(self, theta_values: np.ndarray, indices=None):
        """(jac_s, f) at the given flat parameter vector."""
        u, ux, uxx, jac = kernels.assemble_batch(
            self.spec, theta_values, self.points, indices
        )
        f = pde.rhs_values(self.problem, self.points, u, ux, uxx)
        return jac, f


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    snapshots: np.ndarray  # (n_recorded, n_eval_points)
    residual_norms: np.ndarray  # per step, ||J_s dtheta_s - f||
    residual_rel: np.ndarray  # per step, residual / ||f||
    step_wall_times: np.ndarray
    sketches: list | None = None
    status: str = "ok"
    steps_completed: int = 0
    theta_final: np.ndarray | None = None


def _velocity(model, cfg, theta_values, sk, record=None):
    """Lifted parameter velocity at theta under the given sketch."""
    jac, f = model.assemble(theta_values, sk.indices)
    if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(f))):
        raise DivergenceError("non-finite least-squares system", record=record)
    delta_s, res = solve_lstsq(jac, f, cfg.rcond, method=cfg.lstsq_method)
    fnorm = float(np.linalg.norm(f))
    return delta_s, res, (res / fnorm if fnorm > 0 else 0.0)


def _draw(cfg, p, k, stage=None):
    if cfg.sketch_per_stage and stage is not None:
        # composite key keeps per-stage draws independent yet reproducible
        step_key = k * 8 + stage
    else:
        step_key = k
    return sketch.draw_sketch(
        p, min(cfg.sketch_size, p), step_key, cfg.rng_seed, cfg.with_replacement
    )


def _check_guard(theta_values, cfg, k, record=None):
    sup = np.max(np.abs(theta_values))
    if not np.isfinite(sup) or sup > cfg.theta_sup_guard:
        raise DivergenceError(
            f"parameter vector diverged at step {k} (sup {sup:.3e})",
            step=k,
            record=record,
        )


def euler_step(model, cfg: SolverConfig, theta_values: np.ndarray, k: int):
    """One forward-Euler step; returns (theta', step info dict)."""
    sk = _draw(cfg, model.param_count, k)
    delta_s, res, rel = _velocity(model, cfg, theta_values, sk)
    theta_new = theta_values.copy()
    theta_new[sk.indices] = theta_values[sk.indices] + cfg.dt * delta_s
    return theta_new, {"residual": res, "residual_rel": rel, "sketch": sk}


def rk4_step(model, cfg: SolverConfig, theta_values: np.ndarray, k: int):
    """One classical RK4 step.

    The same index selection is used for all four stages, so each step
    updates one fixed parameter subset (redrawing per stage is available
    behind cfg.sketch_per_stage for ablations).
    """
    p = model.param_count
    dt = cfg.dt

    def stage_sketch(stage):
        if cfg.sketch_per_stage:
            return _draw(cfg, p, k, stage)
        return None

    sk = _draw(cfg, p, k, 0) if cfg.sketch_per_stage else _draw(cfg, p, k)

    v1, res, rel = _velocity(model, cfg, theta_values, sk)
    th2 = theta_values.copy()
    th2[sk.indices] += 0.5 * dt * v1

    sk2 = stage_sketch(1) or sk
    v2, _, _ = _velocity(model, cfg, th2, sk2)
    th3 = theta_values.copy()
    th3[sk2.indices] += 0.5 * dt * v2

    sk3 = stage_sketch(2) or sk
    v3, _, _ = _velocity(model, cfg, th3, sk3)
    th4 = theta_values.copy()
    th4[sk3.indices] += dt * v3

    sk4 = stage_sketch(3) or sk
    v4, _, _ = _velocity(model, cfg, th4, sk4)

    theta_new = theta_values.copy()
    if not cfg.sketch_per_stage:
        combined = v1 + 2.0 * v2 + 2.0 * v3 + v4
        theta_new[sk.indices] += (dt / 6.0) * combined
    else:
        for ski, vi, wgt in ((sk, v1, 1.0), (sk2, v2, 2.0), (sk3, v3, 2.0),
                             (sk4, v4, 1.0)):
            theta_new[ski.indices] += (dt / 6.0) * wgt * vi
    return theta_new, {"residual": res, "residual_rel": rel, "sketch": sk}


def integrate(
    theta0: ParamVector,
    cfg: SolverConfig,
    problem: pde.PdeProblem,
    arch: ArchSpec,
    points,
    eval_points=None,
    store_sketches: bool = False,
    checkpoint_path=None,
    checkpoint_every: int = 0,
) -> TrajectoryRecord:
    """Run the full time loop, recording snapshots, residuals and timings.

    Snapshots are the network evaluated on ``eval_points`` at step 0 and
    every ``cfg.record_every`` steps thereafter; residual norms and wall
    times are recorded every step.  Raises DivergenceError (carrying the
    partial record) if the parameters blow up.
    """
    model = GalerkinModel(problem, arch, points)
    p = model.param_count
    if cfg.sketch_size > p:
        raise ValueError(f"sketch_size {cfg.sketch_size} exceeds p={p}")
    n_pts = model.points.shape[0]
    if n_pts < cfg.sketch_size:
        raise ValueError(
            f"need at least as many collocation points as unknowns "
            f"(n={n_pts} < s={cfg.sketch_size})"
        )
    if n_pts < 10 * cfg.sketch_size:
        warnings.warn(
            f"collocation count n={n_pts} < 10*s={10 * cfg.sketch_size}; "
            "the least-squares projection may be under-resolved",
            stacklevel=2,
        )
    if eval_points is None:
        eval_points = model.points
    elif isinstance(eval_points, pde.CollocationSet):
        eval_points = eval_points.points
    eval_points = np.ascontiguousarray(eval_points, dtype=np.float64)

    n_steps = cfg.n_steps
    step_fn = euler_step if cfg.scheme == "euler" else rk4_step

    theta = theta0.values.copy()
    start_step = 0
    if checkpoint_path is not None:
        resumed = load_checkpoint(checkpoint_path)
        if resumed is not None:
            theta, start_step = resumed
            theta = theta.copy()

    times = [0.0]
    snapshots = [network.forward_batch(arch, make_params(arch, theta), eval_points)]
    residuals = np.zeros(n_steps)
    residual_rel = np.zeros(n_steps)
    wall = np.zeros(n_steps)
    sketches = [] if store_sketches else None

    def partial_record(completed):
        rec_times = np.asarray(times)
        return TrajectoryRecord(
            times=rec_times,
            snapshots=np.asarray(snapshots),
            residual_norms=residuals[:completed],
            residual_rel=residual_rel[:completed],
            step_wall_times=wall[:completed],
            sketches=sketches,
            status="diverged",
            steps_completed=completed,
            theta_final=theta,
        )

    pv = make_params(arch, theta)
    for k in range(start_step, n_steps):
        t0 = time.perf_counter()
        try:
            theta, info = step_fn(model, cfg, theta, k + 1)
        except DivergenceError as err:
            raise DivergenceError(str(err), step=k + 1,
                                  record=partial_record(k)) from None
        wall[k] = time.perf_counter() - t0
        residuals[k] = info["residual"]
        residual_rel[k] = info["residual_rel"]
        if store_sketches:
            sketches.append(info["sketch"])
        try:
            _check_guard(theta, cfg, k + 1)
        except DivergenceError as err:
            raise DivergenceError(str(err), step=k + 1,
                                  record=partial_record(k + 1)) from None
        if (k + 1) % cfg.record_every == 0 or k + 1 == n_steps:
            times.append((k + 1) * cfg.dt)
            pv = make_params(arch, theta)
            snapshots.append(network.forward_batch(arch, pv, eval_points))
        if checkpoint_path is not None and checkpoint_every > 0 and (
            (k + 1) % checkpoint_every == 0
        ):
            save_checkpoint(checkpoint_path, theta, k + 1, cfg.rng_seed)

    return TrajectoryRecord(
        times=np.asarray(times),
        snapshots=np.asarray(snapshots),
        residual_norms=residuals,
        residual_rel=residual_rel,
        step_wall_times=wall,
        sketches=sketches,
        status="ok",
        steps_completed=n_steps,
        theta_final=theta,
    )


def save_checkpoint(path, theta_values, step, rng_seed):
    np.savez(
        path,
        theta=theta_values,
        step=np.int64(step),
        rng_seed=np.int64(rng_seed),
        meta=json.dumps({"format": "sparsegalerkin-checkpoint-1"}),
    )


def load_checkpoint(path):
    import os

    if not os.path.exists(path):
        return None
    with np.load(path, allow_pickle=False) as data:
        return np.asarray(data["theta"]), int(data["step"])
