"""Fitting network parameters to target fields with a Sobolev loss.

Used for the t = 0 initial-condition fit that seeds the time integration,
and for the direct-fit diagnostics (fitting to reference snapshots).  The
optimizer is full-batch Adam with an optional cosine learning-rate decay;
derivative targets come from the analytic initial-condition gradients (or
central differences on sampled fields).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels, network, pde
from .arch import ArchSpec, ParamVector, init_params, kernel_spec, make_params

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class FitConfig:
    n_points: object = 1000  # int, or per-dimension tuple for d > 1
    iterations: int = 100_000
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine_decay"
    decay_steps: int | None = None  # None: decay over the full budget
    deriv_weight: float = 1.0
    target_tolerance: float = 1e-4
    rng_seed: int = 0
    eval_every: int = 250

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_schedule not in ("constant", "cosine_decay"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine_decay'")
        if self.deriv_weight < 0:
            raise ValueError("deriv_weight must be nonnegative")
        if self.target_tolerance < 0:
            raise ValueError("target_tolerance must be nonnegative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class FitResult:
    theta: ParamVector
    achieved_error: float
    converged: bool
    iterations_run: int
    final_loss: float


def sobolev_loss(
    arch: ArchSpec, theta: ParamVector, X, u_target, du_target, deriv_weight
) -> float:
    """Mean-square value mismatch plus weighted mean-square gradient mismatch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    u, ux, _ = network.spatial_derivs_batch(arch, theta, X)
    rv = u - np.asarray(u_target)
    rt = ux - np.atleast_2d(np.asarray(du_target))
    return float(np.mean(rv**2) + deriv_weight * np.mean(np.sum(rt**2, axis=1)))


def sobolev_loss_grad(arch, theta_values, X, u_target, du_target, deriv_weight):
    """Loss and its full parameter gradient (fused kernel path)."""
    return kernels.loss_grad_batch(
        kernel_spec(arch),
        theta_values,
        X,
        np.asarray(u_target, dtype=np.float64),
        np.asarray(du_target, dtype=np.float64),
        float(deriv_weight),
    )


def _lr_at(cfg: FitConfig, it: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    steps = cfg.decay_steps if cfg.decay_steps else cfg.iterations
    frac = min(it / max(1, steps), 1.0)
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * frac))


def _adam_fit(arch, cfg, X, u_t, du_t, eval_fn):
    """Core Adam loop; eval_fn(theta_values) -> held-out relative L2 error."""
    theta = init_params(arch, cfg.rng_seed).values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta = theta.copy()
    best_err = eval_fn(theta)
    last_loss = np.inf
    it = 0
    for it in range(1, cfg.iterations + 1):
        loss, grad = sobolev_loss_grad(arch, theta, X, u_t, du_t, cfg.deriv_weight)
        last_loss = loss
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
        mhat = m / (1.0 - ADAM_BETA1**it)
        vhat = v / (1.0 - ADAM_BETA2**it)
        theta -= _lr_at(cfg, it) * mhat / (np.sqrt(vhat) + ADAM_EPS)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            err = eval_fn(theta)
            if err < best_err:
                best_err = err
                best_theta = theta.copy()
            if best_err <= cfg.target_tolerance:
                break
    converged = best_err <= cfg.target_tolerance
    return make_params(arch, best_theta), float(best_err), converged, it, last_loss


def _fit_grid(problem: pde.PdeProblem, n_points):
    if np.isscalar(n_points):
        if problem.spatial_dim == 1:
            counts = (int(n_points),)
        else:
            # split a total count across dimensions proportionally to extent
            total = int(n_points)
            spans = np.array([hi - lo for lo, hi in problem.domain])
            scale = (total / np.prod(spans)) ** (1.0 / problem.spatial_dim)
            counts = tuple(max(2, int(round(scale * s))) for s in spans)
    else:
        counts = tuple(int(c) for c in n_points)
    return pde.make_grid(problem, counts)


def _holdout_grid(problem: pde.PdeProblem, train: pde.CollocationSet):
    """Finer evaluation grid, offset by half a cell so no point is shared."""
    pts = train.points
    counts = []
    for dim, (lo, hi) in enumerate(problem.domain):
        uniq = np.unique(pts[:, dim])
        counts.append(2 * uniq.size)
    axes = [
        np.linspace(lo, hi, c, endpoint=False) + 0.25 * (hi - lo) / c
        for (lo, hi), c in zip(problem.domain, counts)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return pde.CollocationSet(np.stack([m.ravel() for m in mesh], axis=1))


def fit_initial(arch: ArchSpec, problem: pde.PdeProblem, cfg: FitConfig) -> FitResult:
    """Fit the network to the problem's initial condition.

    Targets are the exact initial condition and its analytic gradient on an
    equidistant grid; the reported error is the relative L2 mismatch on a
    finer held-out grid (half-cell offset).  Returns the best-seen
    parameters; ``converged`` is False if target_tolerance was not reached.
    """
    grid = _fit_grid(problem, cfg.n_points)
    X = grid.points
    u_t = pde.initial_condition(problem, X)
    du_t = pde.initial_condition_grad(problem, X)

    hold = _holdout_grid(problem, grid)
    u_hold = pde.initial_condition(problem, hold.points)
    norm = np.linalg.norm(u_hold)

    def eval_fn(theta_values):
        u = network.forward_batch(arch, make_params(arch, theta_values), hold.points)
        return float(np.linalg.norm(u - u_hold) / norm)

    theta, err, converged, iters, loss = _adam_fit(arch, cfg, X, u_t, du_t, eval_fn)
    return FitResult(theta, err, converged, iters, loss)


def fit_to_field(
    arch: ArchSpec,
    X,
    u_field,
    cfg: FitConfig,
    du_field=None,
    grid_shape=None,
    periods=None,
) -> FitResult:
    """Fit the network to an arbitrary sampled field.

    When derivative targets are not supplied they are estimated by central
    differences on the sampled field, which requires the samples to form an
    equidistant (periodic) grid described by grid_shape/periods.  The
    reported error is the relative L2 mismatch on the sample points.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    u_field = np.asarray(u_field, dtype=np.float64)
    if du_field is None:
        if grid_shape is None:
            if X.shape[1] != 1:
                raise ValueError("grid_shape required for d > 1 fields")
            grid_shape = (X.shape[0],)
        if periods is None:
            periods = tuple(arch.periods)
        du_field = grid_gradient(u_field, grid_shape, periods)
    du_field = np.atleast_2d(np.asarray(du_field, dtype=np.float64))
    norm = np.linalg.norm(u_field)

    def eval_fn(theta_values):
        u = network.forward_batch(arch, make_params(arch, theta_values), X)
        return float(np.linalg.norm(u - u_field) / (norm if norm > 0 else 1.0))

    theta, err, converged, iters, loss = _adam_fit(
        arch, cfg, X, u_field, du_field, eval_fn
    )
    return FitResult(theta, err, converged, iters, loss)


def grid_gradient(values, grid_shape, periods):
    """Central-difference gradient of samples on a periodic equidistant grid.

    values are flat in C order over grid_shape; returns (n, d).
    """
    grid_shape = tuple(int(s) for s in grid_shape)
    d = len(grid_shape)
    field = np.asarray(values, dtype=np.float64).reshape(grid_shape)
    out = np.empty(field.shape + (d,))
    for axis in range(d):
        h = periods[axis] / grid_shape[axis]
        out[..., axis] = (np.roll(field, -1, axis) - np.roll(field, 1, axis)) / (
            2.0 * h
        )
    return out.reshape(-1, d)
