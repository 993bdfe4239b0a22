"""Benchmark evolution equations: domains, initial conditions, right-hand
sides assembled from network spatial derivatives, and collocation grids.

The problem set is a closed registry (adding an equation is a code change:
initial condition, its analytic spatial derivative, and the rhs rule), so
the derivative requirements of each rhs stay statically checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network
from .arch import ArchSpec, ParamVector


@dataclass(frozen=True)
class PdeProblem:
    name: str
    spatial_dim: int
    domain: tuple  # ((lo, hi), ...) half-open per dimension, periodic
    coefficients: dict
    end_time: float
    default_dt: float
    default_rcond: float

    def __post_init__(self):
        if len(self.domain) != self.spatial_dim:
            raise ValueError("domain must have one interval per dimension")
        for lo, hi in self.domain:
            if not hi > lo:
                raise ValueError("domain intervals must be nonempty")
        if self.end_time <= 0 or self.default_dt <= 0:
            raise ValueError("end_time and default_dt must be positive")
        k = self.end_time / self.default_dt
        if abs(k - round(k)) > 1e-9 * k:
            raise ValueError("default_dt must divide end_time")
        eps = self.coefficients.get("eps")
        if eps is not None and eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def periods(self) -> tuple:
        return tuple(hi - lo for lo, hi in self.domain)


ALLEN_CAHN = PdeProblem(
    name="allen_cahn",
    spatial_dim=1,
    domain=((0.0, 2.0 * np.pi),),
    coefficients={"eps": 5e-3},
    end_time=4.0,
    default_dt=5e-3,
    default_rcond=1e-4,
)

BURGERS = PdeProblem(
    name="burgers",
    spatial_dim=1,
    domain=((-1.0, 1.0),),
    coefficients={"eps": 1e-3},
    end_time=4.0,
    default_dt=1e-3,
    default_rcond=1e-4,
)

# electric potential is fixed to phi(x) = cos(x), so d(phi)/dx = -sin(x)
VLASOV = PdeProblem(
    name="vlasov",
    spatial_dim=2,
    domain=((0.0, 2.0 * np.pi), (-6.0, 6.0)),
    coefficients={},
    end_time=3.0,
    default_dt=5e-3,
    default_rcond=1e-5,
)

PROBLEMS = {p.name: p for p in (ALLEN_CAHN, BURGERS, VLASOV)}


def get_problem(name: str) -> PdeProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}"
        ) from None


@dataclass(frozen=True)
class CollocationSet:
    points: np.ndarray  # (n, d)
    scheme: str = "equidistant_grid"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def make_grid(problem: PdeProblem, n_per_dim) -> CollocationSet:
    """Tensor-product equidistant grid, excluding right endpoints (periodic)."""
    if np.isscalar(n_per_dim):
        n_per_dim = (int(n_per_dim),) * problem.spatial_dim
    n_per_dim = tuple(int(n) for n in n_per_dim)
    if len(n_per_dim) != problem.spatial_dim:
        raise ValueError("need one count per dimension")
    if any(n < 2 for n in n_per_dim):
        raise ValueError("grid counts must be >= 2")
    axes = [
        np.linspace(lo, hi, n, endpoint=False)
        for (lo, hi), n in zip(problem.domain, n_per_dim)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return CollocationSet(points=points)


def initial_condition(problem: PdeProblem, x) -> np.ndarray:
    """Exact initial condition evaluated at points (n, d) -> (n,)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if problem.name == "allen_cahn":
        x1 = X[:, 0]
        return (
            np.tanh(2.0 * np.sin(x1)) / 3.0
            - np.exp(-23.5 * (x1 - np.pi / 2) ** 2)
            + np.exp(-27.0 * (x1 - 4.2) ** 2)
            + np.exp(-38.0 * (x1 - 5.4) ** 2)
        )
    if problem.name == "burgers":
        x1 = X[:, 0]
        return (1.0 - x1**2) * np.exp(-30.0 * (x1 + 0.5) ** 2)
    if problem.name == "vlasov":
        v = X[:, 1]
        return np.exp(-0.5 * v**2) / np.sqrt(2.0 * np.pi)
    raise ValueError(problem.name)


def initial_condition_grad(problem: PdeProblem, x) -> np.ndarray:
    """Analytic spatial gradient of the initial condition, (n, d)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if problem.name == "allen_cahn":
        x1 = X[:, 0]
        sech2 = 1.0 / np.cosh(2.0 * np.sin(x1)) ** 2
        g = (
            (2.0 / 3.0) * np.cos(x1) * sech2
            + 47.0 * (x1 - np.pi / 2) * np.exp(-23.5 * (x1 - np.pi / 2) ** 2)
            - 54.0 * (x1 - 4.2) * np.exp(-27.0 * (x1 - 4.2) ** 2)
            - 76.0 * (x1 - 5.4) * np.exp(-38.0 * (x1 - 5.4) ** 2)
        )
        return g[:, None]
    if problem.name == "burgers":
        x1 = X[:, 0]
        e = np.exp(-30.0 * (x1 + 0.5) ** 2)
        g = -2.0 * x1 * e + (1.0 - x1**2) * (-60.0 * (x1 + 0.5)) * e
        return g[:, None]
    if problem.name == "vlasov":
        v = X[:, 1]
        u = np.exp(-0.5 * v**2) / np.sqrt(2.0 * np.pi)
        out = np.zeros_like(X)
        out[:, 1] = -v * u
        return out
    raise ValueError(problem.name)


def rhs_values(problem: PdeProblem, x, u, ux, uxx) -> np.ndarray:
    """Pointwise right-hand side f(x, u) from value/derivative arrays.

    Shapes: x (n, d), u (n,), ux (n, d), uxx (n, d) (uxx may be None for
    problems that do not need it).
    """
    if problem.name == "allen_cahn":
        if uxx is None:
            raise ValueError("allen_cahn rhs needs second derivatives")
        eps = problem.coefficients["eps"]
        return eps * uxx[:, 0] + u - u**3
    if problem.name == "burgers":
        if ux is None or uxx is None:
            raise ValueError("burgers rhs needs first and second derivatives")
        eps = problem.coefficients["eps"]
        return eps * uxx[:, 0] - u * ux[:, 0]
    if problem.name == "vlasov":
        if ux is None:
            raise ValueError("vlasov rhs needs first derivatives")
        X = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xs, v = X[:, 0], X[:, 1]
        return -v * ux[:, 0] - np.sin(xs) * ux[:, 1]
    raise ValueError(problem.name)


def rhs(problem: PdeProblem, bundle: network.EvalBundle, x) -> float:
    """Right-hand side at one point from an evaluation bundle."""
    if bundle.grad_x is None:
        raise ValueError("bundle is missing first derivatives")
    needs_hess = problem.name in ("allen_cahn", "burgers")
    if needs_hess and bundle.hess_diag is None:
        raise ValueError("bundle is missing second derivatives")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = np.array([bundle.value])
    ux = np.asarray(bundle.grad_x, dtype=np.float64)[None, :]
    uxx = (
        np.asarray(bundle.hess_diag, dtype=np.float64)[None, :]
        if bundle.hess_diag is not None
        else None
    )
    return float(rhs_values(problem, X, u, ux, uxx)[0])


def rhs_vector(
    problem: PdeProblem, arch: ArchSpec, theta: ParamVector, points: CollocationSet
) -> np.ndarray:
    """f(theta) over the collocation set: network derivatives then rhs."""
    u, ux, uxx = network.spatial_derivs_batch(arch, theta, points.points)
    return rhs_values(problem, points.points, u, ux, uxx)
