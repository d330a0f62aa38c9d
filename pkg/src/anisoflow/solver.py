"""Explicit finite-difference solver for graph-form anisotropic mean curvature flow.

The height ``u`` of a periodic graph evolves by
``u_t = a^{ij}(Du) u_ij`` with ``a^{ij} = G_{Du - phi^0}(phi^i, phi^j)``.
Space is discretised with second-order central differences (the mixed
derivative uses the 4-point cross stencil), time with forward Euler under
a per-step CFL restriction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import BlowUpError, StepRejectedError
from .initial import InitialData
from .integrand import Integrand

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    n: int
    cells: int
    L: float

    def __post_init__(self) -> None:
        if self.n not in (1, 2):
            raise ValueError("solver supports n = 1 or 2")
        if self.cells < 8:
            raise ValueError("need at least 8 cells per axis")
        if not self.L > 0:
            raise ValueError("period L must be positive")

    @property
    def h(self) -> float:
        return self.L / self.cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells,) * self.n

    def axes(self) -> NDArray:
        return np.arange(self.cells) * self.h

    def coords(self) -> NDArray:
        """Physical coordinates of every node, shape ``shape + (n,)``."""
        x = self.axes()
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"), axis=-1)


@dataclass(frozen=True)
class GraphState:
    u: NDArray
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError("time must be non-negative")
        if not np.all(np.isfinite(self.u)):
            raise BlowUpError(self.t)


def _stencils(u: NDArray, grid: GridSpec) -> tuple[NDArray, NDArray]:
    """Central differences with components leading: ``(n, ...)`` and ``(n, n, ...)``."""
    h = grid.h
    n = grid.n
    # one wrap-padded copy; every stencil below is a slice of it
    w = np.pad(u, 1, mode="wrap")
    core = (slice(1, -1),) * n
    grad = np.empty((n,) + u.shape)
    hess = np.empty((n, n) + u.shape)
    for i in range(n):
        fwd = w[core[:i] + (slice(2, None),) + core[i + 1 :]]
        bwd = w[core[:i] + (slice(None, -2),) + core[i + 1 :]]
        grad[i] = (fwd - bwd) / (2.0 * h)
        hess[i, i] = (fwd - 2.0 * u + bwd) / h**2
    if n == 2:
        hess[0, 1] = (w[2:, 2:] - w[2:, :-2] - w[:-2, 2:] + w[:-2, :-2]) / (4.0 * h**2)
        hess[1, 0] = hess[0, 1]
    return grad, hess


def _normal(grad: NDArray) -> NDArray:
    du = np.empty(grad.shape[1:] + (grad.shape[0] + 1,))
    du[..., 0] = -1.0
    du[..., 1:] = np.moveaxis(grad, 0, -1)
    return du


def differentials(state: GraphState, grid: GridSpec) -> tuple[NDArray, NDArray]:
    """Per-node normal covector ``Du - phi^0`` and spatial Hessian ``D^2u``.

    Returns arrays of shape ``shape + (n + 1,)`` and ``shape + (n, n)``.
    """
    grad, hess = _stencils(state.u, grid)
    return _normal(grad), np.moveaxis(hess, (0, 1), (-2, -1)).copy()


def coefficients(F: Integrand, du: NDArray) -> NDArray:
    """Flow coefficients ``a^{ij}`` for ``i, j >= 1`` at each node."""
    a = F.graph_coefficients(np.moveaxis(np.asarray(du)[..., 1:], -1, 0))
    return np.moveaxis(a, (0, 1), (-2, -1))


def cfl_limit(a: NDArray, h: float) -> float:
    """``h^2 / (2 max(sum_i a^ii + sum_{i != j} |a^ij|))`` over cells."""
    # a^ii > 0, so the row-sum bound is the entrywise absolute sum
    return float(h**2 / (2.0 * np.abs(a).sum(axis=(-2, -1)).max()))


def _cfl_leading(a: NDArray, h: float) -> float:
    return float(h**2 / (2.0 * np.abs(a).sum(axis=(0, 1)).max()))


def _rate(a: NDArray, hess: NDArray) -> NDArray:
    # sum_ij a^ij u_ij with components leading
    return np.einsum("ij...,ij...->...", a, hess)


def step(state: GraphState, F: Integrand, grid: GridSpec, dt: float) -> GraphState:
    """One forward-Euler step; rejects ``dt`` above the CFL limit."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grad, hess = _stencils(state.u, grid)
    a = F.graph_coefficients(grad)
    limit = _cfl_leading(a, grid.h)
    if dt > limit:
        raise StepRejectedError(dt, limit)
    return GraphState(state.u + dt * _rate(a, hess), state.t + dt)


@dataclass(frozen=True)
class FlowConfig:
    grid: GridSpec
    integrand: Integrand
    initial: InitialData
    T: float
    cfl_safety: float = 0.9
    sample_every: int = 100

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ValueError("end time T must be non-negative")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.integrand.dim != self.grid.n:
            raise ValueError("integrand dimension must match grid dimension")


@dataclass
class Snapshot:
    t: float
    state: GraphState
    max_u: float
    min_u: float
    max_F: float
    dt: float


@dataclass
class Trajectory:
    grid: GridSpec
    snapshots: list[Snapshot] = field(default_factory=list)
    dt0: float = 0.0
    steps: int = 0

    @property
    def times(self) -> NDArray:
        return np.array([s.t for s in self.snapshots])


def take_snapshot(state: GraphState, F: Integrand, grid: GridSpec, dt: float) -> Snapshot:
    grad, _ = _stencils(state.u, grid)
    du = _normal(grad)
    return Snapshot(
        t=state.t,
        state=state,
        max_u=float(state.u.max()),
        min_u=float(state.u.min()),
        max_F=float(F.value(du).max()),
        dt=dt,
    )


def run(config: FlowConfig) -> Trajectory:
    """Evolve the initial data to ``T`` with adaptive CFL-limited steps."""
    grid, F = config.grid, config.integrand
    state = GraphState(config.initial.sample(grid), 0.0)
    traj = Trajectory(grid)
    traj.snapshots.append(take_snapshot(state, F, grid, 0.0))
    T = config.T
    nsteps = 0
    while state.t < T:
        grad, hess = _stencils(state.u, grid)
        a = F.graph_coefficients(grad)
        dt = config.cfl_safety * _cfl_leading(a, grid.h)
        t_next = state.t + dt
        if t_next >= T or T - t_next <= 1e-12 * T:
            dt, t_next = T - state.t, T
        u_next = state.u + dt * _rate(a, hess)
        if not np.all(np.isfinite(u_next)):
            raise BlowUpError(t_next)
        state = GraphState(u_next, t_next)
        nsteps += 1
        if nsteps == 1:
            traj.dt0 = dt
        if nsteps % config.sample_every == 0 or state.t >= T:
            traj.snapshots.append(take_snapshot(state, F, grid, dt))
    traj.steps = nsteps
    logger.debug("run finished: %d steps, %d snapshots", nsteps, len(traj.snapshots))
    return traj
