"""Barrier functions and runtime verification of the gradient bounds.

The quantity bounded is ``F(Du - phi^0)``. Theorems 1 and 2 bound it on
periodic solutions by ``max{barrier(u, t), floor}``; Theorem 3 multiplies
the barrier by ``(R^2 - 2 k t - |x|^2)^(-r)`` and only applies inside the
shrinking ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .constants import SMALLNESS, SYMMETRY, BarrierParams
from .errors import DomainError, HypothesisNotMetError, PreconditionError
from .integrand import Integrand, check_structure
from .solver import GridSpec, Trajectory, differentials

START_FACTOR = 10.0
OUT_OF_DOMAIN = math.nan


def phi_heat(u: ArrayLike, t: ArrayLike, A: float, M: float, sign: str = "-") -> NDArray:
    """``t^{-1/2} exp(-A (u -+ 2M)^2 / (4t))``; ``sign='-'`` uses ``u - 2M``.

    As written this kernel solves ``Phi_t = Phi_uu / A``.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise DomainError("phi_heat requires t > 0")
    if not A > 0:
        raise DomainError("phi_heat requires A > 0")
    shift = 2.0 * M if sign == "-" else -2.0 * M
    w = np.asarray(u, dtype=np.float64) - shift
    return np.exp(-A * w**2 / (4.0 * t)) / np.sqrt(t)


def log_barrier(params: BarrierParams, u: ArrayLike, t: ArrayLike) -> NDArray:
    """Log of ``t^{q/2} exp(A q (|u| - 2M)^2 / (4t))``."""
    t = np.asarray(t, dtype=np.float64)
    w = np.abs(np.asarray(u, dtype=np.float64)) - 2.0 * params.M
    q = params.q
    return 0.5 * q * np.log(t) + params.A * q * w**2 / (4.0 * t)


def bound(
    theorem: int,
    params: BarrierParams,
    u: ArrayLike,
    t: float,
    x: Optional[ArrayLike] = None,
) -> NDArray:
    """Right-hand side of the theorem's gradient bound.

    For Theorem 3, ``x`` is the position relative to the ball centre
    (last axis = spatial dimension); points outside the shrinking ball get
    :data:`OUT_OF_DOMAIN` (NaN).
    """
    if theorem != params.theorem:
        raise ValueError(f"params were assembled for theorem {params.theorem}")
    if not 0 < t <= params.Tprime:
        raise DomainError(f"t={t} outside (0, T'={params.Tprime}]")
    logb = log_barrier(params, u, t)
    if theorem == 3:
        if x is None:
            raise ValueError("theorem 3 requires a position x")
        ip = params.interior
        x = np.asarray(x, dtype=np.float64)
        eta = ip.R**2 - 2.0 * ip.k * t - np.sum(x**2, axis=-1)
        inside = eta > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            logb = logb - ip.r * np.log(np.where(inside, eta, 1.0))
        with np.errstate(over="ignore"):
            out = np.maximum(np.exp(logb), params.floor)
        return np.where(inside, out, OUT_OF_DOMAIN)
    with np.errstate(over="ignore"):
        return np.maximum(np.exp(logb), params.floor)


@dataclass
class EstimateRow:
    t: float
    cell: int
    value: float
    bound: float
    margin: float
    max_value: float
    cells_checked: int

    @property
    def z(self) -> float:
        # max over cells of F(Du - phi^0) - bound
        return -self.margin


@dataclass
class EstimateReport:
    theorem: int
    params: BarrierParams
    rows: list[EstimateRow] = field(default_factory=list)

    @property
    def min_margin(self) -> float:
        return min((r.margin for r in self.rows), default=math.inf)

    @property
    def violated(self) -> bool:
        return self.min_margin < 0

    def summary(self) -> dict:
        mm = self.min_margin
        return {
            "theorem": self.theorem,
            "min_margin": mm if math.isfinite(mm) else None,
            "violated": self.violated,
            "rows": len(self.rows),
            "params": self.params.to_dict(),
        }


def ball_mask(grid: GridSpec, params: BarrierParams, t: float) -> NDArray:
    x = grid.coords() - grid.L / 2.0
    ip = params.interior
    return ip.R**2 - 2.0 * ip.k * t - np.sum(x**2, axis=-1) > 0


def _check_hypotheses(F: Integrand, theorem: int, params: BarrierParams) -> None:
    sqrt_n = math.sqrt(F.dim)
    if theorem == 1 and not params.C1**2 < 4.0 / sqrt_n:
        raise HypothesisNotMetError(SMALLNESS)
    if theorem == 3 and not params.C1**2 < 2.0 / sqrt_n:
        raise HypothesisNotMetError(SMALLNESS)
    if theorem in (2, 3) and not check_structure(F, samples=200, seed=0).symmetric:
        raise HypothesisNotMetError(SYMMETRY)


def verify(
    traj: Trajectory,
    F: Integrand,
    theorem: int,
    params: BarrierParams,
    grid: GridSpec,
) -> EstimateReport:
    """Compare ``F(Du - phi^0)`` with the theorem bound on every snapshot.

    Snapshots with ``10 dt0 <= t <= T'`` are checked.
    """
    if traj.grid != grid:
        raise PreconditionError("trajectory was produced on a different grid")
    if theorem != params.theorem:
        raise ValueError(f"params were assembled for theorem {params.theorem}")
    _check_hypotheses(F, theorem, params)
    sup_u = max(max(abs(s.max_u), abs(s.min_u)) for s in traj.snapshots)
    if sup_u > params.M * (1.0 + 1e-12):
        raise PreconditionError(f"sup|u|={sup_u} exceeds M={params.M}")

    report = EstimateReport(theorem, params)
    start = START_FACTOR * traj.dt0
    x = grid.coords() - grid.L / 2.0 if theorem == 3 else None
    for snap in traj.snapshots:
        if snap.t < start or snap.t <= 0 or snap.t > params.Tprime:
            continue
        du, _ = differentials(snap.state, grid)
        value = F.value(du)
        b = bound(theorem, params, snap.state.u, snap.t, x)
        valid = ~np.isnan(b)
        if not np.any(valid):
            continue
        margin = np.where(valid, b - value, np.inf)
        cell = int(np.argmin(margin))
        report.rows.append(
            EstimateRow(
                t=snap.t,
                cell=cell,
                value=float(value.flat[cell]),
                bound=float(b.flat[cell]),
                margin=float(margin.flat[cell]),
                max_value=float(value[valid].max()),
                cells_checked=int(valid.sum()),
            )
        )
    return report
