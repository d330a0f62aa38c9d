"""Sampled extremal constants of an integrand and per-theorem barrier parameters.

Every constant is an infimum or supremum over level sets of ``F`` and,
where relevant, over a ray parameter ``s``. Directions are drawn from
seeded streams so that a larger ``direction_samples`` always contains the
smaller sample set; local refinement is applied to every sample with
accept-if-better moves, so sampled infima never increase and suprema never
decrease as the budget grows.

Unbounded ray parameters are compactified with ``s = tan(theta)`` on a
uniform ``theta`` grid, and the analytic ``s -> inf`` limits are appended
as explicit candidates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq

from .errors import (
    HypothesisNotMetError,
    IntegrandInvalidError,
    PreconditionError,
    UnresolvedConstantError,
)
from .integrand import Integrand, check_structure, metric_matrix, sample_covectors, tangent_basis

S_EPS_SAFETY = 1.25
Q_MIN = 1.01
MU_MIN = 0.05
FLOOR_FACTOR = 2.0
DEGENERATE_EIG = 1e-10

SMALLNESS = "smallness of third derivatives condition (3)"
SYMMETRY = "symmetry condition (4)"


@dataclass(frozen=True)
class SearchBudget:
    direction_samples: int = 256
    s_grid: int = 64
    s_max: float = 1e4
    refine_iters: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("direction_samples", "s_grid", "refine_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.s_max > 1:
            raise ValueError("s_max must exceed 1")

    def scaled(self, factor: int) -> "SearchBudget":
        return SearchBudget(
            self.direction_samples * factor, self.s_grid, self.s_max, self.refine_iters, self.seed
        )


@dataclass(frozen=True)
class InteriorParams:
    R: float
    k: float
    r: float
    mu1: float
    mu2: float
    C2: float = 0.0

    def __post_init__(self) -> None:
        if not self.r > 1:
            raise ValueError("r must exceed 1")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not (0 < self.mu1 < 1 and 0 < self.mu2 < 1):
            raise ValueError("mu1, mu2 must lie in (0, 1)")
        if not self.R > 0:
            raise ValueError("R must be positive")


@dataclass(frozen=True)
class BarrierParams:
    """Constants of one theorem's barrier.

    ``floor`` is ``P`` (Theorems 1 and 3) or ``S`` (Theorem 2).
    """

    theorem: int
    A: float
    M: float
    q: float
    floor: float
    Tprime: float
    C1: float = 0.0
    interior: Optional[InteriorParams] = None

    def __post_init__(self) -> None:
        if self.theorem not in (1, 2, 3):
            raise ValueError("theorem must be 1, 2 or 3")
        if not self.q > 1:
            raise ValueError("q must exceed 1")
        if not self.A > 0:
            raise ValueError("A must be positive")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.Tprime > 0:
            raise ValueError("Tprime must be positive")
        if self.theorem == 3 and self.interior is None:
            raise ValueError("theorem 3 requires interior parameters")

    def to_dict(self) -> dict:
        return asdict(self)


# -- sampling helpers -------------------------------------------------------


def _unit(x: NDArray) -> NDArray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def span_directions(n: int, count: int, seed: int) -> NDArray:
    """Euclidean unit directions in span{phi^1..phi^n}, shape ``(m, n)``.

    For ``n = 1`` the two directions ``+-phi^1`` are exhaustive.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]])
    rng = np.random.default_rng([seed, 0])
    return _unit(rng.standard_normal((count, n)))


def _embed(p: NDArray, v0: float = 0.0) -> NDArray:
    """Covector with spatial part ``p`` and phi^0 component ``v0``."""
    out = np.empty(p.shape[:-1] + (p.shape[-1] + 1,))
    out[..., 0] = v0
    out[..., 1:] = p
    return out


def _ray_grid(budget: SearchBudget) -> NDArray:
    theta = np.linspace(0.0, math.atan(budget.s_max), budget.s_grid)
    return np.tan(theta)


def _hill_climb(
    objective: Callable[[NDArray], NDArray],
    dirs: NDArray,
    budget: SearchBudget,
    maximize: bool,
    tag: int,
) -> tuple[NDArray, NDArray]:
    """Per-sample accept-if-better random search on the unit sphere."""
    vals = objective(dirs)
    if dirs.shape[-1] == 1:
        return dirs, vals
    sign = 1.0 if maximize else -1.0
    for it in range(budget.refine_iters):
        rng = np.random.default_rng([budget.seed, tag, it])
        step = 0.2 * 0.7**it
        trial = _unit(dirs + step * rng.standard_normal(dirs.shape))
        tvals = objective(trial)
        better = sign * (tvals - vals) > 0
        dirs = np.where(better[:, None], trial, dirs)
        vals = np.where(better, tvals, vals)
    return dirs, vals


# -- C1 -----------------------------------------------------------------------


def _orthonormal_frame(F: Integrand, nu: NDArray) -> NDArray:
    """G-orthonormal basis of the tangent space at each ``nu``, ``(m, d, n)``."""
    e = tangent_basis(F, nu)
    g = np.swapaxes(e, -1, -2) @ metric_matrix(F, nu) @ e
    eig = np.linalg.eigvalsh(g)
    if eig.min() < DEGENERATE_EIG:
        raise IntegrandInvalidError(
            f"level-set metric degenerate (min eigenvalue {eig.min():.3g})"
        )
    chol = np.linalg.cholesky(g)
    # W = E L^{-T} so that W^T G W = I
    return np.swapaxes(np.linalg.solve(chol, np.swapaxes(e, -1, -2)), -1, -2)


def _inner_directions(n: int) -> NDArray:
    if n == 1:
        return np.array([[1.0]])
    if n == 2:
        th = np.linspace(0.0, math.pi, 180, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(12345)
    return np.vstack([np.eye(n), _unit(rng.standard_normal((400, n)))])


def _cubic_sup(t: NDArray, xs: NDArray) -> NDArray:
    """sup over unit x of |T(x,x,x)| for symmetric cubic forms ``t``."""
    vals = np.einsum("mijk,xi,xj,xk->mx", t, xs, xs, xs)
    best = np.abs(vals).max(axis=1)
    if t.shape[-1] == 1:
        return best
    # projected gradient ascent from the best grid point
    x = xs[np.abs(vals).argmax(axis=1)]
    for _ in range(20):
        fx = np.einsum("mijk,mi,mj,mk->m", t, x, x, x)
        grad = np.einsum("mijk,mj,mk->mi", t, x, x) * np.sign(fx)[:, None]
        x = _unit(x + 0.5 * grad)
        best = np.maximum(best, np.abs(np.einsum("mijk,mi,mj,mk->m", t, x, x, x)))
    return best


def _c1_ratio(F: Integrand, nu: NDArray, xs: NDArray) -> NDArray:
    f, _, _, d3 = F.jet(nu, 3)
    w = _orthonormal_frame(F, nu)
    q = (f**2)[:, None, None, None] * d3
    t = np.einsum("mabc,mai,mbj,mck->mijk", q, w, w, w)
    return _cubic_sup(t, xs)


def estimate_c1(F: Integrand, budget: SearchBudget = SearchBudget()) -> float:
    """Sampled smallest constant in the third-derivative smallness bound.

    Returns the supremum over sampled ``nu`` of the operator norm of the
    Cartan tensor in a G-orthonormal tangent frame, i.e.
    ``|Q(p,q,r)| / sqrt(G(p,p) G(q,q) G(r,r))`` over tangent triples.
    """
    rng = np.random.default_rng([budget.seed, 1])
    nu = sample_covectors(F.dim, budget.direction_samples, rng)
    xs = _inner_directions(F.dim)
    _, vals = _hill_climb(lambda d: _c1_ratio(F, d, xs), _unit(nu), budget, True, 11)
    return float(vals.max())


# -- A_P ------------------------------------------------------------------------


def _ray_entry(F: Integrand, dirs: NDArray, level: float) -> NDArray:
    """Smallest ``s > 0`` with ``F(s d - phi^0) = level`` for each direction.

    ``s -> F(s d - phi^0)`` is convex and below ``level`` at ``s = 0``, so
    the crossing is unique; vectorised bisection to machine precision.
    """

    def g(s):
        return F.value(_embed(s[:, None] * dirs, -1.0)) - level

    lo = np.zeros(len(dirs))
    hi = np.ones(len(dirs))
    while np.any(g(hi) <= 0):
        hi = np.where(g(hi) <= 0, 2.0 * hi, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        below = g(mid) <= 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return hi


def _a_p_along(F: Integrand, dirs: NDArray, s0: NDArray, budget: SearchBudget) -> NDArray:
    """inf over s >= s0 of G_{s d - phi^0}(s d, s d), limit included."""
    grid = 1.0 + _ray_grid(budget)
    s = s0[:, None] * grid[None, :]
    p = _embed(s[..., None] * dirs[:, None, :])
    nu = p.copy()
    nu[..., 0] = -1.0
    g = metric_matrix(F, nu)
    vals = np.einsum("msi,msij,msj->ms", p, g, p)
    limit = metric_matrix(F, _embed(dirs))[:, 0, 0]
    return np.minimum(vals.min(axis=1), limit)


def compute_a_p(F: Integrand, P: float, budget: SearchBudget = SearchBudget()) -> float:
    """Lower bound ``A_P`` of ``G_{p-phi^0}(p, p)`` over ``F(p - phi^0) >= P``."""
    apex = F.apex_value()
    if not P > apex:
        raise PreconditionError(f"P={P} must exceed F(-phi^0)={apex}")

    def objective(dirs):
        return _a_p_along(F, dirs, _ray_entry(F, dirs, P), budget)

    dirs = span_directions(F.dim, budget.direction_samples, budget.seed)
    _, vals = _hill_climb(objective, dirs, budget, False, 21)
    return float(vals.min())


# -- trace bounds ------------------------------------------------------------


def _trace_along(F: Integrand, dirs: NDArray, budget: SearchBudget) -> tuple[NDArray, NDArray]:
    s = _ray_grid(budget)
    nu = _embed(s[None, :, None] * dirs[:, None, :], -1.0)
    tr = np.trace(metric_matrix(F, nu)[..., 1:, 1:], axis1=-2, axis2=-1)
    limit = np.trace(metric_matrix(F, _embed(dirs))[..., 1:, 1:], axis1=-2, axis2=-1)
    return np.minimum(tr.min(axis=1), limit), np.maximum(tr.max(axis=1), limit)


def compute_trace_bounds(F: Integrand, budget: SearchBudget = SearchBudget()) -> tuple[float, float]:
    """Sampled ``(k_lo, k_hi)`` bounding ``sum_i G_{p-phi^0}(phi^i, phi^i)``."""
    if F.dim < 2:
        raise PreconditionError("trace bounds require n > 1")
    dirs = span_directions(F.dim, budget.direction_samples, budget.seed)
    _, lo = _hill_climb(lambda d: _trace_along(F, d, budget)[0], dirs, budget, False, 31)
    _, hi = _hill_climb(lambda d: _trace_along(F, d, budget)[1], dirs, budget, True, 32)
    return float(lo.min()), float(hi.max())


# -- C2 ---------------------------------------------------------------------------


def _symmetry_residual(F: Integrand) -> Optional[float]:
    """Largest sampled symmetry residual, or None when the condition holds."""
    report = check_structure(F, samples=200, seed=0)
    if report.symmetric:
        return None
    return max(report.symmetry_err, report.symmetry_identity_err)


def _require_symmetric(F: Integrand) -> None:
    residual = _symmetry_residual(F)
    if residual is not None:
        raise PreconditionError(f"{SYMMETRY} violated (residual {residual:.3g})")


def _require_symmetric_hypothesis(F: Integrand) -> None:
    residual = _symmetry_residual(F)
    if residual is not None:
        raise HypothesisNotMetError(SYMMETRY, f"residual {residual:.3g}")


def _level_one(F: Integrand, dirs: NDArray) -> NDArray:
    p = _embed(dirs)
    return p / F.value(p)[:, None]


def _c2_along(F: Integrand, dirs: NDArray, qs: NDArray, budget: SearchBudget) -> NDArray:
    p = _level_one(F, dirs)
    s = _ray_grid(budget)
    sp = s[None, :, None] * p[:, None, :]
    nu = sp.copy()
    nu[..., 0] = -1.0
    f = F.value(nu)
    g = metric_matrix(F, nu)
    w = f[..., None] * np.einsum("msi,msij->msj", sp, g)
    # s -> inf limit: -D(F^2 D^2F)|_p(phi^0, phi^0, .)
    fp, d1, d2, d3 = F.jet(p, 3)
    lim = -(2.0 * fp[:, None] * d1[:, 0, None] * d2[:, 0, :] + (fp**2)[:, None] * d3[:, 0, 0, :])
    w = np.concatenate([w, lim[:, None, :]], axis=1)
    vals = np.einsum("msj,xj->msx", w[..., 1:], qs[:, 1:])
    return vals.max(axis=(1, 2))


def compute_c2(F: Integrand, budget: SearchBudget = SearchBudget()) -> float:
    """Sampled cross-term constant ``C2`` of a symmetric integrand."""
    _require_symmetric(F)
    dirs = span_directions(F.dim, budget.direction_samples, budget.seed)
    qs = _level_one(F, dirs)
    _, vals = _hill_climb(lambda d: _c2_along(F, d, qs, budget), dirs, budget, True, 41)
    return max(float(vals.max()), 0.0)


# -- S_eps ------------------------------------------------------------------------


def s_eps_ratio(F: Integrand, p: NDArray) -> NDArray:
    """Worst ratio over ``q`` in span{phi^1..phi^n} of the S_eps quotient.

    ``p`` holds covectors in span{phi^1..phi^n} (phi^0 component zero).
    The supremum over ``q`` of ``|F D(F D^2F)(p, q^, q^)| / G(q, q)`` is a
    generalized eigenvalue problem, solved exactly.
    """
    nu = p.copy()
    nu[..., 0] = -1.0
    f, d1, d2, d3 = F.jet(nu, 3)
    g = f[..., None, None] * d2
    dg = d1[..., :, None, None] * d2[..., None, :, :] + f[..., None, None, None] * d3
    d = p.shape[-1]
    proj = np.eye(d) - (nu[..., :, None] * d1[..., None, :]) / f[..., None, None]
    m = f[..., None, None] * np.einsum("...c,...cab->...ab", p, dg)
    m = np.swapaxes(proj, -1, -2) @ m @ proj
    gs = g[..., 1:, 1:]
    ms = m[..., 1:, 1:]
    chol = np.linalg.cholesky(gs)
    linv = np.linalg.inv(chol)
    k = linv @ ms @ np.swapaxes(linv, -1, -2)
    lam = np.abs(np.linalg.eigvalsh(0.5 * (k + np.swapaxes(k, -1, -2)))).max(axis=-1)
    gpp = np.einsum("...i,...ij,...j->...", p, g, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gpp > 0, lam / np.sqrt(np.maximum(gpp, 1e-300)), 0.0)
    return ratio


def _s_eps_along(F: Integrand, dirs: NDArray, eps: float, budget: SearchBudget, top: list) -> NDArray:
    s = _ray_grid(budget)[1:]
    p = _embed(s[None, :, None] * dirs[:, None, :])
    ratio = s_eps_ratio(F, p)
    nu = p.copy()
    nu[..., 0] = -1.0
    fvals = F.value(nu)
    bad = ratio > eps
    if np.any(bad[:, -1]):
        top.append(float(fvals[:, -1][bad[:, -1]].max()))
    return np.where(bad, fvals, 0.0).max(axis=1)


def compute_s_eps(F: Integrand, eps: float, budget: SearchBudget = SearchBudget()) -> float:
    """Sampled threshold beyond which the S_eps inequality holds, times 1.25.

    The returned value is ``1.25 * max(F(-phi^0), largest sampled
    F(p - phi^0) at which the inequality fails)``.
    """
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    _require_symmetric(F)
    top: list[float] = []
    dirs = span_directions(F.dim, budget.direction_samples, budget.seed)
    _, vals = _hill_climb(lambda d: _s_eps_along(F, d, eps, budget, top), dirs, budget, True, 51)
    worst = float(vals.max())
    if top:
        raise UnresolvedConstantError(
            "inequality still violated at the end of the sampled ray", max(worst, max(top))
        )
    return S_EPS_SAFETY * max(worst, F.apex_value())


# -- theorem parameters -------------------------------------------------------


def heat_window(A: float, M: float) -> float:
    """Largest time for which the barrier's second u-derivative is non-negative."""
    return A * M**2 / 2.0


def unit_barrier_time(A: float, M: float) -> float:
    """Time up to which ``t^{-1/2} exp(-A M^2 / (4 t)) <= 1``."""
    t_peak = heat_window(A, M)

    def g(t):
        return -0.5 * math.log(t) - A * M**2 / (4.0 * t)

    if g(t_peak) <= 0:
        return t_peak
    lo = t_peak
    while g(lo) > 0:
        lo /= 2.0
    return brentq(g, lo, t_peak, xtol=1e-15)


def theorem_params(
    F: Integrand,
    M: float,
    n: int,
    theorem: int,
    R: Optional[float] = None,
    budget: SearchBudget = SearchBudget(),
) -> BarrierParams:
    """Assemble the barrier constants of Theorem 1, 2 or 3."""
    if not M > 0:
        raise PreconditionError("M must be positive")
    if n != F.dim:
        raise PreconditionError(f"n={n} does not match integrand dimension {F.dim}")
    sqrt_n = math.sqrt(n)

    if theorem == 1:
        c1 = estimate_c1(F, budget)
        if not c1**2 < 4.0 / sqrt_n:
            raise HypothesisNotMetError(SMALLNESS, f"C1^2={c1**2:.4g} >= 4/sqrt(n)")
        q = max(1.0 / (1.0 - c1**2 * sqrt_n / 4.0), Q_MIN)
        floor = FLOOR_FACTOR * F.apex_value()
        A = compute_a_p(F, floor, budget)
        return BarrierParams(1, A, M, q, floor, heat_window(A, M), C1=c1)

    if theorem == 2:
        _require_symmetric_hypothesis(F)
        eps = math.sqrt(2.0 / n)
        floor = compute_s_eps(F, eps, budget)
        A = compute_a_p(F, floor, budget)
        return BarrierParams(2, A, M, 2.0, floor, heat_window(A, M))

    if theorem == 3:
        if n < 2:
            raise PreconditionError("theorem 3 requires n > 1")
        if R is None or not R > 0:
            raise PreconditionError("theorem 3 requires a ball radius R > 0")
        _require_symmetric_hypothesis(F)
        c1 = estimate_c1(F, budget)
        if not c1**2 < 2.0 / sqrt_n:
            raise HypothesisNotMetError(SMALLNESS, f"C1^2={c1**2:.4g} >= 2/sqrt(n)")
        mu = max(c1**2 * sqrt_n / 2.0, MU_MIN)
        r = 1.0 / (1.0 - mu)
        _, k = compute_trace_bounds(F, budget)
        c2 = compute_c2(F, budget)
        floor = FLOOR_FACTOR * F.apex_value()
        A = compute_a_p(F, floor, budget)
        tprime = min(heat_window(A, M), unit_barrier_time(A, M))
        q = max(
            1.0 / (1.0 - c1**2 * sqrt_n / 4.0),
            (1.0 + 2.0 * c1 * c2 * r * R ** (2 * r - 1) * tprime / (A**2 * M)) / (1.0 - mu),
            Q_MIN,
        )
        interior = InteriorParams(R=R, k=k, r=r, mu1=mu, mu2=mu, C2=c2)
        return BarrierParams(3, A, M, q, floor, tprime, C1=c1, interior=interior)

    raise ValueError("theorem must be 1, 2 or 3")
