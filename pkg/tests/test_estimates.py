import math

import numpy as np
import pytest

from anisoflow.constants import SMALLNESS, SYMMETRY, BarrierParams, InteriorParams, theorem_params
from anisoflow.errors import DomainError, HypothesisNotMetError, PreconditionError
from anisoflow.estimates import OUT_OF_DOMAIN, ball_mask, bound, log_barrier, phi_heat, verify
from anisoflow.initial import InitialData
from anisoflow.integrand import Euclidean, OddPerturbed, Perturbed
from anisoflow.solver import FlowConfig, GridSpec, run

TWO_PI = 2.0 * math.pi


def _params(theorem=1, q=2.0, floor=2.0, A=0.75, M=1.0, Tprime=1.0, **kw):
    return BarrierParams(theorem, A=A, M=M, q=q, floor=floor, Tprime=Tprime, **kw)


def _interior(R=1.0, k=2.0, r=1.5):
    return InteriorParams(R=R, k=k, r=r, mu1=0.05, mu2=0.05)


# -- phi_heat -------------------------------------------------------------------


def test_phi_heat_example():
    assert phi_heat(0.0, 0.5, 0.75, 1.0) == pytest.approx(math.sqrt(2) * math.exp(-1.5), rel=1e-15)


def test_phi_heat_at_2m():
    t = np.array([0.1, 0.5, 2.0])
    assert np.allclose(phi_heat(2.0, t, 0.75, 1.0), t**-0.5, rtol=1e-15)
    assert np.allclose(phi_heat(-2.0, t, 0.75, 1.0, sign="+"), t**-0.5, rtol=1e-15)


def test_phi_heat_sign_mirrors():
    u = np.linspace(-1, 1, 9)
    assert np.allclose(phi_heat(u, 0.3, 0.6, 1.0, "+"), phi_heat(-u, 0.3, 0.6, 1.0, "-"))


@pytest.mark.parametrize("A", [0.4, 1.0, 2.5])
def test_phi_heat_kernel_residual(A):
    # the written kernel solves Phi_t = Phi_uu / A; at A = 1 both readings agree
    rng = np.random.default_rng(7)
    u = rng.uniform(-1, 1, 1000)
    t = rng.uniform(0.25, 2.0, 1000)
    M = 1.0
    h = 1e-3

    def f(du, dt):
        return phi_heat(u + du * h, t + dt * h, A, M)

    # fourth-order central stencils
    phi = f(0, 0)
    phi_t = (-f(0, 2) + 8 * f(0, 1) - 8 * f(0, -1) + f(0, -2)) / (12 * h)
    phi_uu = (-f(2, 0) + 16 * f(1, 0) - 30 * phi + 16 * f(-1, 0) - f(-2, 0)) / (12 * h**2)
    scale = np.abs(phi_t) + np.abs(phi_uu / A) + phi
    assert np.max(np.abs(phi_t - phi_uu / A) / scale) <= 1e-6


def test_phi_heat_domain():
    with pytest.raises(DomainError):
        phi_heat(0.0, 0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        phi_heat(0.0, [0.1, -0.1], 1.0, 1.0)
    with pytest.raises(DomainError):
        phi_heat(0.0, 0.1, 0.0, 1.0)


# -- bound ------------------------------------------------------------------------


def test_bound_theorem1_example():
    p = _params(floor=2.0)
    assert bound(1, p, 0.0, 0.5) == pytest.approx(0.5 * math.exp(3.0), rel=1e-14)
    assert float(bound(1, p, 0.0, 0.5)) == pytest.approx(10.0428, abs=1e-4)
    assert bound(1, _params(floor=20.0), 0.0, 0.5) == 20.0


def test_bound_floor_exact():
    p = _params(floor=3.0)
    u = np.linspace(-1, 1, 201)
    b = bound(1, p, u, 0.9)
    low = np.exp(log_barrier(p, u, 0.9)) < 3.0
    assert low.any() and np.all(b[low] == 3.0)
    assert np.all(b >= 3.0)


def test_bound_blows_up_near_zero():
    p = _params(q=1.5)
    vals = [float(bound(1, p, 0.5, t)) for t in (1e-2, 1e-3, 1e-4)]
    assert vals[0] < vals[1] < vals[2]
    with np.errstate(over="ignore"):
        assert bound(1, p, 0.5, 1e-6) == math.inf


def test_bound_decreasing_below_minimiser():
    p = _params(q=1.3, floor=1.0)
    rng = np.random.default_rng(2)
    for u in rng.uniform(-1, 1, 20):
        c = p.A * p.q * (abs(u) - 2 * p.M) ** 2 / 4.0
        t_star = 2.0 * c / p.q
        t = np.sort(rng.uniform(1e-3, min(t_star, p.Tprime), 50))
        b = np.array([float(bound(1, p, u, s)) for s in t])
        assert np.all(np.diff(b) <= 0)


def test_bound_theorem2_matches_theorem1_form():
    # t exp(A (|u| - 2M)^2 / (2t)) is the q = 2 barrier
    p1 = _params(theorem=1, q=2.0, floor=1.7)
    p2 = _params(theorem=2, q=2.0, floor=1.7)
    u = np.linspace(-1, 1, 41)
    for t in (0.05, 0.3, 1.0):
        b2 = bound(2, p2, u, t)
        assert np.array_equal(bound(1, p1, u, t), b2)
        direct = np.maximum(t * np.exp(0.75 * (np.abs(u) - 2.0) ** 2 / (2 * t)), 1.7)
        assert np.allclose(b2, direct, rtol=1e-14)


def test_bound_theorem3_localiser():
    ip = _interior(R=1.0, k=2.0, r=1.5)
    p = _params(theorem=3, floor=2.0, Tprime=0.2, interior=ip)
    t = 0.1
    rho2 = 1.0 - 2.0 * 2.0 * t
    x = np.array([[0.0, 0.0], [math.sqrt(rho2), 0.0], [0.0, 0.9], [0.3, 0.1]])
    b = bound(3, p, np.zeros(4), t, x)
    assert b[0] >= 2.0
    assert np.isnan(b[1]) and np.isnan(b[2])
    eta = rho2 - 0.1
    expect = max(t**1.0 * math.exp(0.75 * 2 * 4 / (4 * t)) * eta**-1.5, 2.0)
    assert b[3] == pytest.approx(expect, rel=1e-13)
    assert math.isnan(OUT_OF_DOMAIN)
    with pytest.raises(ValueError):
        bound(3, p, 0.0, t)


def test_bound_domain_and_theorem_guard():
    p = _params(Tprime=0.4)
    with pytest.raises(DomainError):
        bound(1, p, 0.0, 0.0)
    with pytest.raises(DomainError):
        bound(1, p, 0.0, 0.5)
    with pytest.raises(ValueError):
        bound(2, p, 0.0, 0.1)


# -- ball mask ------------------------------------------------------------------


def test_ball_mask_count_matches_area():
    grid = GridSpec(2, 256, TWO_PI)
    p = _params(theorem=3, Tprime=0.3, interior=_interior(R=grid.L / 4, k=2.0))
    for t in (0.01, 0.1, 0.3):
        rho = math.sqrt((grid.L / 4) ** 2 - 4.0 * t)
        count = int(ball_mask(grid, p, t).sum())
        area = math.pi * rho**2 / grid.h**2
        assert abs(count - area) <= 2 * math.pi * rho / grid.h


# -- verify ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def shallow():
    grid = GridSpec(1, 128, TWO_PI)
    F = Euclidean(1)
    p = theorem_params(F, 1.0, 1, 1)
    traj = run(FlowConfig(grid, F, InitialData("sine", amplitude=1e-3, modes=1), p.Tprime, sample_every=20))
    return grid, F, p, traj


def test_verify_shallow_sine(shallow):
    grid, F, p, traj = shallow
    rep = verify(traj, F, 1, p, grid)
    assert rep.rows and not rep.violated
    assert rep.min_margin > 0
    assert all(r.t >= 10 * traj.dt0 and r.t <= p.Tprime for r in rep.rows)
    assert all(r.cells_checked == 128 for r in rep.rows)
    # shallow data sits at F(-phi^0) = 1, under the floor P = 2
    assert all(abs(r.max_value - 1.0) < 1e-5 for r in rep.rows)
    s = rep.summary()
    assert s["theorem"] == 1 and s["violated"] is False and s["rows"] == len(rep.rows)


def test_verify_deterministic(shallow):
    grid, F, p, traj = shallow
    a, b = verify(traj, F, 1, p, grid), verify(traj, F, 1, p, grid)
    assert a.rows == b.rows


def test_verify_preconditions(shallow):
    grid, F, p, traj = shallow
    small = _params(M=1e-4, q=p.q, A=p.A, floor=p.floor, Tprime=p.Tprime)
    with pytest.raises(PreconditionError):
        verify(traj, F, 1, small, grid)
    with pytest.raises(PreconditionError):
        verify(traj, F, 1, p, GridSpec(1, 64, TWO_PI))
    with pytest.raises(ValueError):
        verify(traj, F, 2, p, grid)


def test_verify_hypotheses():
    grid = GridSpec(2, 16, TWO_PI)
    traj = run(FlowConfig(grid, OddPerturbed(2, 0.05), InitialData("trig"), 0.01))
    p2 = _params(theorem=2)
    with pytest.raises(HypothesisNotMetError) as err:
        verify(traj, OddPerturbed(2, 0.05), 2, p2, grid)
    assert err.value.condition == SYMMETRY
    loose = _params(theorem=1, C1=5.0)
    traj = run(FlowConfig(grid, Perturbed(2, 0.05), InitialData("trig"), 0.01))
    with pytest.raises(HypothesisNotMetError) as err:
        verify(traj, Perturbed(2, 0.05), 1, loose, grid)
    assert err.value.condition == SMALLNESS


def test_verify_reports_violation():
    # an artificially low floor and a short window expose a steep profile
    grid = GridSpec(1, 256, TWO_PI)
    F = Euclidean(1)
    traj = run(FlowConfig(grid, F, InitialData("sawtooth", width=0.01), 0.05, sample_every=5))
    p = _params(q=1.01, floor=1.0, A=0.75, M=1.0, Tprime=0.05)
    rep = verify(traj, F, 1, _params(q=40.0, floor=1.0, A=1e-3, Tprime=0.05), grid)
    assert rep.violated and rep.min_margin < 0
    assert rep.rows[0].z == -rep.rows[0].margin
    assert not verify(traj, F, 1, p, grid).violated
