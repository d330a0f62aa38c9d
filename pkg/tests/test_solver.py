import math

import numpy as np
import pytest

from anisoflow.errors import BlowUpError, ConfigError, StepRejectedError
from anisoflow.initial import InitialData, from_config, smoothed_sawtooth
from anisoflow.integrand import Euclidean, OddPerturbed, Perturbed, metric_matrix
from anisoflow.solver import (
    FlowConfig,
    GraphState,
    GridSpec,
    cfl_limit,
    coefficients,
    differentials,
    run,
    step,
)

TWO_PI = 2.0 * math.pi


def _trig_state(grid, seed=0):
    return GraphState(InitialData("trig", seed=seed).sample(grid))


def _cfl_dt(F, state, grid, safety=0.9):
    du, _ = differentials(state, grid)
    return safety * cfl_limit(coefficients(F, du), grid.h)


# -- grid and state -----------------------------------------------------------


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(3, 16, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 7, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 16, 0.0)
    g = GridSpec(2, 16, 4.0)
    assert g.h == 0.25 and g.shape == (16, 16) and g.coords().shape == (16, 16, 2)


def test_state_rejects_non_finite():
    with pytest.raises(BlowUpError):
        GraphState(np.array([0.0, np.nan]), 0.5)
    with pytest.raises(ValueError):
        GraphState(np.zeros(4), -1.0)


# -- differentials ------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2])
def test_differentials_constant_field(n):
    grid = GridSpec(n, 16, 1.0)
    du, d2u = differentials(GraphState(np.full(grid.shape, 3.5)), grid)
    expect = np.zeros(n + 1)
    expect[0] = -1.0
    assert np.all(du == expect)
    assert np.all(d2u == 0.0)


def test_differentials_sine_slope():
    grid = GridSpec(1, 128, TWO_PI)
    u = np.sin(grid.axes())
    du, d2u = differentials(GraphState(u), grid)
    # central-difference truncation h^2/6 at x = 0
    assert abs(du[0, 1] - 1.0) <= 8e-4
    assert np.max(np.abs(du[:, 1] - np.cos(grid.axes()))) <= 8e-4
    assert np.max(np.abs(d2u[:, 0, 0] + u)) <= 8e-4


def test_differentials_mixed_stencil_symmetric():
    grid = GridSpec(2, 64, TWO_PI)
    x = grid.coords()
    u = np.sin(x[..., 0]) * np.cos(2 * x[..., 1])
    du, d2u = differentials(GraphState(u), grid)
    assert np.all(du[..., 0] == -1.0)
    assert np.all(d2u[..., 0, 1] == d2u[..., 1, 0])
    exact = -2.0 * np.cos(x[..., 0]) * np.sin(2 * x[..., 1])
    assert np.max(np.abs(d2u[..., 0, 1] - exact)) <= 5 * grid.h**2


def test_differentials_translation():
    # c = 0.5 and integer-spaced u keep every sum exact in binary
    grid = GridSpec(2, 16, 16.0)
    u = np.random.default_rng(3).integers(-8, 8, grid.shape).astype(float)
    a = differentials(GraphState(u), grid)
    b = differentials(GraphState(u + 0.5), grid)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_differentials_translation_generic_rounding():
    grid = GridSpec(2, 32, TWO_PI)
    u = _trig_state(grid).u
    a = differentials(GraphState(u), grid)
    b = differentials(GraphState(u + 0.3), grid)
    assert np.max(np.abs(a[0] - b[0])) <= 1e-13
    assert np.max(np.abs(a[1] - b[1])) <= 1e-11


# -- coefficients -------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2])
def test_euclidean_coefficients_match_closed_form(n):
    grid = GridSpec(n, 32, TWO_PI)
    du, _ = differentials(_trig_state(grid, seed=4), grid)
    # steepen the slopes so the correction term matters
    p = du[..., 1:] * 3.0
    a = coefficients(Euclidean(n), np.concatenate([du[..., :1], p], axis=-1))
    closed = np.eye(n) - p[..., :, None] * p[..., None, :] / (1.0 + (p**2).sum(-1))[..., None, None]
    assert np.max(np.abs(a - closed)) <= 1e-12


def test_coefficients_match_metric(family):
    grid = GridSpec(2, 16, TWO_PI)
    du, _ = differentials(_trig_state(grid, seed=1), grid)
    a = coefficients(family, du)
    g = metric_matrix(family, du)[..., 1:, 1:]
    assert np.max(np.abs(a - g)) <= 1e-12


def test_cfl_limit_row_sum():
    a = np.array([[[2.0, -0.5], [-0.5, 1.0]], [[1.0, 0.0], [0.0, 1.0]]])
    assert cfl_limit(a, 0.1) == pytest.approx(0.01 / (2 * 4.0))


# -- step ---------------------------------------------------------------------


def test_step_constant_unchanged(family):
    grid = GridSpec(2, 16, 1.0)
    s = step(GraphState(np.full(grid.shape, -0.25), 1.0), family, grid, 1e-4)
    assert np.all(s.u == -0.25) and s.t == 1.0 + 1e-4


def test_step_curve_shortening_rule():
    grid = GridSpec(1, 64, TWO_PI)
    state = GraphState(np.sin(2 * grid.axes()) + 0.3 * np.cos(grid.axes()))
    dt = _cfl_dt(Euclidean(1), state, grid)
    new = step(state, Euclidean(1), grid, dt)
    du, d2u = differentials(state, grid)
    ux, uxx = du[:, 1], d2u[:, 0, 0]
    assert np.max(np.abs(new.u - (state.u + dt * uxx / (1.0 + ux**2)))) <= 1e-14


def test_step_rejects_large_dt():
    grid = GridSpec(1, 64, TWO_PI)
    state = GraphState(np.sin(grid.axes()))
    limit = _cfl_dt(Euclidean(1), state, grid, safety=1.0)
    with pytest.raises(StepRejectedError) as err:
        step(state, Euclidean(1), grid, 2.0 * limit)
    assert err.value.admissible_dt == pytest.approx(limit, rel=1e-14)
    with pytest.raises(ValueError):
        step(state, Euclidean(1), grid, 0.0)


@pytest.mark.parametrize("F", [Euclidean(2), Perturbed(2, 0.05), OddPerturbed(2, 0.05)], ids=str)
def test_maximum_principle_per_step(F):
    grid = GridSpec(2, 32, TWO_PI)
    state = _trig_state(grid, seed=2)
    for _ in range(200):
        new = step(state, F, grid, _cfl_dt(F, state, grid))
        assert new.u.max() <= state.u.max() + 1e-12
        assert new.u.min() >= state.u.min() - 1e-12
        state = new


def test_shift_equivariance_exact():
    grid = GridSpec(2, 32, TWO_PI)
    F = Perturbed(2, 0.05)
    u = _trig_state(grid, seed=5).u
    a = GraphState(u)
    b = GraphState(np.roll(u, (3, -7), axis=(0, 1)))
    for _ in range(20):
        dt = _cfl_dt(F, a, grid)
        assert dt == _cfl_dt(F, b, grid)
        a, b = step(a, F, grid, dt), step(b, F, grid, dt)
    assert np.array_equal(np.roll(a.u, (3, -7), axis=(0, 1)), b.u)


def test_translation_equivariance_to_rounding():
    grid = GridSpec(2, 32, TWO_PI)
    F = Euclidean(2)
    u = _trig_state(grid, seed=6).u
    a, b = GraphState(u), GraphState(u + 0.75)
    for _ in range(20):
        dt = _cfl_dt(F, a, grid)
        a, b = step(a, F, grid, dt), step(b, F, grid, dt)
    assert np.max(np.abs((a.u + 0.75) - b.u)) <= 1e-12


def test_translation_equivariance_exact_on_dyadic_data():
    # values and shift on a coarse dyadic lattice, so every difference is exact
    grid = GridSpec(1, 16, 16.0)
    F = Euclidean(1)
    u = np.random.default_rng(0).integers(-4, 4, grid.shape).astype(float)
    a, b = GraphState(u), GraphState(u + 8.0)
    dt = 2.0**-6
    a, b = step(a, F, grid, dt), step(b, F, grid, dt)
    assert np.array_equal(a.u + 8.0, b.u)


# -- run ----------------------------------------------------------------------


def _config(**kw):
    base = dict(
        grid=GridSpec(1, 64, TWO_PI),
        integrand=Euclidean(1),
        initial=InitialData("trig", seed=0),
        T=0.2,
        sample_every=10,
    )
    base.update(kw)
    return FlowConfig(**base)


def test_flow_config_validation():
    with pytest.raises(ValueError):
        _config(T=-1.0)
    with pytest.raises(ValueError):
        _config(cfl_safety=1.5)
    with pytest.raises(ValueError):
        _config(sample_every=0)
    with pytest.raises(ValueError):
        _config(integrand=Euclidean(2))


def test_run_zero_time():
    traj = run(_config(T=0.0))
    assert len(traj.snapshots) == 1 and traj.snapshots[0].t == 0.0 and traj.steps == 0


def test_run_snapshots_and_diagnostics():
    traj = run(_config(integrand=Perturbed(1, 0.05)))
    t = traj.times
    assert t[0] == 0.0 and t[-1] == 0.2
    assert np.all(np.diff(t) > 0)
    assert len(traj.snapshots) == traj.steps // 10 + 1 + (traj.steps % 10 != 0)
    hi = [s.max_u for s in traj.snapshots]
    lo = [s.min_u for s in traj.snapshots]
    assert np.all(np.diff(hi) <= 1e-12) and np.all(np.diff(lo) >= -1e-12)
    assert all(s.max_F >= 1.0 for s in traj.snapshots)
    assert traj.dt0 > 0


def test_run_deterministic():
    a, b = run(_config()), run(_config())
    assert np.array_equal(a.snapshots[-1].state.u, b.snapshots[-1].state.u)
    assert a.times.tolist() == b.times.tolist()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_blow_up():
    # a negative mobility is unstable; huge data overflows within a few steps
    class Backward(Euclidean):
        def graph_coefficients(self, grad_u):
            return -1e30 * super().graph_coefficients(grad_u)

    with pytest.raises(BlowUpError) as err:
        run(_config(integrand=Backward(1), T=1e300, cfl_safety=1.0))
    assert err.value.t > 0


def test_sine_decay_rate():
    grid = GridSpec(1, 256, TWO_PI)
    traj = run(FlowConfig(grid, Euclidean(1), InitialData("sine", amplitude=1e-3, modes=1), 1.0, sample_every=50))
    for s in traj.snapshots[1:]:
        ratio = s.max_u / (1e-3 * math.exp(-s.t))
        assert abs(ratio - 1.0) <= 0.02


def test_self_convergence_1d():
    F = Perturbed(1, 0.05)
    finals = {}
    for cells in (64, 128, 256):
        grid = GridSpec(1, cells, TWO_PI)
        finals[cells] = run(FlowConfig(grid, F, InitialData("trig", seed=0), 0.5)).snapshots[-1].state.u
    e1 = np.abs(finals[64] - finals[128][::2]).max()
    e2 = np.abs(finals[128] - finals[256][::2]).max()
    assert 3.5 <= e1 / e2 <= 4.5


# -- initial data -------------------------------------------------------------


def test_initial_kinds_and_normalisation():
    grid = GridSpec(2, 64, TWO_PI)
    for kind in ("sawtooth", "trig", "bump"):
        u = InitialData(kind, amplitude=0.5).sample(grid)
        assert u.shape == grid.shape
        # grid-independent sup-norm: sampled peak is at most the amplitude
        assert 0.49 <= np.abs(u).max() <= 0.5 + 1e-15
    assert np.all(InitialData("constant", amplitude=2.0).sample(grid) == 2.0)
    with pytest.raises(ValueError):
        InitialData("square")


def test_initial_normalisation_is_grid_independent():
    d = InitialData("trig", seed=3)
    coarse = d.sample(GridSpec(2, 32, TWO_PI))
    fine = d.sample(GridSpec(2, 64, TWO_PI))
    assert np.array_equal(coarse, fine[::2, ::2])


def test_initial_trig_seeded():
    grid = GridSpec(1, 32, TWO_PI)
    a = InitialData("trig", seed=1).sample(grid)
    assert np.array_equal(a, InitialData("trig", seed=1).sample(grid))
    assert not np.array_equal(a, InitialData("trig", seed=2).sample(grid))


def test_smoothed_sawtooth_limit():
    theta = np.array([0.5, 1.0, 2.0, 4.0])
    assert np.allclose(smoothed_sawtooth(theta, 1e-9), 1.0 - theta / math.pi, atol=1e-6)


def test_initial_from_config():
    d = from_config({"kind": "bump", "width": "0.1"}, seed=4)
    assert d == InitialData("bump", width=0.1, seed=4)
    with pytest.raises(ConfigError):
        from_config({"kind": "bump", "seed": "3"})
    with pytest.raises(ConfigError):
        from_config({"kind": "nope"})
    with pytest.raises(ConfigError):
        from_config({"kind": "trig", "modes": "x"})
