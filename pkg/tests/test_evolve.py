import math

import numpy as np
import pytest

from core.errors import ConfigError, LightConeOverflowError
from core.evolve import (
    SchemeConfig,
    iterate_steps,
    mass_rotation,
    nonlinear_substep,
    reverse_step,
    run_trajectory,
    step,
    transport_shift,
)
from core.field_state import Grid, SpinorField, build_initial, l2_distance_sq, norms
from core.model_kernel import custom, preset
from tests.helpers import constants_for, gaussian


def spike(grid, j, component):
    a = np.zeros(grid.n_cells, dtype=complex)
    a[j] = 1.0
    z = np.zeros(grid.n_cells, dtype=complex)
    return SpinorField(a, z, grid) if component == "u" else SpinorField(z, a, grid)


def test_scheme_derives_dt_from_grid():
    grid = Grid(-10.0, 10.0, 200)
    scheme = SchemeConfig(grid, 2.0)
    assert scheme.dt == grid.dx
    assert scheme.n_steps == 20
    assert scheme.substep_order == "strang"
    assert scheme.diagnostics_stride == 10
    with pytest.raises(ConfigError):
        SchemeConfig(grid, 0.15)
    with pytest.raises(ConfigError):
        SchemeConfig(grid, 1.0, substep_order="yoshida")
    with pytest.raises(ConfigError):
        SchemeConfig(grid, -1.0)


def test_transport_moves_spikes_one_cell():
    grid = Grid(0.0, 1.0, 16)
    moved = transport_shift(spike(grid, 5, "u"))
    assert moved.u[6] == 1.0 and np.count_nonzero(moved.u) == 1
    assert moved.t == pytest.approx(grid.dx)
    moved = transport_shift(spike(grid, 5, "v"))
    assert moved.v[4] == 1.0 and np.count_nonzero(moved.v) == 1


def test_transport_is_a_permutation(grid, small_init):
    twice = transport_shift(transport_shift(small_init))
    np.testing.assert_array_equal(twice.u[2:], small_init.u[:-2])
    np.testing.assert_array_equal(twice.v[:-2], small_init.v[2:])
    assert norms(twice).charge == pytest.approx(norms(small_init).charge, rel=1e-13)


def test_outflow_raises():
    grid = Grid(0.0, 1.0, 16)
    with pytest.raises(LightConeOverflowError):
        transport_shift(spike(grid, 15, "u"))
    with pytest.raises(LightConeOverflowError):
        transport_shift(spike(grid, 0, "v"))
    # 反向平移时流出端互换
    with pytest.raises(LightConeOverflowError):
        transport_shift(spike(grid, 0, "u"), reverse=True)


def test_mass_rotation():
    grid = Grid(0.0, 1.0, 8)
    field = SpinorField(np.ones(8), np.zeros(8), grid)
    out = mass_rotation(field, 1.0, math.pi / 2)
    np.testing.assert_allclose(out.u, 0.0, atol=1e-15)
    np.testing.assert_allclose(out.v, 1j)
    assert mass_rotation(field, 0.0, 0.3) is field

    rng = np.random.default_rng(0)
    f = SpinorField(rng.normal(size=8) + 1j * rng.normal(size=8), rng.normal(size=8) + 0j, grid)
    g = mass_rotation(f, 0.7, 0.13)
    np.testing.assert_allclose(g.density_u + g.density_v, f.density_u + f.density_v, rtol=1e-14)


def test_thirring_substep_is_phase_rotation():
    grid = Grid(0.0, 1.0, 8)
    params = preset("thirring", 1.0, 0.0)
    field = SpinorField(np.ones(8), np.full(8, 2.0), grid)
    dt = 0.05
    out = nonlinear_substep(field, params, dt)
    np.testing.assert_allclose(out.u, np.exp(-4j * dt))
    np.testing.assert_allclose(out.v, 2.0 * np.exp(-1j * dt))
    assert nonlinear_substep(field, params, 0.0) is field


def test_gross_neveu_null_direction_is_fixed():
    grid = Grid(0.0, 1.0, 8)
    params = preset("gross_neveu", 1.0, 0.0)
    field = SpinorField(np.ones(8), np.full(8, 1j), grid)
    out = nonlinear_substep(field, params, 0.3)
    np.testing.assert_allclose(out.u, field.u)
    np.testing.assert_allclose(out.v, field.v)


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
def test_exact_substep_matches_rk4(name):
    grid = Grid(0.0, 1.0, 8)
    params = preset(name, 1.0, 0.0)
    rng = np.random.default_rng(3)
    field = SpinorField(0.5 * (rng.normal(size=8) + 1j * rng.normal(size=8)),
                        0.5 * (rng.normal(size=8) + 1j * rng.normal(size=8)), grid)
    dt = 1e-4
    exact = nonlinear_substep(field, params, dt, "exact_preset")
    approx = nonlinear_substep(field, params, dt, "rk4")
    np.testing.assert_allclose(approx.u, exact.u, atol=1e-13)
    np.testing.assert_allclose(approx.v, exact.v, atol=1e-13)


def test_custom_model_requires_rk4():
    grid = Grid(0.0, 1.0, 8)
    params = custom((1, 0, 1, 0, 0), (1, 0, 1, 0, 0), 0.0)
    field = SpinorField.zeros(grid)
    with pytest.raises(ConfigError):
        nonlinear_substep(field, params, 0.1, "exact_preset")
    with pytest.raises(ConfigError):
        next(iterate_steps(field, params, SchemeConfig(grid, 0.25)))


def test_zero_field_stays_zero(grid, thirring):
    scheme = SchemeConfig(grid, 1.0)
    field = SpinorField.zeros(grid)
    for _ in range(scheme.n_steps):
        field = step(field, thirring, scheme)
    assert not field.u.any() and not field.v.any()
    assert field.t == pytest.approx(1.0)


def test_decoupled_transport_is_exact(grid):
    params = preset("thirring", 1.0, 0.0)
    init = build_initial(grid, (gaussian("u", -3.0, 1.0),), final_time=2.0)
    scheme = SchemeConfig(grid, 2.0)
    traj = run_trajectory(init, params, scheme, constants_for(params))
    n = scheme.n_steps
    np.testing.assert_array_equal(traj.final.u[n:], init.u[:-n])
    assert not traj.final.v.any()


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
@pytest.mark.parametrize("order", ["strang", "lie"])
def test_charge_is_conserved(grid, name, order):
    # 守恒不需要小数据
    params = preset(name, 1.0, 1.0)
    init = build_initial(grid, (gaussian("u", -2.0, 0.8), gaussian("v", 2.0, 0.8, phase=1.0)), 4.0)
    scheme = SchemeConfig(grid, 4.0, substep_order=order)
    traj = run_trajectory(init, params, scheme, constants_for(params))
    L0 = traj.records[0].L0
    assert max(abs(r.L0 - L0) for r in traj.records) <= 1e-12 * L0


@pytest.mark.parametrize("order", ["strang", "lie"])
def test_reverse_step_undoes_step(grid, gross_neveu, small_init, order):
    scheme = SchemeConfig(grid, 4.0, substep_order=order)
    field = small_init
    for _ in range(15):
        field = step(field, gross_neveu, scheme)
    for _ in range(15):
        field = reverse_step(field, gross_neveu, scheme)
    assert field.t == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(field.u, small_init.u, atol=1e-14)
    np.testing.assert_allclose(field.v, small_init.v, atol=1e-14)


def test_snapshots_follow_stride(grid, thirring, thirring_constants, small_init):
    traj = run_trajectory(small_init, thirring, SchemeConfig(grid, 2.0, diagnostics_stride=7),
                          thirring_constants)
    assert traj.times == pytest.approx([0.0, 0.7, 1.4, 2.0])
    assert len(traj.records) == 4
    assert traj.initial is small_init


def test_zero_final_time_gives_single_snapshot(grid, thirring, thirring_constants, small_init):
    traj = run_trajectory(small_init, thirring, SchemeConfig(grid, 0.0), thirring_constants)
    assert len(traj.snapshots) == 1
    assert traj.final is small_init


def test_iterate_steps_starts_at_initial(grid, thirring, small_init):
    steps = list(iterate_steps(small_init, thirring, SchemeConfig(grid, 0.5)))
    assert [n for n, _ in steps] == [0, 1, 2, 3, 4, 5]
    assert steps[0][1] is small_init


def test_overflow_reports_step_index(thirring):
    grid = Grid(-5.0, 5.0, 100)
    init = SpinorField(np.where(np.arange(100) == 95, 1.0, 0.0), np.zeros(100), grid)
    with pytest.raises(LightConeOverflowError) as info:
        run_trajectory(init, thirring, SchemeConfig(grid, 1.0), constants_for(thirring))
    assert info.value.step_index == 5
    assert info.value.exit_code == 4


def test_rk4_agrees_with_exact_substeps(grid, thirring, thirring_constants):
    init = build_initial(grid, (gaussian("u", -1.0, 0.5), gaussian("v", 1.0, 0.5)), 2.0)
    exact = run_trajectory(init, thirring, SchemeConfig(grid, 2.0), thirring_constants).final
    rk4 = run_trajectory(init, thirring, SchemeConfig(grid, 2.0, nonlinear_integrator="rk4"),
                         thirring_constants).final
    assert math.sqrt(l2_distance_sq(exact, rk4)) < 1e-6


def test_keep_density_history(grid, thirring, thirring_constants, small_init):
    calls = []
    traj = run_trajectory(small_init, thirring, SchemeConfig(grid, 1.0), thirring_constants,
                          keep_density=True, on_step=lambda n, f: calls.append(n))
    assert traj.density_u.shape == (11, grid.n_cells)
    np.testing.assert_array_equal(traj.density_u[0], small_init.density_u)
    np.testing.assert_array_equal(traj.density_v[-1], traj.final.density_v)
    assert calls == list(range(11))
