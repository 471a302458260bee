import dataclasses

import numpy as np
import pytest

from core.errors import ConfigError, TestSupportError
from core.evolve import SchemeConfig, iterate_steps, run_trajectory
from core.executor import Status
from core.field_state import Grid, SpinorField, build_initial
from core.model_kernel import preset
from core.stability_lab import (
    CauchyExperiment,
    PairExperiment,
    PerturbationSpec,
    TestFunctionSpec,
    WeakResidualAccumulator,
    cauchy_experiment,
    pair_run,
    step_weight,
    limit_ratio_check,
    triangle_check,
    weak_residual,
)
from tests.helpers import constants_for, gaussian

BUMP = PerturbationSpec((gaussian("v", 1.0, 1.0, width=0.5),), epsilon=1e-2)


def pair_experiment(grid, params, profiles, scheme, perturbation=BUMP):
    return PairExperiment.from_profiles(grid, profiles, perturbation, params, scheme, constants_for(params))


def test_perturbation_adds_scaled_profiles(grid, small_init):
    perturbed = BUMP.apply(small_init)
    j = grid.index_of(1.0)
    assert perturbed.v[j] - small_init.v[j] == pytest.approx(1e-2 * np.exp(-((grid.x[j] - 1.0) / 0.5) ** 2))
    np.testing.assert_array_equal(perturbed.u, small_init.u)
    assert BUMP.apply(small_init, 0.0).v.tolist() == small_init.v.tolist()


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
def test_small_data_pair_run_has_no_failures(grid, small_profiles, small_scheme, name):
    params = preset(name, 1.0, 1.0)
    outcome = pair_run(pair_experiment(grid, params, small_profiles, small_scheme))
    assert outcome.small_data
    failed = [c.name for c in outcome.checks if c.status is Status.FAIL]
    assert failed == []
    statuses = {c.name: c.status for c in outcome.checks}
    assert statuses["l2_stability"] is Status.PASS
    assert statuses["l2_stability_literal"] is Status.INFO
    assert outcome.records[0].t == 0.0
    assert outcome.records[-1].t == pytest.approx(4.0)
    assert outcome.final_base.t == pytest.approx(4.0)
    # L1 始终在 h4 包络之内
    assert all(r.bound_residual >= -1e-12 * r.L1_initial for r in outcome.records)


def test_identical_initial_data_stays_identical(grid, thirring, small_init, small_scheme):
    exp = PairExperiment(small_init, small_init, thirring, small_scheme, constants_for(thirring))
    outcome = pair_run(exp)
    assert all(r.L1 == 0.0 and r.Q1 == 0.0 for r in outcome.records)


def test_swapping_base_and_perturbed_leaves_records_unchanged(grid, thirring, small_init, small_scheme):
    perturbed = BUMP.apply(small_init)
    constants = constants_for(thirring)
    forward = pair_run(PairExperiment(small_init, perturbed, thirring, small_scheme, constants))
    swapped = pair_run(PairExperiment(perturbed, small_init, thirring, small_scheme, constants))
    for a, b in zip(forward.records, swapped.records):
        assert (b.L1, b.Q1, b.D1) == pytest.approx((a.L1, a.Q1, a.D1), rel=1e-12)


def test_linear_model_preserves_difference_norm(grid, small_profiles, small_scheme):
    params = preset("gross_neveu", 0.0, 1.0)
    outcome = pair_run(pair_experiment(grid, params, small_profiles, small_scheme))
    L1 = [r.L1 for r in outcome.records]
    assert max(abs(x - L1[0]) for x in L1) <= 1e-12 * L1[0]


def test_pair_requires_common_grid(thirring, small_scheme, small_init):
    other = SpinorField.zeros(Grid(-16.0, 16.0, 160))
    with pytest.raises(ConfigError):
        PairExperiment(small_init, other, thirring, small_scheme, constants_for(thirring))


def cauchy(grid, params, profiles, scheme, members=4, streaming=True):
    return CauchyExperiment.geometric(grid, profiles, BUMP, members, params, scheme,
                                      constants_for(params), streaming=streaming, workers=2)


def test_cauchy_sequence_converges(grid, thirring, small_profiles, small_scheme):
    outcome = cauchy_experiment(cauchy(grid, thirring, small_profiles, small_scheme))
    statuses = {c.name: c.status for c in outcome.checks}
    assert statuses == {
        "cauchy_bound": Status.PASS,
        "cauchy_limit_monotone": Status.PASS,
        "cauchy_limit_ratio": Status.PASS,
        "triangle_inequality": Status.PASS,
    }
    d = outcome.limit_distances
    assert len(d) == 3
    ratios = d[:-1] / d[1:]
    assert np.all((ratios > 1.8) & (ratios < 2.2))
    assert len(outcome.rows) == 6
    assert all(row.verdict is Status.PASS for row in outcome.rows)


def test_streaming_and_posthoc_agree(grid, thirring, small_profiles, small_scheme):
    exp = cauchy(grid, thirring, small_profiles, small_scheme, members=3)
    streamed = cauchy_experiment(exp)
    posthoc = cauchy_experiment(dataclasses.replace(exp, streaming=False))
    np.testing.assert_array_equal(streamed.d_sup, posthoc.d_sup)
    np.testing.assert_array_equal(streamed.d_initial, posthoc.d_initial)


def test_identical_members_have_zero_distance(grid, thirring, small_init, small_scheme):
    exp = CauchyExperiment((small_init, small_init), thirring, small_scheme, constants_for(thirring))
    outcome = cauchy_experiment(exp)
    assert not outcome.d_sup.any()
    assert outcome.rows[0].verdict is Status.PASS


def test_cauchy_rejects_increasing_distances(grid, thirring, small_init, small_scheme):
    members = (BUMP.apply(small_init, 1e-3), BUMP.apply(small_init, 1e-2), small_init)
    with pytest.raises(ConfigError):
        CauchyExperiment(members, thirring, small_scheme, constants_for(thirring))
    with pytest.raises(ConfigError):
        CauchyExperiment((small_init,), thirring, small_scheme, constants_for(thirring))


GEOMETRIC = (1e-2, 5e-3, 2.5e-3, 1.25e-3, 0.0)


def test_limit_ratio_within_band():
    check = limit_ratio_check(np.array([8.0, 4.1, 2.0, 1.05]), GEOMETRIC)
    assert check.status is Status.PASS
    assert check.worst == pytest.approx(2.0 / 1.05 - 1.8)


@pytest.mark.parametrize("distances", [[8.0, 7.0, 6.0, 5.0], [1000.0, 100.0, 10.0, 1.0], [8.0, 4.0, 2.0, 0.5]])
def test_limit_ratio_outside_band_fails(distances):
    # 单调递减但比值不对，同样失败
    assert limit_ratio_check(np.array(distances), GEOMETRIC).status is Status.FAIL


def test_limit_ratio_needs_geometric_perturbation():
    d = np.array([8.0, 4.0, 2.0, 1.0])
    assert limit_ratio_check(d, (1e-2, 4e-3, 2e-3, 1e-3, 0.0)).status is Status.NOT_APPLICABLE
    assert limit_ratio_check(d[:1], (1e-2, 0.0)).status is Status.NOT_APPLICABLE
    assert limit_ratio_check(np.array([8.0, 0.0, 0.0, 0.0]), GEOMETRIC).status is Status.NOT_APPLICABLE


@pytest.mark.slow
def test_six_member_sequence_halves_distances(grid, thirring, small_profiles):
    scheme = SchemeConfig(grid, 5.0, diagnostics_stride=5)
    outcome = cauchy_experiment(cauchy(grid, thirring, small_profiles, scheme, members=6))
    d = outcome.limit_distances
    assert len(d) == 5
    ratios = d[:-1] / d[1:]
    assert np.all((ratios >= 1.8) & (ratios <= 2.2))
    assert all(c.status is Status.PASS for c in outcome.checks)


def test_triangle_check():
    metric = np.array([[0.0, 1.0, 1.5], [1.0, 0.0, 1.0], [1.5, 1.0, 0.0]])
    assert triangle_check(metric).status is Status.PASS
    broken = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 1.0], [3.0, 1.0, 0.0]])
    check = triangle_check(broken)
    assert check.status is Status.FAIL
    assert check.worst == pytest.approx(-1.0)


WINDOW = TestFunctionSpec(x_center=0.0, x_radius=3.0, t_center=2.0, t_radius=1.5)


def test_weak_residual_of_zero_solution(grid, thirring):
    scheme = SchemeConfig(grid, 4.0, diagnostics_stride=1)
    traj = run_trajectory(SpinorField.zeros(grid), thirring, scheme, constants_for(thirring))
    assert weak_residual(traj, WINDOW) == 0.0


def test_weak_residual_detects_corruption(grid):
    params = preset("thirring", 1.0, 0.0)
    scheme = SchemeConfig(grid, 4.0, diagnostics_stride=1)
    init = build_initial(grid, (gaussian("u", -2.0, 0.05), gaussian("v", 2.0, 0.05)), 4.0)
    traj = run_trajectory(init, params, scheme, constants_for(params))
    smooth = weak_residual(traj, WINDOW)

    # t = 1.0 处检验函数的时间导数不为零
    k = 10
    snapshots = list(traj.snapshots)
    snapshots[k] = snapshots[k].replace(u=snapshots[k].u * 1.1)
    corrupted = weak_residual(dataclasses.replace(traj, snapshots=snapshots), WINDOW)
    assert corrupted >= 10.0 * smooth
    assert corrupted > 0


def test_streamed_residual_matches_snapshot_quadrature(grid, small_init):
    params = preset("thirring", 1.0, 0.0)
    scheme = SchemeConfig(grid, 4.0, diagnostics_stride=1)
    traj = run_trajectory(small_init, params, scheme, constants_for(params))
    acc = WeakResidualAccumulator(WINDOW, params, grid, 0.0, 4.0)
    for n, field in iterate_steps(small_init, params, scheme):
        acc.observe(field, step_weight(n, scheme.n_steps, scheme.dt))
    assert acc.value == pytest.approx(weak_residual(traj, WINDOW), rel=1e-9, abs=1e-15)


def test_test_function_must_fit(grid, thirring):
    scheme = SchemeConfig(grid, 4.0, diagnostics_stride=1)
    traj = run_trajectory(SpinorField.zeros(grid), thirring, scheme, constants_for(thirring))
    with pytest.raises(TestSupportError):
        weak_residual(traj, TestFunctionSpec(0.0, 20.0, 2.0, 1.5))
    with pytest.raises(TestSupportError):
        weak_residual(traj, TestFunctionSpec(0.0, 3.0, 3.5, 1.0))
    with pytest.raises(ConfigError):
        TestFunctionSpec(0.0, 0.0, 2.0, 1.0)
