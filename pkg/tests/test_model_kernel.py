import numpy as np
import pytest

from config import DELTA_CAP
from core.errors import ConfigError, ModelRejectedError
from core.model_kernel import (
    a2_residual,
    a2_term_residuals,
    closed_form_c,
    custom,
    derive_constants,
    difference_bound_excess,
    eval_N,
    modulus_bound_excess,
    modulus_source,
    preset,
    r0_density,
    sample_a2,
    sample_cubic_ratio,
    sample_difference_ratio,
)
from tests.helpers import TEST_SAMPLES, TEST_SEED, constants_for


def test_thirring_nonlinearity():
    params = preset("thirring", 1.0, 1.0)
    assert eval_N(params, 2.0, 1.0) == pytest.approx((2.0, 4.0))
    rng = np.random.default_rng(1)
    u = rng.normal(size=50) + 1j * rng.normal(size=50)
    v = rng.normal(size=50) + 1j * rng.normal(size=50)
    n1, n2 = eval_N(params, u, v)
    np.testing.assert_allclose(n1, u * np.abs(v) ** 2)
    np.testing.assert_allclose(n2, v * np.abs(u) ** 2)


def test_gross_neveu_nonlinearity():
    params = preset("gross_neveu", 1.0, 0.0)
    n1, _ = eval_N(params, 1.0, 1.0)
    assert n1 == pytest.approx(4.0)
    n1, n2 = eval_N(params, 1.0, 1j)
    assert abs(n1) < 1e-15 and abs(n2) < 1e-15

    rng = np.random.default_rng(2)
    u = rng.normal(size=50) + 1j * rng.normal(size=50)
    v = rng.normal(size=50) + 1j * rng.normal(size=50)
    n1, n2 = eval_N(params, u, v)
    np.testing.assert_allclose(n1, 2 * v * (np.conj(u) * v + u * np.conj(v)))
    np.testing.assert_allclose(n2, 2 * u * (np.conj(u) * v + u * np.conj(v)))


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
def test_zero_coupling_and_origin(name):
    params = preset(name, 0.0, 1.0)
    n1, n2 = eval_N(params, 1 + 2j, -0.5j)
    assert n1 == 0 and n2 == 0
    n1, n2 = eval_N(preset(name, 1.0, 1.0), 0.0, 0.0)
    assert n1 == 0 and n2 == 0


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
@pytest.mark.parametrize("alpha", [1.0, -0.7, 3.0])
def test_presets_satisfy_null_structure(name, alpha):
    params = preset(name, alpha, 1.0)
    report = sample_a2(params, 5000, seed=3)
    assert report.passes
    assert report.n_points == 5000
    assert report.seed == 3
    assert a2_residual(params, 1 + 1j, 2.0) == pytest.approx(0.0, abs=1e-13)


def test_custom_violation_is_flagged():
    params = custom((1j, 0, 1, 0, 0), (0, 0, 0, 0, 0), 0.0)
    assert a2_residual(params, 1.0, 1.0) == pytest.approx(-1.0)
    assert not sample_a2(params, 1000, seed=0).passes
    with pytest.raises(ModelRejectedError):
        derive_constants(params, 2000, 0)


def test_gross_neveu_terms_cancel_only_in_sum():
    params = preset("gross_neveu", 1.0, 0.0)
    ru, rv = a2_term_residuals(params, 1.0 + 0.5j, 0.3 - 1.0j)
    assert abs(ru) > 1e-3
    assert ru + rv == pytest.approx(0.0, abs=1e-14)


def test_invalid_model_parameters():
    with pytest.raises(ConfigError) as info:
        preset("thirring", 1.0, -1.0)
    assert info.value.issues[0].key == "model.mass"
    with pytest.raises(ConfigError):
        preset("dirac", 1.0, 0.0)


@pytest.mark.parametrize("name, expected", [("thirring", 2.0), ("gross_neveu", 8.0)])
def test_derived_constants(name, expected):
    params = preset(name, 1.0, 1.0)
    k = derive_constants(params, TEST_SAMPLES, TEST_SEED)
    assert closed_form_c(params) == expected
    assert k.c == expected
    assert k.c_sampled == pytest.approx(expected, rel=0.01)
    assert k.c_sampled <= expected * (1 + 1e-9)
    assert k.c_star >= k.c
    assert k.delta == pytest.approx(1.0 / (4.0 * k.c_star))
    assert k.K == pytest.approx(2.0 * k.c_star + 1.0)
    assert -2.0 + 2.0 * k.delta * k.c < -1.0
    assert not k.vacuous


def test_constants_scale_with_coupling():
    k1 = constants_for(preset("thirring", 1.0, 0.0))
    k2 = constants_for(preset("thirring", 2.0, 0.0))
    assert k2.c == pytest.approx(2.0 * k1.c)
    assert k2.c_star == pytest.approx(2.0 * k1.c_star, rel=1e-9)


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
def test_sampled_ratios_do_not_depend_on_box(name):
    # 比值关于 (u, v) 零次齐次，缩放采样盒不改变最大值
    params = preset(name, 1.0, 0.5)
    for sampler in (sample_cubic_ratio, sample_difference_ratio):
        reference = sampler(params, 20_000, 5, 1.0)
        for box in (0.1, 10.0):
            assert sampler(params, 20_000, 5, box) == pytest.approx(reference, rel=1e-6)
    k_small = derive_constants(params, 20_000, 5, 0.5)
    k_large = derive_constants(params, 20_000, 5, 20.0)
    assert k_small.c_star == pytest.approx(k_large.c_star, rel=1e-6)


def test_linear_model_has_capped_delta():
    k = derive_constants(preset("gross_neveu", 0.0, 1.0), 5000, 0)
    assert k.c == 0.0
    assert k.delta == DELTA_CAP
    assert k.vacuous


def test_constants_are_reproducible():
    params = custom((1, 0, 1, 0, 0), (1, 0, 1, 0, 0), 0.5)
    a = derive_constants(params, 20_000, 11)
    derive_constants.cache_clear()
    b = derive_constants(params, 20_000, 11)
    assert a == b
    # 与 Thirring 同构的自定义模型给出同一个采样常数
    assert a.c == pytest.approx(2.0)


@pytest.mark.parametrize("name", ["thirring", "gross_neveu"])
def test_pointwise_source_estimates(name):
    params = preset(name, 1.0, 0.5)
    k = constants_for(params)
    rng = np.random.default_rng(5)

    def draw():
        return rng.uniform(-2, 2, 4000) + 1j * rng.uniform(-2, 2, 4000)

    u, v, up, vp = draw(), draw(), draw(), draw()
    assert modulus_bound_excess(params, k, u, v) <= 1e-12
    excess = difference_bound_excess(params, k, u, v, up, vp)
    assert set(excess) == {"R", "u_equation", "v_equation"}
    assert max(excess.values()) <= 1e-12


def test_modulus_sources_balance_for_mass_term():
    # 只有质量项时 s_u + s_v = 0
    params = preset("thirring", 0.0, 2.0)
    s_u, s_v = modulus_source(params, np.array([1 + 1j]), np.array([0.5 - 2j]))
    assert s_u[0] + s_v[0] == pytest.approx(0.0, abs=1e-14)
    assert r0_density(0.0, 2.0, 1.0, 1.0) == pytest.approx(4.0)
