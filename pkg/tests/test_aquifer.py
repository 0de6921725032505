import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jfnkgw.aquifer import (AquitardParams, LayerParams, SmoothingParams, available_storage,
                            available_storage_dh, chks_max, chks_max_dx, limited_sink, limited_sink_dm,
                            sigmoid_step, sigmoid_step_dx, storage_content, storage_content_dh,
                            storativity, storativity_dh, transmissivity, transmissivity_dh,
                            vertical_leakage, vertical_leakage_dh)

SM = SmoothingParams()
TC1 = LayerParams(K=100.0, S_y=0.25, S_o=0.0, z=0.0, Z=500.0)
TOP = LayerParams(K=100.0, S_y=0.25, S_o=1e-6, z=200.0, Z=500.0)
BOT = LayerParams(K=100.0, S_y=0.25, S_o=1e-6, z=0.0, Z=170.0)
AQ = AquitardParams(K_v=1e-3, D=30.0)


def central5(f, x, h=1e-3):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


# ---------------------------------------------------------------- parameters

def test_layer_params_validation():
    assert TOP.B == 300.0
    for kw in [dict(K=0.0), dict(S_y=1.0), dict(S_o=-1.0), dict(Z=0.0)]:
        base = dict(K=1.0, S_y=0.2, S_o=0.0, z=0.0, Z=10.0)
        base.update(kw)
        with pytest.raises(ValueError):
            LayerParams(**base)
    with pytest.raises(ValueError):
        AquitardParams(0.0, 1.0)
    with pytest.raises(ValueError):
        SmoothingParams(eps_s=0.0)
    with pytest.raises(ValueError):
        SmoothingParams(storage_form="sum")


# ---------------------------------------------------------------- smoothers

def test_chks_at_zero():
    assert chks_max(0.0, 1e-4) == pytest.approx(0.005, rel=1e-15)


def test_chks_far_from_kink():
    assert chks_max(10.0, 1e-4) - 10.0 == pytest.approx(1e-4 / 40, rel=1e-3)
    assert abs(chks_max(10.0, 1e-4) - 10.0) <= 1e-4 / 80 * 2
    v = chks_max(-10.0, 1e-4)
    assert v > 0 and v == pytest.approx(2.5e-6, rel=1e-3)


@settings(max_examples=500, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(1e-8, 1.0))
def test_chks_bound_property(x, eps):
    gap = chks_max(x, eps) - max(x, 0.0)
    assert gap >= -1e-12 * max(1.0, abs(x))
    assert gap <= np.sqrt(eps) / 2 * (1 + 1e-12)


def test_sigmoid_examples_and_symmetry():
    assert sigmoid_step(0.0, 10.0) == 0.5
    assert sigmoid_step(10.0, 10.0) == pytest.approx(1.0, abs=1e-40)
    assert sigmoid_step(1e6, 10.0) == 1.0 and sigmoid_step(-1e6, 10.0) == 0.0
    x = np.linspace(-5, 5, 101)
    assert np.allclose(sigmoid_step(x, 10.0) + sigmoid_step(-x, 10.0), 1.0, atol=1e-15)
    assert np.all(np.diff(sigmoid_step(x, 10.0)) >= 0)


def test_smoother_derivatives():
    x = np.linspace(-0.3, 0.3, 61)
    assert np.allclose(chks_max_dx(x, 1e-4), central5(lambda t: chks_max(t, 1e-4), x, 1e-5),
                       rtol=1e-6, atol=1e-8)
    assert np.allclose(sigmoid_step_dx(x, 10.0), central5(lambda t: sigmoid_step(t, 10.0), x),
                       rtol=1e-7, atol=1e-10)


# --------------------------------------------------------- layer switches

def test_transmissivity_examples():
    assert transmissivity(600.0, TC1, SM) == pytest.approx(100 * 500, abs=100 * 1e-4 / (8 * 100) * 2)
    assert transmissivity(250.0, TC1, SM) == pytest.approx(100 * 250, rel=1e-9)
    assert transmissivity(400.0, TC1, SM) == pytest.approx(40000.0, rel=1e-9)


def test_transmissivity_floor():
    T = transmissivity(np.array([-50.0, 0.0, 0.001]), TC1, SM)
    assert np.all(T >= TC1.K * np.sqrt(SM.eps_s))
    assert transmissivity_dh(-50.0, TC1, SM) == 0.0


def test_storativity_examples():
    assert storativity(100.0, TOP, SM) == pytest.approx(0.25, rel=1e-12)
    assert storativity(900.0, TOP, SM) == pytest.approx(3e-4, rel=1e-12)
    assert storativity(500.0, TOP, SM) == pytest.approx((0.25 + 3e-4) / 2)


def test_switch_derivatives_match_central_differences():
    rng = np.random.default_rng(7)
    for p in (TC1, TOP, BOT):
        h = rng.uniform(p.z - 50, p.Z + 50, 1000)
        # stay off the transmissivity floor kink (a true corner, derivative set to 0 there)
        h = h[np.abs(h - (p.z + 0.01)) > 0.01]
        dT = transmissivity_dh(h, p, SM)
        fT = central5(lambda t: transmissivity(t, p, SM), h, 1e-4)
        assert np.max(np.abs(dT - fT)) <= 1e-7 * p.K
        dS = storativity_dh(h, p, SM)
        fS = central5(lambda t: storativity(t, p, SM), h, 1e-4)
        assert np.max(np.abs(dS - fS)) <= 1e-7 * max(p.S_y * SM.beta, 1.0)


def test_vertical_leakage_examples():
    assert abs(vertical_leakage(250.0, 250.0, 200.0, 170.0, AQ, SM)) < 1e-6
    assert vertical_leakage(300.0, 250.0, 200.0, 170.0, AQ, SM) == pytest.approx(1e-3 / 30 * 50, rel=1e-6)
    # same offset from each reference elevation cancels exactly
    assert vertical_leakage(203.0, 173.0, 200.0, 170.0, AQ, SM) == pytest.approx(1e-3 / 30 * 30, rel=1e-12)
    assert vertical_leakage(5.0, 5.0, 0.0, 0.0, AQ, SM) == 0.0


def test_vertical_leakage_derivatives():
    hu = np.linspace(195, 205, 41)
    hb = np.linspace(165, 175, 41)
    du, db = vertical_leakage_dh(hu, hb, 200.0, 170.0, AQ, SM)
    fu = central5(lambda t: vertical_leakage(t, hb, 200.0, 170.0, AQ, SM), hu, 1e-4)
    fb = central5(lambda t: vertical_leakage(hu, t, 200.0, 170.0, AQ, SM), hb, 1e-4)
    assert np.allclose(du, fu, rtol=1e-7, atol=1e-12) and np.allclose(db, fb, rtol=1e-7, atol=1e-12)


def test_available_storage_examples():
    assert available_storage(200.0, TOP) == 0.0
    assert available_storage(500.0, TOP) == pytest.approx(75.0)
    assert available_storage(510.0, TOP) == pytest.approx(75.0 + 3e-3)
    assert available_storage(150.0, TOP) == 0.0
    assert available_storage_dh(150.0, TOP) == 0.0
    assert available_storage_dh(300.0, TOP) == 0.25


def test_limited_sink_examples():
    assert limited_sink(5.0, 0.0, 1.0, SM) == 5.0
    assert limited_sink(-10.0, 100.0, 1.0, SM) == pytest.approx(-10.0, abs=1e-5)
    v = limited_sink(-10.0, 3.0, 1.0, SM)
    assert abs(v + 3.0) <= np.sqrt(SM.eps_s) / 2
    assert limited_sink_dm(5.0, 3.0, 1.0, SM) == 0.0


def test_limited_sink_derivative():
    M = np.concatenate([np.linspace(0.0, 19.0, 39), np.linspace(21.0, 60.0, 40)])
    d = limited_sink_dm(-10.0, M, 2.0, SM)
    f = central5(lambda m: limited_sink(-10.0, m, 2.0, SM), M, 1e-4)
    assert np.allclose(d, f, rtol=1e-6, atol=1e-9)
    # binding cap: dQ/dM -> 1/dt, slack cap: -> 0
    assert d[0] == pytest.approx(-0.5, rel=1e-6) and abs(d[-1]) < 1e-6


# ----------------------------------------------------------- storage function

@pytest.mark.parametrize("form", ["integrated", "product"])
def test_storage_content_derivative(form):
    sm = SmoothingParams(storage_form=form)
    h = np.linspace(BOT.Z - 5, BOT.Z + 5, 401)
    assert np.allclose(storage_content_dh(h, BOT, sm), central5(lambda t: storage_content(t, BOT, sm), h, 1e-4),
                       rtol=1e-7, atol=1e-10)


def test_integrated_storage_is_monotone_with_smoothed_slope():
    h = np.linspace(BOT.Z - 20, BOT.Z + 60, 20001)
    G = storage_content(h, BOT, SM)
    assert np.all(np.diff(G) > 0)
    assert np.array_equal(storage_content_dh(h, BOT, SM), storativity(h, BOT, SM))


def test_product_storage_slope_turns_negative_above_top():
    sm = SmoothingParams(storage_form="product")
    h = np.linspace(BOT.Z, BOT.Z + 5, 5001)
    assert storage_content_dh(h, BOT, sm).min() < 0


def test_storage_forms_share_asymptotes():
    prod = SmoothingParams(storage_form="product")
    for h in (BOT.Z - 30, BOT.Z - 5):
        assert storage_content(h, BOT, SM) == pytest.approx(storage_content(h, BOT, prod), abs=1e-12)
    # above the top both grow with slope S_o B; offsets differ by a constant
    a = storage_content(BOT.Z + 40, BOT, SM) - storage_content(BOT.Z + 30, BOT, SM)
    b = storage_content(BOT.Z + 40, BOT, prod) - storage_content(BOT.Z + 30, BOT, prod)
    assert a == pytest.approx(10 * BOT.S_o * BOT.B, rel=1e-6)
    assert b == pytest.approx(10 * BOT.S_o * BOT.B, rel=1e-6)
