"""Profile families: origin conditions, decay hypotheses, operator coefficients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shearstab.profiles import (
    ShearProfile,
    SpectralParams,
    eval_operator_coeffs,
    make_profile,
    validate_assumptions,
)

BUILTIN_FAMILIES = ["cubic_exp", "tanh_cubed"]


def _builtin(name):
    return make_profile(name, [1.0])


# ---------------------------------------------------------------------------
# Construction and origin conditions
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", BUILTIN_FAMILIES)
def test_origin_conditions_exact(name):
    p = _builtin(name)
    assert p.u(0.0) == 0.0
    assert p.u1(0.0) == 0.0
    assert p.u2(0.0) == 0.0


def test_cubic_exp_far_field_limit():
    p = _builtin("cubic_exp")
    assert abs(p.u(30.0) - 1.0) < 1e-12


def test_cubic_exp_inflection_point():
    # Oracle: bisection on the closed-form second derivative, which changes
    # sign where 2*e^{-y} = 1 - e^{-y}, i.e. at y = ln 3.
    p = _builtin("cubic_exp")
    lo, hi = 0.5, 2.0
    assert p.u2(lo) * p.u2(hi) < 0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if p.u2(lo) * p.u2(mid) <= 0:
            hi = mid
        else:
            lo = mid
    root = 0.5 * (lo + hi)
    assert root == pytest.approx(1.098612, abs=1e-5)
    assert root == pytest.approx(np.log(3.0), abs=1e-12)


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        make_profile("sine_jet", [1.0])


def test_custom_table_roundtrip():
    y = np.linspace(0.0, 30.0, 401)
    u = (1.0 - np.exp(-y)) ** 3
    p = make_profile("custom_table", table={"y": y, "u": u}, eta0=1.0)
    q = _builtin("cubic_exp")
    yy = np.linspace(0.0, 25.0, 200)
    assert np.max(np.abs(p.u(yy) - q.u(yy))) < 2e-8
    assert np.max(np.abs(p.u2(yy) - q.u2(yy))) < 5e-5
    assert p.u(0.0) == 0.0 and p.u1(0.0) == 0.0 and p.u2(0.0) == 0.0


def test_custom_table_rejects_nonvanishing_origin():
    y = np.linspace(0.0, 30.0, 101)
    with pytest.raises(ValueError):
        make_profile("custom_table", table={"y": y, "u": np.tanh(y)})


# ---------------------------------------------------------------------------
# Derivative consistency (closed forms vs finite differences)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", BUILTIN_FAMILIES)
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_derivatives_match_finite_differences(name, k):
    p = _builtin(name)
    y = np.linspace(0.3, 12.0, 57)
    h = 1e-5
    lower = p.derivative(k - 1)
    fd = (lower(y + h) - lower(y - h)) / (2.0 * h)
    scale = np.max(np.abs(p.derivative(k)(y))) + 1e-30
    assert np.max(np.abs(fd - p.derivative(k)(y))) < 5e-9 * scale + 1e-10


def test_cubic_exp_higher_derivatives_ladder():
    # u_higher(k) must differentiate u_higher(k-1) for orders above four.
    p = _builtin("cubic_exp")
    assert p.u_higher is not None
    y = np.linspace(0.2, 10.0, 41)
    h = 1e-5
    for k in range(5, 9):
        fd = (p.u_higher(k - 1, y + h) - p.u_higher(k - 1, y - h)) / (2.0 * h)
        scale = np.max(np.abs(p.u_higher(k, y)))
        assert np.max(np.abs(fd - p.u_higher(k, y))) < 1e-8 * scale


@settings(max_examples=40, deadline=None)
@given(y=st.floats(min_value=0.0, max_value=30.0, allow_nan=False))
def test_cubic_exp_derivative_envelope(y):
    # |u^(k)(y)| <= C_k e^{-y} with C_k = 3 + 3*2^k + 3^k from the closed form.
    p = _builtin("cubic_exp")
    for k in range(1, 5):
        c_k = 3.0 + 3.0 * 2.0**k + 3.0**k
        assert abs(p.derivative(k)(y)) <= c_k * np.exp(-y) * (1.0 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(y=st.floats(min_value=0.0, max_value=30.0, allow_nan=False))
def test_profiles_bounded_and_monotone_tail(y):
    for name in BUILTIN_FAMILIES:
        p = _builtin(name)
        assert 0.0 <= p.u(y) <= p.u_inf + 1e-12
        if y >= 1.0:
            assert p.u1(y) >= -1e-12


# ---------------------------------------------------------------------------
# validate_assumptions
# ---------------------------------------------------------------------------


def test_validation_passes_for_complex_c():
    p = _builtin("cubic_exp")
    rep = validate_assumptions(p, SpectralParams(alpha=1.0, c=0.5 + 0.2j))
    assert rep.passed
    assert rep.min_dist_to_c >= 0.2


def test_validation_fails_for_real_c_in_range():
    p = _builtin("cubic_exp")
    rep = validate_assumptions(p, SpectralParams(alpha=1.0, c=0.5 + 0.0j))
    assert not rep.passed
    assert "critical_layer" in rep.failures


@pytest.mark.parametrize("name", BUILTIN_FAMILIES)
def test_fitted_decay_rate_matches_declared(name):
    p = _builtin(name)
    rep = validate_assumptions(p, SpectralParams(alpha=1.0, c=0.5 + 0.2j))
    assert rep.eta0_fitted == pytest.approx(p.eta0, rel=0.05)
    assert "decay_rate" not in rep.failures


def test_validation_flags_alpha_nu_scale():
    p = _builtin("cubic_exp")
    bad = SpectralParams(alpha=200.0, c=0.5 + 0.2j, nu=1e-3)
    rep = validate_assumptions(p, bad)
    assert "alpha_nu_scale" in rep.failures


@settings(max_examples=30, deadline=None)
@given(
    c_re=st.floats(min_value=0.05, max_value=0.95),
)
def test_real_c_in_velocity_range_always_fails(c_re):
    p = _builtin("cubic_exp")
    rep = validate_assumptions(p, SpectralParams(alpha=1.0, c=complex(c_re, 0.0)))
    assert "critical_layer" in rep.failures


# ---------------------------------------------------------------------------
# eval_operator_coeffs
# ---------------------------------------------------------------------------


def test_operator_coeffs_at_wall():
    p = _builtin("cubic_exp")
    s = SpectralParams(alpha=1.0, c=0.5 + 0.2j)
    u_minus_c, u2, visc, u_minus_cbar = eval_operator_coeffs(p, s, 0.0)
    assert u_minus_c == pytest.approx(-0.5 - 0.2j)
    assert u_minus_cbar == pytest.approx(-0.5 + 0.2j)
    assert u2 == 0.0
    assert visc == 0.0


def test_operator_coeffs_viscous_factor():
    p = _builtin("cubic_exp")
    s = SpectralParams(alpha=2.0, c=0.5 + 0.2j, nu=1e-3)
    _, _, visc, _ = eval_operator_coeffs(p, s, 1.0)
    assert visc == pytest.approx(-5e-4j)


def test_operator_coeffs_rejects_outside_domain():
    p = _builtin("cubic_exp")
    s = SpectralParams(alpha=1.0, c=0.5 + 0.2j)
    with pytest.raises(ValueError):
        eval_operator_coeffs(p, s, -0.5)
    with pytest.raises(ValueError):
        eval_operator_coeffs(p, s, p.y_max + 1.0)


# ---------------------------------------------------------------------------
# SpectralParams
# ---------------------------------------------------------------------------


def test_params_reject_zero_alpha():
    with pytest.raises(ValueError):
        SpectralParams(alpha=0.0, c=0.5 + 0.2j)


def test_params_conjugated_flips_c_only():
    s = SpectralParams(alpha=1.5, c=0.3 + 0.1j, nu=1e-4, gamma=2.0)
    sc = s.conjugated()
    assert sc.c == np.conj(s.c)
    assert (sc.alpha, sc.nu, sc.gamma) == (s.alpha, s.nu, s.gamma)


def test_profile_is_frozen():
    p = _builtin("cubic_exp")
    with pytest.raises(Exception):
        p.u_inf = 2.0
