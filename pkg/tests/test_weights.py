import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carleman_lab.weights import (
    C_MARGIN,
    default_R0,
    derive_params,
    psi,
    radial_grid,
    rho,
    select_c,
    verify_w_lemma,
    verify_wpsi_and_rho,
    w_eval,
    w_kink,
)


def brute_force_c(V_inf, R0):
    # scan the 1e-3 lattice directly
    c = np.round(np.arange(1001, 200_000) * 1e-3, 3)
    rc = np.sqrt(c)
    ok = (c > V_inf * R0 / 4 + C_MARGIN) & (rc * np.tanh(rc / 2) > max(V_inf / 4, 1) + C_MARGIN)
    return float(c[np.argmax(ok)])


@pytest.mark.parametrize("V_inf,R0", [(0.0, 4.0), (12.0, 4.0), (4.0, 3.01), (1.0, 10.0),
                                      (40.0, 3.5)])
def test_select_c_matches_lattice_scan(V_inf, R0):
    assert select_c(V_inf, R0) == brute_force_c(V_inf, R0)


def test_select_c_rejects_small_R0():
    with pytest.raises(ValueError, match="R0 must exceed 3"):
        select_c(0.0, 2.0)


def test_derived_constants_by_hand():
    p = derive_params(1.0, 1.0, 0.0, 4.0, 0.75, 1, 1.0, c=3.0)
    assert p.B == pytest.approx(52.0, rel=1e-15)
    assert p.R1 == pytest.approx(math.sqrt(208.0), rel=1e-15)
    assert p.B_tilde == pytest.approx((math.sqrt(209.0) - 1.0) / 2.0, rel=1e-15)
    assert p.delta == pytest.approx(0.5)


def test_delta_is_capped_below_one():
    p = derive_params(1.0, 1.0, 0.0, 4.0, 2.0, 1, 0.5)
    assert p.delta < 1.0


@pytest.mark.parametrize("kw,msg", [
    (dict(R0=3.0), "R0 must exceed 3"),
    (dict(h=0.0), "h must lie"),
    (dict(h=1.5), "h must lie"),
    (dict(s=0.5), "s must exceed"),
    (dict(n=2), "only n = 1 and n = 3"),
    (dict(E_min=0.0), "E_min must be positive"),
    (dict(c=1.0), "violates"),
])
def test_derive_params_preconditions(kw, msg):
    args = dict(E_min=1.0, E_max=2.0, V_inf=0.0, R0=4.0, s=0.75, n=1, h=0.5)
    args.update(kw)
    with pytest.raises(ValueError, match=msg):
        derive_params(**args)


def test_default_R0():
    assert default_R0(1.0) == pytest.approx(3.01)
    assert default_R0(2.5) == pytest.approx(5.01)


def test_psi_continuous_at_R0_and_R1(p_half):
    p = p_half
    eps = 1e-9
    assert psi(p.R0 + eps, p) == pytest.approx(p.c, abs=1e-6)
    assert psi(p.R1 - eps, p) == pytest.approx(0.0, abs=1e-6)
    assert psi(p.R1 + 1.0, p) == 0.0


def test_psi_rejects_nonpositive_r(p_half):
    with pytest.raises(ValueError):
        psi(0.0, p_half)


def test_w_continuous_at_R1_with_kink(p_half):
    p = p_half
    below, _ = w_eval(p.R1 * (1 - 1e-14), p)
    above, _ = w_eval(p.R1 * (1 + 1e-14), p)
    assert above == pytest.approx(below, rel=1e-12)
    w, dw = w_eval(p.R1, p)
    assert math.isnan(dw)
    assert w_kink(p) == (2 * p.R1, p.delta)


def test_w_derivative_matches_finite_difference(p_half):
    p = p_half
    r = np.array([0.5, 2.0, 10.0, p.R1 + 0.5, p.R1 + 40.0])
    eta = 1e-4
    fd = (w_eval(r + eta, p)[0] - w_eval(r - eta, p)[0]) / (2 * eta)
    np.testing.assert_allclose(w_eval(r, p)[1], fd, rtol=1e-6, atol=1e-8)


def test_w_saturates(p_half):
    w, _ = w_eval(1e8, p_half)
    assert w < p_half.R1**2 + 1


@pytest.mark.parametrize("n", [1, 3])
def test_rho_vanishes_for_supported_dimensions(n):
    p = derive_params(1.0, 2.0, 0.0, 4.0, 0.75, n, 0.5)
    assert np.all(rho(np.linspace(0.1, 10, 50), p) == 0.0)


def test_radial_grid_avoids_points():
    r = radial_grid(0.0, 10.0, 11, avoid=(5.0,))
    assert 5.0 not in r and r.size == 10
    with pytest.raises(ValueError):
        radial_grid(1.0, 2.0, 10, spacing="cubic")


@pytest.mark.parametrize("h", [0.5, 2.0**-4, 2.0**-8])
def test_weight_lemmas_pass(p_half, h):
    p = derive_params(1.0, 2.0, 0.0, 4.0, 0.75, 1, h)
    r = radial_grid(1e-3, 3 * p.R1, 10_000, avoid=(p.R0, p.R1))
    rep = verify_w_lemma(p, r).merged(verify_wpsi_and_rho(p, r))
    assert rep.passed, rep.failures()


def test_fault_injection_small_w_prime_is_caught(p_half):
    p = p_half
    r = radial_grid(1e-3, 3 * p.R1, 2_000, avoid=(p.R0, p.R1))

    def broken(rr, pp):
        w, dw = w_eval(rr, pp)
        return w, 1e-3 * dw

    rep = verify_w_lemma(p, r, w_func=broken)
    assert not rep["lower_bound_w_prime"].passed
    assert not verify_wpsi_and_rho(p, r, w_func=broken).passed


def test_grid_on_kink_rejected(p_half):
    with pytest.raises(ValueError):
        verify_w_lemma(p_half, np.array([1.0, p_half.R1]))


@settings(max_examples=40, deadline=None)
@given(
    E_min=st.floats(0.1, 5.0),
    V_inf=st.floats(0.0, 30.0),
    R0=st.floats(3.001, 12.0),
    s=st.floats(0.51, 3.0),
    k=st.integers(1, 10),
)
def test_weight_lemmas_hold_for_random_parameters(E_min, V_inf, R0, s, k):
    p = derive_params(E_min, 2 * E_min, V_inf, R0, s, 1, 2.0**-k)
    r = radial_grid(1e-4, 4 * p.R1, 3_000, spacing="log", avoid=(p.R0, p.R1))
    rep = verify_w_lemma(p, r).merged(verify_wpsi_and_rho(p, r))
    assert rep.passed, rep.failures()


@settings(max_examples=60, deadline=None)
@given(V=st.floats(0.0, 50.0), dV=st.floats(0.0, 20.0), R0=st.floats(3.001, 12.0))
def test_select_c_monotone_in_V(V, dV, R0):
    assert select_c(V + dV, R0) >= select_c(V, R0)


def test_select_c_binding_constraint():
    c = select_c(0.0, 4.0)
    assert math.sqrt(c) * math.tanh(math.sqrt(c) / 2) > 1.0
    lower = c - 1e-3
    assert math.sqrt(lower) * math.tanh(math.sqrt(lower) / 2) <= 1.0 + C_MARGIN
    assert c == pytest.approx(2.383)
