"""Problem constants and the auxiliary radial weights ``psi`` and ``w``.

Everything here is a closed-form, vectorized function of the radius.  The
``verify_*`` helpers evaluate the elementary weight inequalities pointwise
with the explicit constants from their proofs, so a violation on any grid
is a falsification rather than a matter of choosing ``C`` large enough.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import CertReport, check_margin

C_STEP = 1e-3
C_MARGIN = 1e-6
DELTA_CAP = 1.0 - 1e-9
SUPPORT_MARGIN = 1e-2

# relative slack for inequalities that hold with equality in closed form
_EQ_RTOL = 1e-12


def _tanh_map(c):
    rc = math.sqrt(c)
    return rc * math.tanh(rc / 2.0)


def c_is_feasible(c, V_inf, R0, margin=C_MARGIN):
    """True when ``c`` satisfies both lower bounds on the slope constant."""
    return (
        c > 1.0
        and c > V_inf * R0 / 4.0 + margin
        and _tanh_map(c) > max(V_inf / 4.0, 1.0) + margin
    )


def select_c(V_inf, R0):
    """Smallest feasible slope constant on the ``C_STEP`` lattice.

    Both constraints are monotone in ``c``, so the feasible set is a ray; its
    left end for the tanh constraint is located by Brent's method and the
    lattice point just above both thresholds is returned.
    """
    from scipy.optimize import brentq

    if V_inf < 0:
        raise ValueError("V_inf must be nonnegative")
    if R0 <= 3:
        raise ValueError("R0 must exceed 3")
    target = max(V_inf / 4.0, 1.0) + C_MARGIN
    hi = 4.0
    while _tanh_map(hi) <= target:
        hi *= 2.0
    c_tanh = brentq(lambda c: _tanh_map(c) - target, 1e-12, hi, xtol=1e-14)
    c_lin = V_inf * R0 / 4.0 + C_MARGIN
    k = max(1001, math.floor(max(c_tanh, c_lin) / C_STEP))
    c = round(k * C_STEP, 3)
    while not c_is_feasible(c, V_inf, R0):
        k += 1
        c = round(k * C_STEP, 3)
    return c


def default_R0(support_radius):
    """Smallest admissible ``R0`` keeping the support inside ``B(0, R0/2)``."""
    return max(3.0, 2.0 * support_radius) + SUPPORT_MARGIN


@dataclass(frozen=True)
class ProblemParams:
    """Physical parameters together with the h-dependent derived constants."""

    E_min: float
    E_max: float
    V_inf: float
    R0: float
    s: float
    n: int
    h: float
    delta: float
    c: float
    B: float
    R1: float
    B_tilde: float

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.c)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def derive_params(E_min, E_max, V_inf, R0, s, n, h, c=None) -> ProblemParams:
    """Build :class:`ProblemParams` for one value of ``h``.

    ``c`` defaults to :func:`select_c`; passing it explicitly is allowed as
    long as it is feasible.
    """
    if not 0.0 < h <= 1.0:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    if R0 <= 3:
        raise ValueError(f"R0 must exceed 3, got {R0}")
    if E_min <= 0:
        raise ValueError(f"E_min must be positive, got {E_min}")
    if E_max < E_min:
        raise ValueError("E_max must be >= E_min")
    if s <= 0.5:
        raise ValueError(f"s must exceed 1/2, got {s}")
    if n not in (1, 3):
        raise ValueError(f"only n = 1 and n = 3 are supported, got {n}")
    if V_inf < 0:
        raise ValueError("V_inf must be nonnegative")
    if c is None:
        c = select_c(V_inf, R0)
    elif not c_is_feasible(c, V_inf, R0, margin=0.0):
        raise ValueError(f"c = {c} violates the slope-constant lower bounds")

    delta = min(2.0 * s - 1.0, DELTA_CAP)
    h23 = h ** (2.0 / 3.0)
    B = (c + h23 * E_min / 4.0) * R0**2
    R1 = math.sqrt(4.0 * B / (h23 * E_min))
    h43 = h ** (4.0 / 3.0)
    B_tilde = (math.sqrt(4.0 * B + h ** (8.0 / 3.0)) - h43) / 2.0
    return ProblemParams(
        E_min=float(E_min), E_max=float(E_max), V_inf=float(V_inf), R0=float(R0),
        s=float(s), n=int(n), h=float(h), delta=delta, c=float(c), B=B, R1=R1,
        B_tilde=B_tilde,
    )


def psi(r, p: ProblemParams):
    """Piecewise target for ``(phi')**2``: ``c``, then ``B/r**2 - shift``, then 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("psi is defined for r > 0 only")
    mid = p.B / r**2 - p.h ** (2.0 / 3.0) * p.E_min / 4.0
    out = np.where(r <= p.R0, p.c, np.where(r < p.R1, mid, 0.0))
    return out if out.ndim else float(out)


def psi_prime(r, p: ProblemParams):
    """Derivative of :func:`psi` away from ``R0`` and ``R1``."""
    r = np.asarray(r, dtype=float)
    out = np.where((r > p.R0) & (r < p.R1), -2.0 * p.B / r**3, 0.0)
    return out if out.ndim else float(out)


def w_eval(r, p: ProblemParams):
    """Return ``(w, w')``.

    ``w = r**2`` inside ``R1`` and saturates at ``R1**2 + 1`` outside.  At
    ``r == R1`` exactly the derivative has a kink; ``w'`` is NaN there and the
    two one-sided values are available from :func:`w_kink`.
    """
    r = np.asarray(r, dtype=float)
    t = 1.0 + (r - p.R1)
    outer = r > p.R1
    tt = np.where(outer, t, 1.0)
    w = np.where(outer, p.R1**2 + 1.0 - tt ** (-p.delta), r**2)
    dw = np.where(outer, p.delta * tt ** (-1.0 - p.delta), 2.0 * r)
    dw = np.where(r == p.R1, np.nan, dw)
    if w.ndim == 0:
        return float(w), float(dw)
    return w, dw


def w_kink(p: ProblemParams):
    """One-sided derivatives ``(w'(R1-), w'(R1+))``."""
    return 2.0 * p.R1, p.delta


def rho(r, p: ProblemParams):
    """Effective potential ``h**2 (n-1)(n-3) / (2r)**2`` of the radial reduction."""
    r = np.asarray(r, dtype=float)
    return p.h**2 * (p.n - 1) * (p.n - 3) / (2.0 * r) ** 2


def radial_grid(r_min, r_max, count, spacing="uniform", avoid=()):
    """Sample grid on ``[r_min, r_max]`` with the points in ``avoid`` removed."""
    if spacing == "uniform":
        r = np.linspace(r_min, r_max, count)
    elif spacing == "log":
        r = np.geomspace(r_min, r_max, count)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    keep = np.ones(r.shape, dtype=bool)
    for a in avoid:
        keep &= ~np.isclose(r, a, rtol=1e-12, atol=0.0)
    return r[keep]


def grid_from_spec(spec, p: ProblemParams | None = None):
    """Build a grid from ``{r_min, r_max, count, spacing}``; kinks of ``p`` removed."""
    avoid = (p.R0, p.R1) if p is not None else ()
    return radial_grid(
        float(spec["r_min"]), float(spec["r_max"]), int(spec["count"]),
        spec.get("spacing", "uniform"), avoid,
    )


def _nonneg_margin(r, p, w_func):
    # closed form inside R1 so the identity 2w/r - w' = 0 is exact there
    w, dw = w_func(r, p)
    inner = r < p.R1
    rr = np.where(inner, 1.0, r)
    return np.where(inner, 2.0 * r - 2.0 * r, 2.0 * w / rr - dw)


def verify_w_lemma(p: ProblemParams, r_grid, w_func=None) -> CertReport:
    """Check the four elementary ``w`` inequalities on ``r_grid``.

    Constants are the ones produced by the proof: ``w <= 8 h^{-2/3} B/E_min``,
    ``w**2 / (w' (1+r)^{1+delta}) <= 64 h^{-4/3} B**2 / (delta E_min**2)``
    and ``w' >= min(2, delta) (1_{r<=1} r + 1_{r>=1} (1+r)^{-1-delta})``.
    ``w_func`` substitutes the ``(w, w')`` evaluator, for fault injection.
    """
    w_func = w_func or w_eval
    r = np.asarray(r_grid, dtype=float)
    if np.any(r == p.R1):
        raise ValueError("grid must avoid r = R1")
    w, dw = w_func(r, p)
    h = p.h
    d = p.delta

    nonneg = _nonneg_margin(r, p, w_func)

    w_bound = 8.0 * h ** (-2.0 / 3.0) * p.B / p.E_min
    upper_w = w_bound - w

    ratio = w**2 / (dw * (1.0 + r) ** (1.0 + d))
    ratio_bound = 64.0 * h ** (-4.0 / 3.0) * p.B**2 / (d * p.E_min**2)
    upper_ratio = ratio_bound - ratio

    k = min(2.0, d)
    floor = k * np.where(r <= 1.0, r, (1.0 + r) ** (-1.0 - d))
    lower_dw = dw - floor

    checks = (
        check_margin("nonneg_restrict_w", r, nonneg, _EQ_RTOL * np.abs(dw)),
        check_margin("upper_bound_w", r, upper_w, _EQ_RTOL * w_bound),
        check_margin("upper_bound_w_ratio", r, upper_ratio, _EQ_RTOL * ratio_bound),
        check_margin("lower_bound_w_prime", r, lower_dw, _EQ_RTOL * np.abs(floor)),
    )
    return CertReport(checks)


def verify_wpsi_and_rho(p: ProblemParams, r_grid, w_func=None) -> CertReport:
    """Check ``h^{-2/3}(w psi)' >= -(E_min/4) w'`` and the ``rho`` estimate.

    ``(w psi)'`` comes from the piecewise closed forms of ``w`` and ``psi``;
    for ``n`` in ``{1, 3}`` the effective potential vanishes identically.
    """
    w_func = w_func or w_eval
    r = np.asarray(r_grid, dtype=float)
    if np.any((r == p.R0) | (r == p.R1)):
        raise ValueError("grid must avoid r = R0 and r = R1")
    w, dw = w_func(r, p)
    ps = psi(r, p)
    dps = psi_prime(r, p)
    floor = -(p.E_min / 4.0) * dw
    wpsi_prime = (dw * ps + w * dps) * p.h ** (-2.0 / 3.0)
    tol = _EQ_RTOL * (np.abs(dw * ps) + np.abs(w * dps)) * p.h ** (-2.0 / 3.0)
    m1 = wpsi_prime - floor

    nonneg = _nonneg_margin(r, p, w_func)
    m2 = nonneg * rho(r, p) - floor
    checks = (
        check_margin("w_psi_inequality", r, m1, tol + _EQ_RTOL * np.abs(floor)),
        check_margin("effective_potential", r, m2, _EQ_RTOL * np.abs(floor)),
    )
    return CertReport(checks)
