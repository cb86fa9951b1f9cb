"""Carleman weight ``phi`` from the backward Riccati problem.

``y = phi'`` solves ``y' = h^{-4/3} (y**2 - psi)`` with ``y(R1) = 0``.  Only
the stretch ``(R0, R1)`` needs a numerical integrator: ``y`` vanishes beyond
``R1`` and ``psi`` is the constant ``c`` below ``R0``, where the solution is a
shifted ``tanh``.  ``phi`` is the running integral of ``y`` from the origin.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .certify import CertReport, check_margin
from .weights import ProblemParams, psi

R_FLOOR = 1e-6
BOUND_TOL = 1e-8
RESIDUAL_TOL = 1e-6


class RiccatiError(RuntimeError):
    """Integration failure or a solution leaving ``[0, sqrt(c)]``."""


def _logcosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


@dataclass(frozen=True)
class GridSpec:
    """Radial sampling controls.

    ``layer_points`` samples per boundary-layer width ``h^{4/3}/sqrt(c)``
    (at least ``layer_points_per_c * c``, since the difference-quotient
    defect scales like ``c (dr/width)**2``) within ``layer_span`` widths of
    ``R0`` and ``R1``; spacing then grows geometrically by ``grade`` up to
    ``R1 / base_count``.
    """

    layer_points: int = 200
    layer_points_per_c: float = 60.0
    layer_span: float = 12.0
    base_count: int = 20000
    grade: float = 1.02
    r_floor: float = R_FLOOR


def _march(a, b, spacing):
    pts = [a]
    r = a
    while True:
        r = r + spacing(r)
        if r >= b:
            break
        pts.append(r)
    pts = np.asarray(pts)
    if len(pts) > 1 and b - pts[-1] < 0.5 * spacing(pts[-1]):
        pts = pts[:-1]
    # stretch so the segment ends exactly at b
    x = np.append(pts, b)
    return a + (x - a) * (b - a) / (x[-1] - a)


def build_radial_grid(p: ProblemParams, spec: GridSpec = GridSpec()):
    """Strictly increasing grid on ``[r_floor, R1]`` containing ``R0`` and ``R1``."""
    ell = p.h ** (4.0 / 3.0) / p.sqrt_c
    coarse = p.R1 / spec.base_count
    per_layer = max(spec.layer_points, spec.layer_points_per_c * p.c)
    fine = min(ell / per_layer, coarse / 4.0)
    span = spec.layer_span * ell
    slope = spec.grade - 1.0

    def spacing(r):
        d = min(abs(r - p.R0), abs(r - p.R1))
        return min(coarse, fine + slope * max(d - span, 0.0))

    left = _march(spec.r_floor, p.R0, spacing)
    right = _march(p.R0, p.R1, spacing)
    return np.concatenate([left, right[1:]])


@dataclass(frozen=True)
class CarlemanWeight:
    """Sampled ``y = phi'`` and ``phi`` on ``(r_floor, R1]``.

    ``r_star`` parametrizes the closed form below ``R0``; ``phi_R0`` is the
    exact integral of that closed form over ``(0, R0]``.
    """

    h: float
    r_grid: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    phi_max: float
    residual: float
    r_star: float
    phi_R0: float
    R0: float
    R1: float
    sqrt_c: float
    psi_mode: str = "piecewise"
    K_fit: float | None = None
    K_explicit: float | None = None
    _spline: object = field(default=None, repr=False, compare=False)

    @property
    def rate(self):
        return self.h ** (-4.0 / 3.0) * self.sqrt_c

    def y_at(self, r):
        """Evaluate ``phi'`` at arbitrary radii."""
        r = np.asarray(r, dtype=float)
        inner = self.sqrt_c * np.tanh(self.rate * (self.r_star - r))
        mid = self._spline.derivative()(np.clip(r, self.R0, self.R1))
        return np.where(r <= self.R0, inner, np.where(r < self.R1, mid, 0.0))

    def phi_at(self, r):
        """Evaluate ``phi`` at arbitrary radii ``r >= 0``."""
        r = np.asarray(r, dtype=float)
        inner = _phi_closed(r, self.r_star, self.rate, self.sqrt_c)
        mid = self._spline(np.clip(r, self.R0, self.R1))
        out = np.where(r <= self.R0, inner, np.where(r < self.R1, mid, self.phi_max))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["r", "y", "phi"])
            for row in zip(self.r_grid, self.y, self.phi):
                wr.writerow([f"{v:.17g}" for v in row])

    def sidecar(self):
        return {
            "h": self.h,
            "phi_max": self.phi_max,
            "residual": self.residual,
            "K_explicit": self.K_explicit,
            "K_fit": self.K_fit,
            "psi_mode": self.psi_mode,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


def _phi_closed(r, r_star, rate, sqrt_c):
    # integral of sqrt(c) tanh(rate (r_star - s)) over (0, r)
    return (sqrt_c / rate) * (_logcosh(rate * r_star) - _logcosh(rate * (r_star - r)))


def comparison_solutions(p: ProblemParams, r):
    """Return ``(z, z_tilde, xi)``: the two tanh barriers and ``B_tilde / r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    rate = p.h ** (-4.0 / 3.0) * p.sqrt_c
    z = p.sqrt_c * np.tanh(rate * (p.R1 - r))
    zt = p.sqrt_c * np.tanh(rate * (p.R0 - r))
    xi = p.B_tilde / r
    return z, zt, xi


def explicit_phi_bound(p: ProblemParams):
    """Upper bound ``sqrt(c) R0 + B_tilde log(R1/R0)`` on ``max phi``."""
    return p.sqrt_c * p.R0 + p.B_tilde * math.log(p.R1 / p.R0)


def solve_riccati(p: ProblemParams, grid_spec: GridSpec | None = None, *,
                  psi_mode="piecewise", rtol=1e-10, atol=1e-12) -> CarlemanWeight:
    """Construct the weight for ``p.h``.

    ``psi_mode="constant"`` replaces ``psi`` by ``c`` on all of ``(0, R1)``;
    the result must then coincide with ``sqrt(c) tanh(h^{-4/3} sqrt(c)(R1-r))``.
    """
    grid_spec = grid_spec or GridSpec()
    if psi_mode not in ("piecewise", "constant"):
        raise ValueError(f"unknown psi_mode {psi_mode!r}")
    h = p.h
    k = h ** (-4.0 / 3.0)
    c = p.c
    sc = p.sqrt_c

    if psi_mode == "piecewise":
        def target(r):
            return p.B / (r * r) - h ** (2.0 / 3.0) * p.E_min / 4.0
    else:
        def target(r):
            return c

    def rhs(r, u):
        # u = (y, integral of y over (r, R1))
        return [k * (u[0] * u[0] - target(r)), -u[0]]

    def jac(r, u):
        return [[2.0 * k * u[0], 0.0], [-1.0, 0.0]]

    sol = solve_ivp(rhs, (p.R1, p.R0), [0.0, 0.0], method="Radau",
                    rtol=rtol, atol=atol, jac=jac, dense_output=True)
    if not sol.success:
        last = float(sol.t[-1]) if sol.t.size else p.R1
        raise RiccatiError(f"integrator failed near r={last:.17g}: {sol.message}")

    r = build_radial_grid(p, grid_spec)
    mid = r >= p.R0
    u_mid = sol.sol(r[mid])
    y0, I0 = (float(v) for v in sol.sol(p.R0))
    if not -BOUND_TOL <= y0 <= sc + BOUND_TOL:
        raise RiccatiError(f"y(R0) = {y0!r} outside [0, sqrt(c)]")
    ratio = min(max(y0 / sc, 0.0), 1.0 - 1e-16)
    r_star = p.R0 + math.atanh(ratio) / (k * sc)
    rate = k * sc

    y = np.empty_like(r)
    y[~mid] = sc * np.tanh(rate * (r_star - r[~mid]))
    y[mid] = u_mid[0]
    y[-1] = 0.0
    lo, hi = float(y.min()), float(y.max())
    if lo < -BOUND_TOL or hi > sc + BOUND_TOL:
        bad = int(np.argmin(y)) if lo < -BOUND_TOL else int(np.argmax(y))
        raise RiccatiError(f"y = {y[bad]!r} at r = {r[bad]!r} leaves [0, sqrt(c)]")

    phi_R0 = float(_phi_closed(p.R0, r_star, rate, sc))
    phi = np.empty_like(r)
    phi[~mid] = _phi_closed(r[~mid], r_star, rate, sc)
    phi[mid] = phi_R0 + (I0 - u_mid[1])
    phi_max = float(phi[-1])

    spline = CubicHermiteSpline(r[mid], phi[mid], y[mid])
    tgt = np.where(r <= p.R0, c, psi(r, p)) if psi_mode == "piecewise" else np.full_like(r, c)
    res = _ode_residual(r, y, tgt, h, p)
    cw = CarlemanWeight(
        h=h, r_grid=r, y=y, phi=phi, phi_max=phi_max, residual=res,
        r_star=r_star, phi_R0=phi_R0, R0=p.R0, R1=p.R1, sqrt_c=sc,
        psi_mode=psi_mode, _spline=spline,
    )
    if h < 1.0:
        cw = replace(cw, K_explicit=explicit_phi_bound(p) / math.log(1.0 / h))
    return cw


def _kink_mask(r, kinks, width=2):
    mask = np.ones(r.size, dtype=bool)
    mask[[0, -1]] = False
    for a in kinks:
        i = int(np.searchsorted(r, a))
        mask[max(i - width, 0):i + width + 1] = False
    return mask


def ode_residual_profile(r, y, target, h, kinks):
    """``y**2 - h^{4/3} Dy - target`` by nonuniform centered differences."""
    dy = np.gradient(y, r, edge_order=2)
    res = y * y - h ** (4.0 / 3.0) * dy - target
    return res, _kink_mask(r, kinks)


def _ode_residual(r, y, target, h, p):
    res, mask = ode_residual_profile(r, y, target, h, (p.R0, p.R1))
    return float(np.max(np.abs(res[mask])))


def certify_phi(cw: CarlemanWeight, p: ProblemParams, K_explicit=None) -> CertReport:
    """Check every conclusion of the weight lemma on the sampled weight.

    ``K_explicit`` overrides the per-h constant, so a single constant can be
    tested across a sweep.
    """
    if not math.isclose(cw.h, p.h, rel_tol=0, abs_tol=0) or cw.R1 != p.R1:
        raise ValueError("weight and parameters disagree")
    r, y, h = cw.r_grid, cw.y, p.h
    sc = p.sqrt_c
    tol = BOUND_TOL
    z, zt, xi = comparison_solutions(p, r)
    below = r < p.R0
    inside = r < p.R1
    outer = (r > p.R0) & (r < p.R1)
    half = r <= p.R0 / 2.0

    tgt = np.where(r <= p.R0, p.c, psi(r, p))
    res, mask = ode_residual_profile(r, y, tgt, h, (p.R0, p.R1))
    floor = sc * math.tanh(sc / 2.0)

    checks = [
        check_margin("solves_ode", r[mask], RESIDUAL_TOL - np.abs(res[mask])),
        check_margin("bounds_phi_prime_lower", r, y, tol),
        check_margin("bounds_phi_prime_upper", r, sc - y, tol),
        check_margin("sandwich_z_tilde", r[below], y[below] - zt[below], tol),
        check_margin("sandwich_z", r[inside], z[inside] - y[inside], tol),
        check_margin("one_over_r_bound", r[outer], xi[outer] - y[outer], tol),
        check_margin("lower_bound_phi_prime_R0_half", r[half], y[half] - floor, tol),
        check_margin("phi_max_lower", [0.0], [cw.phi_max - 1.0]),
    ]
    direct = explicit_phi_bound(p)
    if K_explicit is not None and h < 1.0:
        bound = K_explicit * math.log(1.0 / h)
    elif h <= math.exp(-1.0):
        bound = (cw.K_explicit or direct / math.log(1.0 / h)) * math.log(1.0 / h)
    else:
        bound = direct
    checks.append(check_margin("phi_max_upper", [0.0], [bound - cw.phi_max]))
    return CertReport(tuple(checks))


def phi_sweep(make_params, h_list, grid_spec=None, **kw):
    """Solve for each ``h`` and attach the common fitted constant ``K_fit``.

    ``K_fit`` is the smallest ``K`` with ``phi_max <= K log(1/h)`` over the
    sweep points with ``h < 1``.
    """
    out = []
    for h in h_list:
        p = make_params(h)
        out.append((p, solve_riccati(p, grid_spec, **kw)))
    ratios = [cw.phi_max / math.log(1.0 / p.h) for p, cw in out if p.h < 1.0]
    K_fit = max(ratios) if ratios else None
    return [(p, replace(cw, K_fit=K_fit)) for p, cw in out]
