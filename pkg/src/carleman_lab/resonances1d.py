"""Scattering resonances of piecewise-constant potentials on the line.

Resonances are zeros of an outgoing-matching determinant built from exact
transfer matrices.  They are located by counting zeros of the determinant
on rectangles (argument principle), subdividing until each cell holds at
most one zero, and polishing with Newton's method.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .operator1d import Potential

NEWTON_TOL = 1e-10
MAX_DEPTH = 12
_PHASE_STEP = 0.25


class ResonanceError(RuntimeError):
    """Root counting and root finding disagree, or a branch check failed."""


def _sinc_len(k, L):
    # sin(kL)/k, entire in k**2
    x = k * L
    small = np.abs(x) < 1e-6
    return np.where(small, L * (1.0 - x * x / 6.0), np.sin(x) / np.where(small, 1.0, k))


def transfer_matrix(V: Potential, z, h):
    """Propagate ``(u, h u')`` from the left to the right end of ``supp V``.

    Each piece contributes ``[[cos kL, sin(kL)/(hk)], [-hk sin kL, cos kL]]``
    with ``k = sqrt(z - V_j)/h``.  The entries are even in ``k`` so no
    branch choice enters; the determinant is 1.
    """
    z = complex(z)
    T = np.eye(2, dtype=complex)
    for a, b, v in V.pieces:
        L = b - a
        if L <= 0:
            continue
        k = np.sqrt(complex(z - v)) / h
        cs = np.cos(k * L)
        sn = _sinc_len(k, L)
        M = np.array([[cs, sn / h], [-h * k * k * sn, cs]], dtype=complex)
        T = M @ T
    return T


def outgoing_determinant(V: Potential, z, h):
    """Analytic function whose zeros in ``Re z > 0`` are the resonances.

    Start from the outgoing state ``(1, -i h k)`` on the left, propagate, and
    measure the failure ``W - i h k U`` to be outgoing on the right.  The
    result is normalized by ``-2 i h k`` and by the free phase, so it equals
    1 for ``V = 0``.  ``k = sqrt(z)/h`` on the principal branch, which is
    continuous across the positive real axis.
    """
    z = complex(z)
    if z.real <= 0:
        raise ResonanceError("the continuation is only tracked for Re z > 0")
    k = np.sqrt(z) / h
    U, W = transfer_matrix(V, z, h) @ np.array([1.0, -1j * h * k])
    L = V.breaks[-1] - V.breaks[0]
    return complex((W - 1j * h * k * U) / (-2j * h * k) * np.exp(1j * k * L))


def _phase_change(f, a, b, fa, fb, depth=0):
    """Continuous change of ``arg f`` along the segment ``a -> b``."""
    d = np.angle(fb / fa)
    if abs(d) <= _PHASE_STEP or depth > 40:
        if depth > 40:
            raise ResonanceError("phase tracking did not resolve a contour step")
        return d
    m = 0.5 * (a + b)
    fm = f(m)
    if fm == 0:
        raise ResonanceError(f"zero on the contour at {m}")
    return (_phase_change(f, a, m, fa, fm, depth + 1)
            + _phase_change(f, m, b, fm, fb, depth + 1))


def winding_number(f, rect, n_init=64, cache=None):
    """Number of zeros of ``f`` inside ``rect = (x0, x1, y0, y1)``.

    The change of ``arg f`` is accumulated along the boundary with adaptive
    bisection so that no step turns the phase by more than a quarter radian,
    which is the integral of ``f'/f`` evaluated exactly between samples.
    """
    x0, x1, y0, y1 = rect
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        ts = np.linspace(0.0, 1.0, n_init + 1)
        pts = a + (b - a) * ts
        vals = [f(z) for z in pts]
        for j in range(n_init):
            if vals[j] == 0:
                raise ResonanceError(f"zero on the contour at {pts[j]}")
            total += _phase_change(f, pts[j], pts[j + 1], vals[j], vals[j + 1])
    w = total / (2.0 * math.pi)
    n = int(round(w))
    if abs(w - n) > 1e-6:
        raise ResonanceError(f"non-integer winding number {w}")
    return n


def _newton(f, z, box, maxiter=60):
    """Newton iteration confined to ``box``; returns ``None`` if it escapes."""
    for _ in range(maxiter):
        fz = f(z)
        eta = 1e-7 * max(1.0, abs(z))
        df = (f(z + eta) - f(z - eta)) / (2 * eta)
        if df == 0:
            return None
        step = fz / df
        z = z - step
        if not _inside(z, box):
            return None
        if abs(step) <= 1e-15 * max(1.0, abs(z)):
            break
    return z


@dataclass(frozen=True)
class Resonance:
    z: complex
    residual: float


@dataclass
class ResonanceSet:
    h: float
    potential: dict
    region: tuple
    resonances: list
    count: int

    def nearest_to_axis(self):
        if not self.resonances:
            return None
        return max(self.resonances, key=lambda r: (r.z.imag, r.z.real))

    def to_csv(self, path, append=False):
        with open(path, "a" if append else "w", newline="") as fh:
            wr = csv.writer(fh)
            if not append:
                wr.writerow(["h", "re_z", "im_z", "residual"])
            for r in self.resonances:
                wr.writerow([f"{self.h:.17g}", f"{r.z.real:.17g}", f"{r.z.imag:.17g}",
                             f"{r.residual:.17g}"])


def _split(rect):
    x0, x1, y0, y1 = rect
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]


def _inside(z, rect, pad=0.0):
    x0, x1, y0, y1 = rect
    return x0 - pad <= z.real <= x1 + pad and y0 - pad <= z.imag <= y1 + pad


def find_resonances(V: Potential, h, region) -> ResonanceSet:
    """All resonances in ``region = (re_min, re_max, im_min, im_max)``.

    ``im_max`` should be 0 (no resonances lie on or above the real axis for a
    real potential).  Cells are quartered until each holds at most one
    zero; each single zero is polished by Newton's method from the cell centre.
    """
    re0, re1, im0, im1 = (float(v) for v in region)
    if re0 <= 0:
        raise ResonanceError("region must lie in Re z > 0")
    if not (re1 > re0 and im1 > im0):
        raise ValueError("empty region")

    def f(z):
        return outgoing_determinant(V, z, h)

    def scale_at(z):
        k = np.sqrt(complex(z)) / h
        U, W = transfer_matrix(V, z, h) @ np.array([1.0, -1j * h * k])
        L = V.breaks[-1] - V.breaks[0]
        return (abs(W) + abs(h * k * U)) / abs(2 * h * k) * abs(np.exp(1j * k * L))

    total = winding_number(f, (re0, re1, im0, im1))
    found = []
    stack = [((re0, re1, im0, im1), total, 0)]
    while stack:
        rect, cnt, depth = stack.pop()
        if cnt == 0:
            continue
        if cnt == 1:
            c = complex(0.5 * (rect[0] + rect[1]), 0.5 * (rect[2] + rect[3]))
            w, hgt = rect[1] - rect[0], rect[3] - rect[2]
            box = (max(rect[0] - w, 0.5 * rect[0]), rect[1] + w, rect[2] - hgt, rect[3] + hgt)
            z = _newton(f, c, box)
            res = abs(f(z)) / scale_at(z) if z is not None else float("inf")
            if z is not None and _inside(z, rect, 1e-12) and res <= NEWTON_TOL:
                found.append(Resonance(complex(z), float(res)))
                continue
        if depth >= MAX_DEPTH:
            raise ResonanceError(
                f"incomplete: {cnt} zero(s) unresolved in cell {rect}")
        kids = _split(rect)
        counts = [winding_number(f, kid, n_init=16) for kid in kids]
        if sum(counts) != cnt:
            raise ResonanceError(f"child counts {counts} do not add up to {cnt}")
        stack += [(kid, n, depth + 1) for kid, n in zip(kids, counts)]
    found.sort(key=lambda r: (r.z.real, r.z.imag))
    if len(found) != total:
        raise ResonanceError(f"found {len(found)} roots but winding number is {total}")
    if any(r.z.imag >= 0 for r in found):
        raise ResonanceError("a root with Im z >= 0 is not a resonance")
    return ResonanceSet(h, V.to_dict(), (re0, re1, im0, im1), found, total)


@dataclass(frozen=True)
class StripFit:
    c_fit: float
    intercept: float
    n_points: int
    residuals: tuple
    monotone: bool

    def to_dict(self):
        return {"c_fit": self.c_fit, "intercept": self.intercept,
                "n_points": self.n_points, "residuals": list(self.residuals),
                "monotone": self.monotone}


def fit_strip(h_values, im_values) -> StripFit:
    """Least-squares slope of ``log(-Im z)`` against ``-1/h``."""
    h = np.asarray(h_values, dtype=float)
    im = np.asarray(im_values, dtype=float)
    if h.size < 3:
        raise ValueError("insufficient data: need at least 3 values of h")
    if np.any(im >= 0):
        raise ValueError("resonances must have Im z < 0")
    x = -1.0 / h
    y = np.log(-im)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    order = np.argsort(1.0 / h)
    widths = -im[order]
    monotone = bool(np.all(np.diff(widths) < 0))
    return StripFit(float(slope), float(icpt), int(h.size), tuple(map(float, res)),
                    monotone)


def strip_fit(V: Potential, h_list, region):
    """Resonance scan over ``h_list`` and the strip-rate fit of the nearest ones."""
    sets = [find_resonances(V, h, region) for h in h_list]
    usable = [(s.h, s.nearest_to_axis().z.imag) for s in sets if s.resonances]
    if len(usable) < 3:
        raise ValueError("insufficient data: need at least 3 values of h with a resonance")
    hs, ims = zip(*usable)
    return fit_strip(hs, ims), sets


def strip_json(fit: StripFit, path):
    with open(path, "w") as fh:
        json.dump(fit.to_dict(), fh, indent=2, sort_keys=True)
