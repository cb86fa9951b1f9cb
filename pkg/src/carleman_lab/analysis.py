"""Headline experiments: Carleman-inequality testing and resolvent sweeps.

The Carleman tester integrates both sides of the global estimate for a
random family of smooth compactly supported test functions in one
dimension; the sweep measures ``||m^{-1} (P - E - i eps)^{-1} m^{-1}||``
over ``h`` and fits the two exponential envelopes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .carleman_weight import CarlemanWeight
from .certify import CertReport, check_margin
from .operator1d import (
    Grid,
    Potential,
    b_weight,
    discretize,
    m_weight,
    weighted_norm,
)
from .weights import ProblemParams

LOG_GUARD = 300.0
QUAD_RTOL = 1e-4
GL_ORDER = 16


class QuadratureError(RuntimeError):
    """Composite quadrature failed to settle under refinement."""


# -- test functions ---------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """``v = chi(x/R_v) * sum_j a_j exp(-(x-c_j)^2/(2 sigma_j^2) + i kappa_j x)``.

    ``chi(t) = exp(1 - 1/(1 - t^2))`` on ``|t| < 1`` and zero elsewhere, so
    ``v`` is smooth and vanishes outside ``[-R_v, R_v]``.
    """

    __test__ = False  # keep pytest from collecting this class

    seed: int
    R_v: float
    centers: tuple
    widths: tuple
    amps: tuple
    freqs: tuple

    @classmethod
    def draw(cls, seed, R_v, h, E=1.0):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 4))
        centers = rng.uniform(-0.7 * R_v, 0.7 * R_v, k)
        widths = np.exp(rng.uniform(math.log(0.05), math.log(1.0), k))
        amps = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        freqs = rng.uniform(0.0, 1.5 * math.sqrt(E), k) / h
        return cls(int(seed), float(R_v), tuple(centers), tuple(widths),
                   tuple(amps), tuple(freqs))

    def scaled(self, lam):
        return TestFunction(self.seed, self.R_v, self.centers, self.widths,
                            tuple(lam * a for a in self.amps), self.freqs)

    def _cutoff(self, x):
        t = x / self.R_v
        inside = np.abs(t) < 1.0
        tt = np.where(inside, t, 0.0)
        g = 1.0 - tt * tt
        chi = np.where(inside, np.exp(1.0 - 1.0 / g), 0.0)
        # q = 1 - 1/(1-t^2);  chi' = chi q',  chi'' = chi (q'' + q'^2)
        qt = -2.0 * tt / g**2
        qtt = -2.0 / g**2 - 8.0 * tt * tt / g**3
        q1 = qt / self.R_v
        q2 = qtt / self.R_v**2
        return chi, np.where(inside, chi * q1, 0.0), np.where(inside, chi * (q2 + q1 * q1), 0.0)

    def evaluate(self, x):
        """Return ``(v, v'')`` at the points ``x``."""
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape, complex)
        g1 = np.zeros(x.shape, complex)
        g2 = np.zeros(x.shape, complex)
        for c, sig, a, kap in zip(self.centers, self.widths, self.amps, self.freqs):
            G = a * np.exp(-((x - c) ** 2) / (2 * sig**2) + 1j * kap * x)
            L = -(x - c) / sig**2 + 1j * kap
            g += G
            g1 += G * L
            g2 += G * (L * L - 1.0 / sig**2)
        chi, chi1, chi2 = self._cutoff(x)
        return chi * g, chi2 * g + 2.0 * chi1 * g1 + chi * g2


# -- Carleman inequality -----------------------------------------------------

@dataclass(frozen=True)
class CarlemanTerms:
    """Both sides of the estimate, each stored as ``value * exp(-log_scale)``."""

    lhs: float
    rhs_main: float
    rhs_eps: float
    log_scale: float = 0.0

    @property
    def ratio(self):
        den = self.rhs_main + self.rhs_eps
        if den == 0.0:
            return float("nan") if self.lhs == 0.0 else float("inf")
        return self.lhs / den


def _breakpoints(v: TestFunction, V: Potential, p: ProblemParams):
    R = v.R_v
    pts = {-R, R, 0.0}
    for a in (1.0, p.R0, p.R1):
        pts.update((-a, a))
    for a, b, _ in V.pieces:
        pts.update((a, b))
    return np.array(sorted(x for x in pts if -R <= x <= R))


def _gauss_nodes(breaks, panels_per_unit, order=GL_ORDER):
    t, wt = np.polynomial.legendre.leggauss(order)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(math.ceil((b - a) * panels_per_unit)))
        edges = np.linspace(a, b, n + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        xs.append((mid[:, None] + half[:, None] * t).ravel())
        ws.append((half[:, None] * wt).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def _carleman_quad(p, cw, v, h, epsilon, E, V, x, wq):
    r = np.abs(x)
    expo = 2.0 * cw.phi_at(r) * h ** (-4.0 / 3.0)
    top = float(expo.max())
    shift = top if top / 2.0 > LOG_GUARD else 0.0
    ew = np.exp(expo - shift)
    val, d2 = v.evaluate(x)
    Pv = -h * h * d2 + (V(x) - E - 1j * epsilon) * val
    a2 = np.abs(val) ** 2
    lhs = np.sum(wq * b_weight(r, p.s) ** 2 * ew * a2)
    main = np.sum(wq * (1.0 + r) ** (2.0 * p.s) * ew * np.abs(Pv) ** 2)
    rest = np.sum(wq * ew * a2)
    sc = h ** (-10.0 / 3.0)
    return CarlemanTerms(float(lhs), float(sc * main), float(sc * epsilon * rest), shift)


def carleman_lhs_rhs(p: ProblemParams, cw: CarlemanWeight, v: TestFunction, h,
                     epsilon, V: Potential, E=None, *, rtol=QUAD_RTOL,
                     max_doublings=8) -> CarlemanTerms:
    """Integrate the two sides of the Carleman estimate for one test function.

    ``C`` is set to 1, so ``lhs / (rhs_main + rhs_eps)`` is the smallest
    constant that makes the inequality hold for this ``v``.  Panels break at
    every discontinuity of ``V`` and ``b`` and are doubled until all three
    integrals move by less than ``rtol``.
    """
    if p.n != 1:
        raise ValueError("the Carleman tester is one-dimensional")
    if cw.h != h or cw.R1 != p.R1:
        raise ValueError("weight does not match (p, h)")
    E = p.E_min if E is None else E
    breaks = _breakpoints(v, V, p)
    kmax = max(max(v.freqs, default=0.0), math.sqrt(E + p.V_inf) / h)
    ppu = max(4.0, kmax / 4.0, 2.0 * cw.rate, 2.0 / min(v.widths))
    prev = _carleman_quad(p, cw, v, h, epsilon, E, V, *_gauss_nodes(breaks, ppu))
    for _ in range(max_doublings):
        ppu *= 2.0
        cur = _carleman_quad(p, cw, v, h, epsilon, E, V, *_gauss_nodes(breaks, ppu))
        deltas = [abs(a - b) / abs(b) if b else abs(a - b)
                  for a, b in ((cur.lhs, prev.lhs), (cur.rhs_main, prev.rhs_main),
                               (cur.rhs_eps, prev.rhs_eps))]
        if max(deltas) <= rtol:
            return cur
        prev = cur
    raise QuadratureError(f"quadrature for seed {v.seed} did not settle (delta {max(deltas):.2e})")


@dataclass(frozen=True)
class CarlemanSample:
    seed: int
    h: float
    lhs: float
    rhs_main: float
    rhs_eps: float
    ratio: float
    log_scale: float


@dataclass
class CarlemanReport:
    samples: list
    max_ratio: dict
    C_carleman: float
    slope: float
    uniform: bool

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["seed", "h", "lhs", "rhs_main", "rhs_eps", "ratio", "log_scale"])
            for s in self.samples:
                wr.writerow([s.seed] + [f"{getattr(s, k):.17g}" for k in
                                        ("h", "lhs", "rhs_main", "rhs_eps", "ratio",
                                         "log_scale")])

    def summary(self):
        return {
            "C_carleman": self.C_carleman,
            "slope": self.slope,
            "uniform": self.uniform,
            "max_ratio": {f"{h:.17g}": r for h, r in sorted(self.max_ratio.items(),
                                                            reverse=True)},
        }


def default_carleman_epsilon(h):
    return min(1e-3, h ** (10.0 / 3.0))


def _campaign_task(args):
    p, cw, V, E, eps, seed, R_v = args
    v = TestFunction.draw(seed, R_v, p.h, E)
    t = carleman_lhs_rhs(p, cw, v, p.h, eps, V, E)
    return CarlemanSample(seed, p.h, t.lhs, t.rhs_main, t.rhs_eps, t.ratio, t.log_scale)


def log_slope(h_values, y_values):
    """Least-squares slope of ``log(y)`` against ``log(1/h)``."""
    xs = np.log(1.0 / np.asarray(h_values, dtype=float))
    ys = np.log(np.asarray(y_values, dtype=float))
    if xs.size < 2:
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])


def carleman_campaign(weights, V: Potential, E, n_samples, seed, epsilon=None,
                      R_v=None, workers=1, slope_limit=0.1) -> CarlemanReport:
    """Random-test-function campaign over several ``h``.

    ``weights`` is a list of ``(ProblemParams, CarlemanWeight)`` pairs, one
    per ``h``.  Sample ``i`` uses seed ``seed + i`` for every ``h``.
    ``epsilon`` defaults to ``min(1e-3, h^{10/3})``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    tasks = []
    for p, cw in weights:
        eps = default_carleman_epsilon(p.h) if epsilon is None else epsilon
        rv = 2.0 * p.R0 if R_v is None else R_v
        tasks += [(p, cw, V, E, eps, seed + i, rv) for i in range(n_samples)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            samples = list(ex.map(_campaign_task, tasks, chunksize=8))
    else:
        samples = [_campaign_task(t) for t in tasks]
    samples.sort(key=lambda s: (-s.h, s.seed))
    bad = [s for s in samples if not math.isfinite(s.ratio)]
    if bad:
        raise QuadratureError(f"non-finite ratio for seed {bad[0].seed}, h={bad[0].h}")
    max_ratio = {}
    for s in samples:
        max_ratio[s.h] = max(max_ratio.get(s.h, 0.0), s.ratio)
    hs = sorted(max_ratio, reverse=True)
    slope = log_slope(hs, [max_ratio[h] for h in hs])
    C = max(max_ratio.values())
    uniform = bool(slope <= slope_limit) if math.isfinite(slope) else True
    return CarlemanReport(samples, max_ratio, C, slope, uniform)


# -- resolvent sweep ----------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    """Box layout for one sweep row: CAP starts at ``x_cap`` and runs ``cap_length``.

    The mesh width is ``h / points_per_h`` unless a fixed ``spacing`` is given.
    """

    x_cap: float = 50.0
    cap_length: float | None = None
    points_per_h: float = 20.0
    boundary: str = "cap"
    radial: bool = False
    spacing: float | None = None

    def build(self, h, E):
        L = self.cap_length if self.cap_length is not None else max(10.0, 60.0 * h / math.sqrt(E))
        X = self.x_cap + L
        lo = 0.0 if self.radial else -X
        dx = self.spacing if self.spacing is not None else h / self.points_per_h
        return Grid.with_spacing(lo, X, dx)

    def describe(self, h, E):
        g = self.build(h, E)
        return f"[{g.x_min:g},{g.x_max:g}]x{g.count}/{self.boundary}@{self.x_cap:g}"


@dataclass(frozen=True)
class SweepRow:
    h: float
    E: float
    epsilon: float
    norm: float
    iterations: int
    residual: float
    grid: str


def env_43(h):
    return h ** (-4.0 / 3.0) * math.log(1.0 / h)


def env_1(h):
    return 1.0 / h


@dataclass
class SweepResult:
    rows: list
    C_43: float
    C_1: float
    max_residual_43: float
    max_residual_1: float
    tighter_at_min_h: str

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["h", "E", "epsilon", "norm", "iterations", "residual"])
            for r in self.rows:
                wr.writerow([f"{r.h:.17g}", f"{r.E:.17g}", f"{r.epsilon:.17g}",
                             f"{r.norm:.17g}", r.iterations, f"{r.residual:.17g}"])

    def summary(self):
        return {"C_43": self.C_43, "C_1": self.C_1,
                "tighter_at_min_h": self.tighter_at_min_h,
                "max_residual_43": self.max_residual_43,
                "max_residual_1": self.max_residual_1}


def fit_envelope(rows, g):
    """Smallest ``C`` with ``log(norm) <= C g(h)`` on every row, and the worst slack."""
    C = max(math.log(r.norm) / g(r.h) for r in rows)
    resid = max(C * g(r.h) - math.log(r.norm) for r in rows)
    return C, resid


def _sweep_task(args):
    V, h, E, eps, delta, grid = args
    g = grid.build(h, E)
    x_cap = grid.x_cap if grid.boundary == "cap" else None
    op = discretize(V, h, E, eps, g, grid.boundary, x_cap=x_cap)
    res = weighted_norm(op, 1.0 / m_weight(np.abs(g.x), delta))
    return SweepRow(h, E, eps, res.norm, res.iterations, res.residual, grid.describe(h, E))


def resolvent_sweep(V: Potential, E_list, epsilon, h_list, delta,
                    grid: SweepGrid = SweepGrid(), workers=1) -> SweepResult:
    """One weighted-norm row per ``(h, E)`` plus both envelope fits.

    Rows with ``h >= 1`` are kept but excluded from the fits since the
    envelopes degenerate there.
    """
    tasks = [(V, float(h), float(E), float(epsilon), delta, grid)
             for h in h_list for E in E_list]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    rows.sort(key=lambda r: (-r.h, r.E))
    fit_rows = [r for r in rows if r.h < 1.0]
    if not fit_rows:
        raise ValueError("need at least one h < 1 to fit")
    C43, r43 = fit_envelope(fit_rows, env_43)
    C1, r1 = fit_envelope(fit_rows, env_1)
    hmin = min(r.h for r in fit_rows)
    tighter = "h^-4/3 log(1/h)" if C43 * env_43(hmin) < C1 * env_1(hmin) else "h^-1"
    return SweepResult(rows, C43, C1, r43, r1, tighter)


def cap_doubling_change(V, E, epsilon, h, delta, grid: SweepGrid = SweepGrid()):
    """Relative change of the weighted norm when ``x_cap`` is doubled."""
    a = _sweep_task((V, h, E, epsilon, delta, grid)).norm
    g2 = replace(grid, x_cap=2.0 * grid.x_cap)
    b = _sweep_task((V, h, E, epsilon, delta, g2)).norm
    return abs(b - a) / a


# -- gluing -------------------------------------------------------------------

def verify_glue(p: ProblemParams, x0, x_grid) -> CertReport:
    """Pointwise check of the two weight comparisons used to remove the shift.

    ``m^{-2}/4 <= b^2(|x|) + b^2(|x - x0|)`` and
    ``m^2(|x|) + m^2(|x - x0|) <= 17 m^2(|x|)`` in one dimension.
    """
    if not 0.5 < abs(x0) < 0.75:
        raise ValueError("the shift must satisfy 1/2 < |x0| < 3/4")
    x = np.asarray(x_grid, dtype=float)
    r, rs = np.abs(x), np.abs(x - x0)
    m = m_weight(r, p.delta)
    ms = m_weight(rs, p.delta)
    lhs1 = 0.25 / m**2
    rhs1 = b_weight(r, p.s) ** 2 + b_weight(rs, p.s) ** 2
    lhs2 = m**2 + ms**2
    rhs2 = 17.0 * m**2
    return CertReport((
        check_margin("glue_lower", x, rhs1 - lhs1, 1e-14 * rhs1),
        check_margin("glue_upper", x, rhs2 - lhs2, 1e-14 * rhs2),
    ))


def to_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
