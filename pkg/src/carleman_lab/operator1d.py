"""Finite-difference model of ``P(h) - E - i eps`` on a truncated line.

``P(h) = -h**2 d^2/dx^2 + V``.  Truncation uses either a Dirichlet box or a
quartic complex absorbing potential (CAP) ramped in near the box edges.  The
radial ``n = 3`` problem is the same kernel on ``[0, X]`` (the Dirichlet
condition at 0 is implicit in the interior-node stencil).
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-3
SOLVE_RTOL = 1e-10


class SolveError(RuntimeError):
    """Tridiagonal factorization breakdown or excessive residual."""


class ConvergenceError(RuntimeError):
    """Power iteration did not reach its tolerance."""

    def __init__(self, msg, estimate, gap):
        super().__init__(msg)
        self.estimate = estimate
        self.gap = gap


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``count`` interior nodes strictly inside ``(x_min, x_max)``."""

    x_min: float
    x_max: float
    count: int

    def __post_init__(self):
        if self.count < 1 or not self.x_max > self.x_min:
            raise ValueError("grid needs x_max > x_min and count >= 1")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.count + 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.spacing * np.arange(1, self.count + 1)

    @classmethod
    def with_spacing(cls, x_min, x_max, dx):
        count = int(math.ceil((x_max - x_min) / dx)) - 1
        return cls(x_min, x_max, max(count, 1))


@dataclass(frozen=True)
class Potential:
    """Real piecewise-constant potential with compact support.

    ``V(x) = values[j]`` on ``[breaks[j], breaks[j+1])`` and zero outside
    ``[breaks[0], breaks[-1])``.
    """

    kind: str
    breaks: tuple
    values: tuple
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.breaks) != len(self.values) + 1:
            raise ValueError("need one more breakpoint than values")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def support_radius(self) -> float:
        nz = [j for j, v in enumerate(self.values) if v != 0.0]
        if not nz:
            return 0.0
        return max(abs(self.breaks[nz[0]]), abs(self.breaks[nz[-1] + 1]))

    @property
    def sup_norm(self) -> float:
        return max((abs(v) for v in self.values), default=0.0)

    @property
    def pieces(self):
        """``(left, right, value)`` for every piece of positive width."""
        return [(a, b, v) for a, b, v in zip(self.breaks, self.breaks[1:], self.values)
                if b > a]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for a, b, v in self.pieces:
            out[(x >= a) & (x < b)] = v
        return out

    def cell_average(self, x, dx):
        """Average of ``V`` over ``[x - dx/2, x + dx/2]``."""
        x = np.asarray(x, dtype=float)
        lo, hi = x - dx / 2.0, x + dx / 2.0
        out = np.zeros(x.shape)
        for a, b, v in self.pieces:
            out += v * np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
        return out / dx

    def to_dict(self):
        return {"kind": self.kind, **self.params}


def zero_potential():
    return Potential("zero", (0.0, 0.0 + 1.0), (0.0,))


def square_well(depth, radius):
    """``V = depth`` on ``|x| < radius`` (negative depth is a well)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return Potential("square_well", (-radius, radius), (float(depth),),
                     {"depth": depth, "radius": radius})


def step_stack(breaks, values):
    return Potential("step_stack", tuple(map(float, breaks)), tuple(map(float, values)),
                     {"breaks": list(breaks), "values": list(values)})


def bounded_noise(radius, amplitude, pieces, seed):
    """Seeded i.i.d. uniform values in ``[-amplitude, amplitude]`` on equal pieces."""
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-amplitude, amplitude, size=pieces)
    breaks = np.linspace(-radius, radius, pieces + 1)
    return Potential("bounded_noise", tuple(breaks), tuple(vals),
                     {"radius": radius, "amplitude": amplitude, "pieces": pieces,
                      "seed": seed})


def potential_from_csv(path):
    """Read ``x,V`` breakpoint rows; each value holds up to the next breakpoint.

    The last row's value must be zero so the potential is compactly supported.
    """
    xs, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("x", "#"):
                continue
            xs.append(float(row[0]))
            vs.append(float(row[1]))
    if len(xs) < 2:
        raise ValueError("need at least two breakpoints")
    if vs[-1] != 0.0:
        raise ValueError("final breakpoint must carry V = 0")
    pot = step_stack(xs, vs[:-1])
    return Potential("csv", pot.breaks, pot.values, {"path": str(path)})


def potential_from_config(spec):
    """Build a potential from ``{"kind": ..., **params}``."""
    kind = spec.get("kind", "zero")
    args = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "zero":
        return zero_potential()
    if kind == "square_well":
        return square_well(args["depth"], args["radius"])
    if kind == "step_stack":
        return step_stack(args["breaks"], args["values"])
    if kind == "bounded_noise":
        return bounded_noise(args["radius"], args["amplitude"], int(args["pieces"]),
                             int(args["seed"]))
    if kind == "csv":
        return potential_from_csv(args["path"])
    raise ValueError(f"unknown potential kind {kind!r}")


def m_weight(r, delta):
    """Smooth polynomial weight ``(1 + r**2)^{(1+delta)/4}``."""
    r = np.asarray(r, dtype=float)
    return (1.0 + r * r) ** ((1.0 + delta) / 4.0)


def b_weight(r, s):
    """``r^{1/2}`` for ``r <= 1`` and ``(1+r)^{-s}`` for ``r > 1``."""
    r = np.asarray(r, dtype=float)
    return np.where(r <= 1.0, np.sqrt(np.abs(r)), (1.0 + r) ** (-s))


def cap_profile(x, x_cap, x_edge, W_max):
    """Quartic ramp from 0 at ``|x| = x_cap`` to ``W_max`` at ``|x| = x_edge``."""
    t = np.clip((np.abs(x) - x_cap) / (x_edge - x_cap), 0.0, None)
    return W_max * t**4


@dataclass(frozen=True)
class DiscreteOperator:
    """Complex symmetric tridiagonal matrix for ``P - E - i eps - i W``."""

    h: float
    E: float
    epsilon: float
    grid: Grid
    diag: np.ndarray
    offdiag: np.ndarray
    boundary: str
    W: np.ndarray
    _lu: tuple = field(default=None, repr=False, compare=False)

    @property
    def size(self):
        return self.diag.size

    def matvec(self, u):
        out = self.diag * u
        out[:-1] += self.offdiag * u[1:]
        out[1:] += self.offdiag * u[:-1]
        return out

    def rmatvec(self, u):
        """Apply the conjugate transpose."""
        return np.conj(self.matvec(np.conj(u)))

    def toarray(self):
        return (np.diag(self.diag) + np.diag(self.offdiag, 1)
                + np.diag(self.offdiag, -1))

    def factor(self):
        if self._lu is None:
            dl, d, du, du2, ipiv, info = lapack.zgttrf(
                self.offdiag.copy(), self.diag.copy(), self.offdiag.copy())
            if info != 0:
                raise SolveError(f"tridiagonal factorization breakdown (info={info})")
            object.__setattr__(self, "_lu", (dl, d, du, du2, ipiv))
        return self._lu

    def solve(self, f, trans="N"):
        """Return ``A^{-1} f`` (``trans="C"`` gives ``A^{-H} f``)."""
        dl, d, du, du2, ipiv = self.factor()
        f = np.asarray(f, dtype=complex)
        u, info = lapack.zgttrs(dl, d, du, du2, ipiv, f, trans=trans)
        if info != 0:
            raise SolveError(f"zgttrs failed (info={info})")
        return u


def discretize(V: Potential, h, E, epsilon, grid: Grid, boundary="cap",
               x_cap=None, W_max=None) -> DiscreteOperator:
    """Second-order centered discretization of ``P - E - i eps``.

    With ``boundary="cap"`` the absorbing ramp starts at ``x_cap`` (default:
    halfway between the potential's support and the box edge) and reaches
    ``W_max`` (default ``E``) at the edge.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if boundary not in ("dirichlet", "cap"):
        raise ValueError(f"unknown boundary {boundary!r}")
    dx = grid.spacing
    x = grid.x
    edge = max(abs(grid.x_min), abs(grid.x_max))
    if boundary == "cap":
        if x_cap is None:
            x_cap = 0.5 * (V.support_radius + edge)
        if not V.support_radius <= x_cap < edge:
            raise ValueError("CAP must start outside supp V and inside the box")
        W = cap_profile(x, x_cap, edge, E if W_max is None else W_max)
    else:
        W = np.zeros_like(x)
        decay = 2.0 * h * math.sqrt(max(E, 0.0)) / epsilon
        if decay > grid.x_max - grid.x_min:
            warnings.warn(
                f"decay length {decay:.3g} exceeds the Dirichlet box; "
                "the resolvent will see the walls", RuntimeWarning, stacklevel=2)
    k = h * h / (dx * dx)
    diag = (2.0 * k + V.cell_average(x, dx) - E) - 1j * (epsilon + W)
    off = np.full(x.size - 1, -k, dtype=complex)
    return DiscreteOperator(h=h, E=E, epsilon=epsilon, grid=grid, diag=diag,
                            offdiag=off, boundary=boundary, W=W)


def solve(op: DiscreteOperator, f):
    """Direct tridiagonal solve with a residual check."""
    f = np.asarray(f, dtype=complex)
    u = op.solve(f)
    nf = np.linalg.norm(f)
    if nf > 0:
        res = np.linalg.norm(op.matvec(u) - f)
        if res > SOLVE_RTOL * nf:
            raise SolveError(f"relative residual {res / nf:.3e} exceeds {SOLVE_RTOL}")
    return u


def solution_to_csv(grid: Grid, u, path):
    """Write ``x, Re u, Im u`` rows with 17 significant digits."""
    u = np.asarray(u, dtype=complex)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "re_u", "im_u"])
        for x, v in zip(grid.x, u):
            wr.writerow([f"{x:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])


@dataclass(frozen=True)
class NormResult:
    norm: float
    iterations: int
    residual: float


def weighted_norm(op: DiscreteOperator, weight=None, *, tol=1e-6, maxiter=10_000,
                  seed=0, block=6) -> NormResult:
    """Largest singular value of ``M A^{-1} M`` by block power iteration.

    ``weight`` holds the diagonal of ``M`` on the grid (``None`` means the
    identity).  Each step applies ``B = (M A^{-1} M)^H (M A^{-1} M)`` to a
    block of ``block`` vectors with two multi-right-hand-side tridiagonal
    solves, followed by a Rayleigh-Ritz projection; a block keeps the
    iteration fast when the top singular values cluster (even/odd pairs of a
    symmetric potential).  With equal quadrature weights on both sides of the
    operator the grid factor ``dx`` cancels, so the matrix norm already
    approximates the continuum ``L^2 -> L^2`` norm.

    Stops when both the last change of the top Ritz value and the residual
    estimate ``|r|^2 / gap`` are below ``tol`` relative to the singular value.
    ``residual`` is ``||B x - theta x|| / theta`` for the top Ritz vector.
    """
    n = op.size
    mw = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
    if mw.shape != (n,) or np.any(mw <= 0):
        raise ValueError("weight must be a strictly positive grid vector")
    p = max(1, min(block, n))
    mcol = mw[:, None]

    def apply(X):
        return mcol * op.solve(mw[:, None] ** 2 * op.solve(mcol * X), trans="C")

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))
    X, _ = np.linalg.qr(X)
    theta_old = None
    theta = gap = res = float("nan")
    for it in range(1, maxiter + 1):
        Y = apply(X)
        H = X.conj().T @ Y
        vals, S = np.linalg.eigh(0.5 * (H + H.conj().T))
        S = S[:, ::-1]
        vals = vals[::-1]
        theta = float(vals[0])
        BV = Y @ S
        r = BV[:, 0] - theta * (X @ S[:, 0])
        res = float(np.linalg.norm(r) / theta)
        gap = float(theta - vals[-1]) if p > 1 else theta
        if theta_old is not None:
            change = 0.5 * abs(theta - theta_old) / theta
            # a-posteriori error of the top Ritz value, halved for sigma = sqrt(theta)
            bound = 0.5 * (res * theta) ** 2 / max(gap, 1e-300) / theta
            if it > 2 and change <= tol and bound <= tol:
                return NormResult(math.sqrt(theta), it, res)
        theta_old = theta
        X, _ = np.linalg.qr(BV)
    raise ConvergenceError(
        f"block power iteration stalled after {maxiter} steps "
        f"(estimate {math.sqrt(theta):.6g}, relative gap {gap / theta:.3g}, "
        f"residual {res:.3g})",
        math.sqrt(theta), gap / theta)
