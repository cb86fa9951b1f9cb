"""Pointwise inequality checks and the reports they produce."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


class CertificationError(RuntimeError):
    """Raised when a certified inequality is violated."""

    def __init__(self, check):
        self.check = check
        super().__init__(
            f"{check.inequality_id} violated at r={check.worst_r!r} "
            f"(margin {check.worst_margin:.6g})"
        )


@dataclass(frozen=True)
class CheckResult:
    inequality_id: str
    worst_margin: float
    worst_r: float
    passed: bool

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@dataclass(frozen=True)
class CertReport:
    checks: tuple[CheckResult, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, inequality_id: str) -> CheckResult:
        for c in self.checks:
            if c.inequality_id == inequality_id:
                return c
        raise KeyError(inequality_id)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def raise_if_failed(self) -> None:
        bad = self.failures()
        if bad:
            raise CertificationError(bad[0])

    def merged(self, other: "CertReport") -> "CertReport":
        return CertReport(self.checks + other.checks)

    def to_dict(self):
        return {"pass": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_margin(inequality_id, r, margin, tol=0.0) -> CheckResult:
    """Summarize ``margin >= -tol`` over the sample points ``r``.

    ``margin`` is ``rhs - lhs`` for an inequality ``lhs <= rhs``; ``tol`` may
    be a scalar or an array broadcastable against ``margin``.
    """
    r = np.asarray(r, dtype=float)
    margin = np.asarray(margin, dtype=float)
    if margin.size == 0:
        return CheckResult(inequality_id, float("inf"), float("nan"), True)
    slack = margin + np.broadcast_to(np.asarray(tol, dtype=float), margin.shape)
    bad = ~np.isfinite(margin)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        return CheckResult(inequality_id, float("nan"), float(r[i]), False)
    i = int(np.argmin(margin))
    return CheckResult(
        inequality_id, float(margin[i]), float(r[i]), bool(np.all(slack >= 0.0))
    )
