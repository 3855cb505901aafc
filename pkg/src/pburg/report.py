"""Verification reports and deterministic jet sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, DomainStarvationError
from .expr import SampleBox

REL_TOL = 1e-6
QUAD_TOL = 1e-10
MARGIN = 1e-3
EXCLUSION_EPS = 1e-3
DEGENERACY_EPS = 1e-8


def tolerance_for(max_entry: float, quad_tol: float = QUAD_TOL, rel: float = REL_TOL) -> float:
    """Pass threshold: rel * (1 + largest jet entry) + 10 * quadrature tolerance."""
    return rel * (1.0 + max_entry) + 10.0 * quad_tol


@dataclass
class VerificationReport:
    n: int
    max_residual: float
    mean_residual: float
    tolerance: float
    worst: Optional[dict] = None
    label: str = ""
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.n > 0 and self.max_residual <= self.tolerance else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @classmethod
    def from_samples(cls, residuals, tolerance, points=None, label=""):
        residuals = [abs(float(r)) if math.isfinite(r) else math.inf for r in residuals]
        n = len(residuals)
        if n == 0:
            return cls(0, math.inf, math.inf, tolerance, None, label)
        k = int(np.argmax(residuals))
        worst = {"value": residuals[k]}
        if points is not None:
            worst["point"] = points[k]
        return cls(n, max(residuals), float(np.mean(residuals)), tolerance, worst, label)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        n = self.n + other.n
        if n == 0:
            return self
        mean = (self.mean_residual * self.n + other.mean_residual * other.n) / n
        worst = self.worst if self.max_residual >= other.max_residual else other.worst
        tol = min(self.tolerance, other.tolerance)
        return VerificationReport(n, max(self.max_residual, other.max_residual), mean, tol, worst, self.label)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "max_residual": self.max_residual,
            "mean_residual": self.mean_residual,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }

    def __str__(self):
        name = f"{self.label}: " if self.label else ""
        return f"{name}{self.verdict} (n={self.n}, max={self.max_residual:.3e}, tol={self.tolerance:.3e})"


SLOTS2 = ("w_t", "w_x", "w_xx")
SLOTS3 = ("w_t", "w_x", "w_xx", "w_tx", "w_xxx")


@dataclass
class JetSampler:
    """Draws base points from a box plus derivative values from ``slope``.

    Points within ``margin * width`` of the box boundary are never drawn, and
    ``accept(t, x, w)`` can veto points (domain predicates, degeneracy).
    """

    box: SampleBox = field(default_factory=SampleBox.of)
    n: int = 200
    seed: int = 0
    slope: tuple = (-1.0, 1.0)
    margin: float = MARGIN

    def with_seed(self, seed) -> "JetSampler":
        return JetSampler(self.box, self.n, seed, self.slope, self.margin)

    def with_n(self, n) -> "JetSampler":
        return JetSampler(self.box, n, self.seed, self.slope, self.margin)

    def raw(self, count, order=2, rng=None):
        rng = np.random.default_rng(self.seed) if rng is None else rng
        cols = {}
        for name in ("t", "x", "w"):
            lo, hi = self.box.interval(name)
            pad = self.margin * (hi - lo)
            cols[name] = rng.uniform(lo + pad, hi - pad, size=count)
        slots = SLOTS3 if order >= 3 else SLOTS2
        for name in slots:
            cols[name] = rng.uniform(self.slope[0], self.slope[1], size=count)
        return [{k: float(v[i]) for k, v in cols.items()} for i in range(count)]

    def draw(self, order=2, accept: Optional[Callable] = None, n=None):
        """``n`` accepted samples (dicts of jet entries); raises on starvation."""
        from .classes import Jet2

        n = self.n if n is None else n
        rng = np.random.default_rng(self.seed)
        out = []
        tries = 0
        batch = max(n, 16)
        while len(out) < n and tries < 4 * n + 64:
            for s in self.raw(batch, order, rng):
                tries += 1
                if self.box.exclude is not None and self.box.exclude(s["t"], s["x"], s["w"]):
                    continue
                if accept is not None:
                    try:
                        if not accept(s["t"], s["x"], s["w"]):
                            continue
                    except (DomainError, ZeroDivisionError, OverflowError, ValueError):
                        continue
                out.append(Jet2(**s))
                if len(out) == n:
                    break
        if 2 * len(out) < n or not out:
            raise DomainStarvationError(f"only {len(out)} of {n} sample points were admissible")
        return out
