"""Welch's unequal-variance t-test with a self-contained p-value.

The two-sided p-value comes from the Student t distribution via the
regularized incomplete beta function I_x(a, b), evaluated with the
modified Lentz continued fraction (Numerical Recipes 6.4 form):

    p = I_x(df / 2, 1 / 2),  x = df / (df + t^2)

Degenerate samples follow a documented convention: when both samples
have zero variance, p = 1 for equal means and p = 0 otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MAX_ITER = 300
_FPMIN = 1e-300
_EPS = 3e-15


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise RuntimeError(f"incomplete beta failed to converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with df degrees of freedom."""
    if df <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, regularized_incomplete_beta(df / 2.0, 0.5, x)))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_value: float

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


def welch_t_test(a, b) -> TTestResult:
    """Two-sided Welch test on two samples of per-seed rates.

    Degrees of freedom follow Welch-Satterthwaite. Both-degenerate
    samples use the documented convention (p = 1 when means agree,
    p = 0 otherwise, df reported as n1 + n2 - 2).
    """
    xa = np.asarray(a, dtype=np.float64).ravel()
    xb = np.asarray(b, dtype=np.float64).ravel()
    n1, n2 = xa.size, xb.size
    if n1 < 2 or n2 < 2:
        raise ValueError("each sample needs at least two observations")
    m1, m2 = float(xa.mean()), float(xb.mean())
    v1 = float(xa.var(ddof=1)) / n1
    v2 = float(xb.var(ddof=1)) / n2
    pooled = v1 + v2
    # Rounding in the mean leaves ~1e-34 variance on constant samples;
    # anything at that scale is degenerate, not signal.
    scale = max(1.0, m1 * m1, m2 * m2)
    if pooled <= 1e-26 * scale:
        df = float(n1 + n2 - 2)
        if abs(m1 - m2) <= 1e-12 * math.sqrt(scale):
            return TTestResult(0.0, df, 1.0)
        return TTestResult(math.copysign(math.inf, m1 - m2), df, 0.0)
    t = (m1 - m2) / math.sqrt(pooled)
    df = pooled ** 2 / ((v1 ** 2) / (n1 - 1) + (v2 ** 2) / (n2 - 1))
    return TTestResult(t, df, t_two_sided_p(t, df))
