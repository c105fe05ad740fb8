"""Numerical certification of PowLU's analytic properties.

With ``t = sqrt(x)`` the logarithmic derivative of the positive branch is::

    g'(x) = ((t + 1)^2 + m * phi(t)) / (t^2 (t + 1)^2) + 1 / (1 + e^(t^2))
    phi(t) = t + 1 - t ln t

``phi`` has a single zero ``t0``. Past it, monotonicity holds as long as
``m <= M(t) = (t + 1)^2 / (t ln t - t - 1)``, whose minimum sits at the root
``t*`` of ``ln t = 2 + 4 / (t - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .activations import (
    POWLU_M_BOUND,
    ActivationKind,
    Variant,
    eval_self,
    sigmoid,
    sigmoid_array,
)

# published two-decimal values of the bound constants
REFERENCE_T0 = 3.59
REFERENCE_T_STAR = 11.02
REFERENCE_M_UPPER = 10.02

H_LADDER = tuple(10.0 ** -k for k in range(2, 9))


class BracketError(ValueError):
    """Raised when a bisection bracket has no sign change."""


def bisect(func: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Root of ``func`` on ``[lo, hi]`` by bisection, to interval width ``tol``."""
    f_lo = func(lo)
    f_hi = func(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol or mid in (lo, hi):
            break
        f_mid = func(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def phi(t: float) -> float:
    if not t > 0:
        raise ValueError(f"phi is defined for t > 0, got {t!r}")
    return t + 1.0 - t * math.log(t)


def m_bound(t: float) -> float:
    """``M(t)``; only meaningful for ``t > t0`` where the denominator is positive."""
    return (t + 1.0) ** 2 / (t * math.log(t) - t - 1.0)


def g_prime(x: float, m: float) -> float:
    """Logarithmic derivative of PowLU on ``x > 0``."""
    if not x > 0:
        raise ValueError(f"g_prime is defined for x > 0, got {x!r}")
    t = math.sqrt(x)
    return ((t + 1.0) ** 2 + m * phi(t)) / (t * t * (t + 1.0) ** 2) + sigmoid(-x)


def g_prime_array(x, m: float):
    x = np.asarray(x, dtype=np.float64)
    t = np.sqrt(x)
    ph = t + 1.0 - t * np.log(t)
    return ((t + 1.0) ** 2 + m * ph) / (t * t * (t + 1.0) ** 2) + sigmoid_array(-x)


@dataclass(frozen=True)
class BoundConstants:
    t0: float
    t_star: float
    m_upper: float


def _stationary(t: float) -> float:
    return math.log(t) - 2.0 - 4.0 / (t - 1.0)


def find_bound_constants() -> BoundConstants:
    """Zero of ``phi``, the minimiser of ``M`` and the resulting bound on ``m``."""
    t0 = bisect(phi, 1.0, 100.0)
    # _stationary -> -inf as t -> 1+, so (t0, 1000] is a valid bracket
    t_star = bisect(_stationary, t0, 1000.0)
    return BoundConstants(t0=t0, t_star=t_star, m_upper=m_bound(t_star))


@dataclass(frozen=True)
class MonotonicityReport:
    m: float
    grid_lo: float
    grid_hi: float
    min_derivative: float
    first_violation_x: Optional[float]
    certified_monotone: bool


def scan_monotonicity(m: float, n_points: int = 100_000, grid_lo: float = 1e-6, grid_hi: float = 1e4) -> MonotonicityReport:
    """Sign scan of ``g'`` on a log-spaced grid.

    ``min_derivative`` is the smallest ``g'`` on the grid, which has the same
    sign as the PowLU derivative since the function itself is positive.
    """
    if not m > 0:
        raise ValueError(f"m must be positive, got {m!r}")
    if n_points < 1000:
        raise ValueError(f"n_points must be at least 1000, got {n_points}")
    x = np.logspace(math.log10(grid_lo), math.log10(grid_hi), n_points)
    gp = g_prime_array(x, m)
    bad = np.flatnonzero(gp <= 0)
    first = float(x[bad[0]]) if bad.size else None
    return MonotonicityReport(
        m=float(m),
        grid_lo=grid_lo,
        grid_hi=grid_hi,
        min_derivative=float(gp.min()),
        first_violation_x=first,
        certified_monotone=first is None,
    )


@dataclass(frozen=True)
class ZeroRegularityReport:
    kind: str
    continuity_gap: float
    left_dq: float
    right_dq: float
    h: tuple = H_LADDER
    right_values: tuple = field(default=())
    left_values: tuple = field(default=())
    right_quotients: tuple = field(default=())
    left_quotients: tuple = field(default=())

    @property
    def monotone_decay(self) -> bool:
        """All four ladders shrink (non-strictly) as ``h`` shrinks."""
        return all(
            all(b <= a for a, b in zip(seq, seq[1:]))
            for seq in (self.right_values, self.left_values, self.right_quotients, self.left_quotients)
        )


def check_zero_regularity(kind: ActivationKind) -> ZeroRegularityReport:
    """Difference-quotient ladder of the self-gated form around ``x = 0``."""
    f0 = eval_self(kind, 0.0).value
    rv, lv, rq, lq = [], [], [], []
    for h in H_LADDER:
        fp = eval_self(kind, h).value
        fm = eval_self(kind, -h).value
        rv.append(abs(fp))
        lv.append(abs(fm))
        rq.append(abs((fp - f0) / h))
        lq.append(abs((fm - f0) / -h))
    return ZeroRegularityReport(
        kind=kind.label,
        continuity_gap=max(rv[-1], lv[-1], abs(f0)),
        left_dq=lq[-1],
        right_dq=rq[-1],
        right_values=tuple(rv),
        left_values=tuple(lv),
        right_quotients=tuple(rq),
        left_quotients=tuple(lq),
    )


def growth_ratio(x: float, m: float) -> float:
    """``PowLU(x) / x``; tends to 1 as ``x`` grows."""
    if not x > 0:
        raise ValueError(f"growth_ratio needs x > 0, got {x!r}")
    return eval_self(ActivationKind(Variant.POWLU, m=m), x).value / x


def swiglu_growth_ratio(x: float) -> float:
    return eval_self(ActivationKind(Variant.SWIGLU), x).value / x


def affine_residual(kind: ActivationKind, lo: float = -5.0, hi: float = 5.0, n: int = 201) -> float:
    """Max absolute residual of the best least-squares line through the curve.

    A strictly positive residual is a concrete witness of non-linearity.
    """
    x = np.linspace(lo, hi, n)
    y = np.array([eval_self(kind, xi).value for xi in x])
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(np.max(np.abs(y - design @ coef)))


# ---------------------------------------------------------------------------
# full battery
# ---------------------------------------------------------------------------


def _check(name: str, passed: bool, **detail) -> dict:
    return {"property": name, "passed": bool(passed), **detail}


def verification_report(m_list, n_points: int = 100_000) -> dict:
    """Run every property check and collect a JSON-serialisable report.

    An ``m`` above the computed bound passes when a violation *is* found.
    """
    m_list = [float(m) for m in m_list]
    if not m_list:
        raise ValueError("m_list must not be empty")
    if any(not m > 0 for m in m_list):
        raise ValueError(f"every m must be positive, got {m_list}")

    consts = find_bound_constants()
    checks = [
        _check("phi(t0) == 0", abs(phi(consts.t0)) < 1e-10, value=phi(consts.t0)),
        _check("t0 > 1", consts.t0 > 1.0, value=consts.t0),
        _check("t0 ~ 3.59", abs(consts.t0 - REFERENCE_T0) <= 0.01, value=consts.t0, expected=REFERENCE_T0),
        _check("t_star ~ 11.02", abs(consts.t_star - REFERENCE_T_STAR) <= 0.01, value=consts.t_star, expected=REFERENCE_T_STAR),
        _check("m_upper ~ 10.02", abs(consts.m_upper - REFERENCE_M_UPPER) <= 0.02, value=consts.m_upper, expected=REFERENCE_M_UPPER),
    ]

    per_m = []
    for m in m_list:
        entry: dict = {"m": m}
        mono = scan_monotonicity(m, n_points)
        entry["monotonicity"] = asdict(mono)
        m_checks = []
        if m < consts.m_upper:
            entry["expected"] = "monotone"
            m_checks.append(_check("monotone", mono.certified_monotone, min_derivative=mono.min_derivative))
        else:
            entry["expected"] = "violation"
            m_checks.append(_check("violation above bound", not mono.certified_monotone,
                                   first_violation_x=mono.first_violation_x))

        if m < POWLU_M_BOUND:
            zr = check_zero_regularity(ActivationKind(Variant.POWLU, m=m))
            entry["zero_regularity"] = {
                "continuity_gap": zr.continuity_gap,
                "left_dq": zr.left_dq,
                "right_dq": zr.right_dq,
                "monotone_decay": zr.monotone_decay,
            }
            # the right quotient is h^(m/(sqrt(h)+1)) * sigma(h), so its size at h = 1e-8 depends on m
            h = H_LADDER[-1]
            right_bound = math.exp(m / (math.sqrt(h) + 1.0) * math.log(h))
            m_checks.append(_check(
                "zero regularity",
                zr.left_dq < 1e-8 and zr.right_dq <= right_bound and zr.continuity_gap <= h * max(right_bound, 1e-8)
                and zr.monotone_decay,
                right_bound=right_bound,
            ))

            xs = np.logspace(3, 8, 200)
            ratios = [growth_ratio(float(x), m) for x in xs]
            decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
            entry["growth"] = {"ratio_1e6": growth_ratio(1e6, m), "decreasing_1e3_1e8": decreasing,
                               "swiglu_ratio_1e3": swiglu_growth_ratio(1e3)}
            swiglu_1e3 = swiglu_growth_ratio(1e3)
            m_checks.append(_check("sub-quadratic growth", decreasing and ratios[-1] >= 1.0
                                   and swiglu_1e3 >= 1e3 and ratios[0] < 0.01 * swiglu_1e3))
            res = affine_residual(ActivationKind(Variant.POWLU, m=m))
            m_checks.append(_check("non-linear", res > 0.1, affine_residual=res))
        else:
            entry["note"] = f"m >= {POWLU_M_BOUND:g}: outside the admissible PowLU range, function checks skipped"

        entry["checks"] = m_checks
        entry["passed"] = all(c["passed"] for c in m_checks)
        per_m.append(entry)

    failed = [c["property"] for c in checks if not c["passed"]]
    failed += [f"m={e['m']:g}: {c['property']}" for e in per_m for c in e["checks"] if not c["passed"]]
    return {
        "constants": {**asdict(consts), "conservative_bound": POWLU_M_BOUND},
        "checks": checks,
        "per_m": per_m,
        "failed": failed,
        "passed": not failed,
    }
