"""Scalar and elementwise activation functions with analytic derivatives.

Every gated activation is written as ``x1 * f(x2)`` where ``f`` is the gate
function. The self-gated form used for plotting is ``x * f(x)``.

Positive-branch gates of the power family share one shape::

    f(x) = exp(q(x) * ln x) * s(x)

with ``q`` the gate exponent and ``s`` either the sigmoid or 1. All of them
fall back to the SiLU gate for ``x <= 0``, so the negative branch is shared
bit-for-bit with SwiGLU.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_M = 3.0
DEFAULT_CLIP = 7.0
POWLU_M_BOUND = 10.0


class Variant(str, enum.Enum):
    POWLU = "powlu"
    SWIGLU = "swiglu"
    SWIGLU_CLIP = "swiglu_clip"
    SILU = "silu"
    ABL_A = "abl_a"  # x^(1 + m/x)
    ABL_B = "abl_b"  # x^(1 + m/(x+1))
    ABL_C = "abl_c"  # x^(1 + m/(x+1)) * sigmoid(x)


_POWER_VARIANTS = (Variant.POWLU, Variant.ABL_A, Variant.ABL_B, Variant.ABL_C)
_SIGMOID_POWER = (Variant.POWLU, Variant.ABL_C)


@dataclass(frozen=True)
class ActivationKind:
    """Activation formula plus its parameters.

    ``m`` is only read by PowLU and the ablation variants, ``clip`` only by
    SwiGLU-Clip, but both are validated for every kind.
    """

    variant: Variant
    m: float = DEFAULT_M
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (math.isfinite(self.m) and self.m > 0):
            raise ValueError(f"m must be a positive finite real, got {self.m!r}")
        if self.variant is Variant.POWLU and not self.m < POWLU_M_BOUND:
            raise ValueError(f"PowLU requires 0 < m < {POWLU_M_BOUND:g}, got {self.m!r}")
        if not (math.isfinite(self.clip) and self.clip > 0):
            raise ValueError(f"clip must be a positive finite real, got {self.clip!r}")

    @classmethod
    def parse(cls, name: str, m: float = DEFAULT_M, clip: float = DEFAULT_CLIP) -> "ActivationKind":
        key = name.strip().lower().replace("-", "_")
        return cls(Variant(key), m=m, clip=clip)

    @property
    def uses_m(self) -> bool:
        return self.variant in _POWER_VARIANTS

    @property
    def label(self) -> str:
        if self.uses_m:
            return f"{self.variant.value}(m={self.m:g})"
        if self.variant is Variant.SWIGLU_CLIP:
            return f"{self.variant.value}(clip={self.clip:g})"
        return self.variant.value


POWLU = ActivationKind(Variant.POWLU)
SWIGLU = ActivationKind(Variant.SWIGLU)


class Branch(str, enum.Enum):
    POSITIVE = "positive"
    NONPOSITIVE = "nonpositive"


@dataclass(frozen=True)
class ScalarEval:
    value: float
    derivative: float
    branch: Branch


# ---------------------------------------------------------------------------
# scalar primitives
# ---------------------------------------------------------------------------


def sigmoid(x: float) -> float:
    """Logistic function, evaluated on the side that cannot overflow."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def silu(x: float) -> float:
    return x * sigmoid(x)


def silu_prime(x: float) -> float:
    s = sigmoid(x)
    return s + x * s * sigmoid(-x)


def _power_terms(variant: Variant, m: float, x: float):
    """Return ``(q, r, use_sigmoid)`` for a positive input.

    ``q`` is the gate exponent and ``r = q + x * q'(x) * ln x``, the factor
    that appears in both gate and self-gated derivatives.
    """
    lx = math.log(x)
    if variant is Variant.POWLU:
        t = math.sqrt(x)
        phi = t + 1.0 - t * math.log(t)
        return m / (t + 1.0), m * phi / (t + 1.0) ** 2, True
    if variant is Variant.ABL_A:
        return m / x, m * (1.0 - lx) / x, False
    # ABL_B / ABL_C
    return m / (x + 1.0), m * (x + 1.0 - x * lx) / (x + 1.0) ** 2, variant is Variant.ABL_C


def _scaled_exp(log_prefactor: float, factor: float) -> float:
    # exp(a) * b with a -> -inf and b -> inf near 0+ must give 0, not nan
    pre = math.exp(log_prefactor)
    if pre == 0.0:
        return 0.0
    return pre * factor


def gate_value(kind: ActivationKind, x: float) -> float:
    """The gate function ``f`` applied to the gate projection."""
    v = kind.variant
    if v is Variant.SWIGLU:
        return silu(x)
    if v is Variant.SWIGLU_CLIP:
        return silu(min(x, kind.clip))
    if v is Variant.SILU:
        return sigmoid(x)
    if x <= 0:
        return silu(x)
    q, _, use_sig = _power_terms(v, kind.m, x)
    s = sigmoid(x) if use_sig else 1.0
    return math.exp(q * math.log(x)) * s


def gate_derivative(kind: ActivationKind, x: float) -> float:
    """Analytic ``f'``.

    At ``x = 0`` the power gates take the SiLU side (0.5). Their right-hand
    limit is 0 for ``m > 1``; the gate alone has a kink there.
    """
    v = kind.variant
    if v is Variant.SWIGLU:
        return silu_prime(x)
    if v is Variant.SWIGLU_CLIP:
        return silu_prime(x) if x <= kind.clip else 0.0
    if v is Variant.SILU:
        return sigmoid(x) * sigmoid(-x)
    if x <= 0:
        return silu_prime(x)
    q, r, use_sig = _power_terms(v, kind.m, x)
    lx = math.log(x)
    if use_sig:
        s = sigmoid(x)
        f = math.exp(q * lx) * s
        return _scaled_exp((q - 1.0) * lx, r) * s + f * sigmoid(-x)
    return _scaled_exp((q - 1.0) * lx, r)


def _swiglu_self(x: float) -> tuple[float, float]:
    return x * silu(x), silu(x) + x * silu_prime(x)


def eval_self(kind: ActivationKind, x: float) -> ScalarEval:
    """Value and derivative of the self-gated form ``x * f(x)``."""
    v = kind.variant
    branch = Branch.POSITIVE if x > 0 else Branch.NONPOSITIVE

    if v is Variant.SILU:
        return ScalarEval(silu(x), silu_prime(x), branch)

    if v is Variant.SWIGLU_CLIP:
        c = kind.clip
        lin = min(max(x, -c), c)
        dlin = 1.0 if -c <= x <= c else 0.0
        gx = min(x, c)
        gate = silu(gx)
        dgate = silu_prime(gx) if x <= c else 0.0
        return ScalarEval(lin * gate, dlin * gate + lin * dgate, branch)

    if v is Variant.SWIGLU or x <= 0:
        value, deriv = _swiglu_self(x)
        return ScalarEval(value, deriv, branch)

    q, r, use_sig = _power_terms(v, kind.m, x)
    lx = math.log(x)
    if use_sig:
        s = sigmoid(x)
        value = math.exp((1.0 + q) * lx) * s
        deriv = _scaled_exp(q * lx, 1.0 + r) * s + value * sigmoid(-x)
    else:
        value = math.exp((1.0 + q) * lx)
        deriv = _scaled_exp(q * lx, 1.0 + r)
    return ScalarEval(value, deriv, branch)


def eval_pair(kind: ActivationKind, x1: float, x2: float) -> float:
    """Pair-gated activation ``x1 * f(x2)`` as used inside the FFN."""
    if kind.variant is Variant.SWIGLU_CLIP:
        x1 = min(max(x1, -kind.clip), kind.clip)
    return x1 * gate_value(kind, x2)


def pair_backward(kind: ActivationKind, x1: float, x2: float, upstream: float) -> tuple[float, float]:
    """Chain rule through :func:`eval_pair`; returns ``(grad_x1, grad_x2)``."""
    if kind.variant is Variant.SWIGLU_CLIP:
        c = kind.clip
        dlin = 1.0 if -c <= x1 <= c else 0.0
        x1 = min(max(x1, -c), c)
    else:
        dlin = 1.0
    return upstream * gate_value(kind, x2) * dlin, upstream * x1 * gate_derivative(kind, x2)


# ---------------------------------------------------------------------------
# elementwise (numpy) versions used by the network
# ---------------------------------------------------------------------------


def sigmoid_array(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _silu_array(x):
    s = sigmoid_array(x)
    return x * s, s + x * s * sigmoid_array(-x)


def _power_terms_array(variant: Variant, m: float, x):
    lx = np.log(x)
    if variant is Variant.POWLU:
        t = np.sqrt(x)
        phi = t + 1.0 - t * np.log(t)
        return lx, m / (t + 1.0), m * phi / (t + 1.0) ** 2
    if variant is Variant.ABL_A:
        return lx, m / x, m * (1.0 - lx) / x
    return lx, m / (x + 1.0), m * (x + 1.0 - x * lx) / (x + 1.0) ** 2


def _scaled_exp_array(log_prefactor, factor):
    pre = np.exp(log_prefactor)
    with np.errstate(invalid="ignore"):
        return np.where(pre == 0.0, 0.0, pre * factor)


def gate_forward(kind: ActivationKind, x2):
    """Elementwise ``(f(x2), f'(x2))`` over an array."""
    x2 = np.asarray(x2, dtype=np.float64)
    v = kind.variant
    if v is Variant.SWIGLU:
        return _silu_array(x2)
    if v is Variant.SWIGLU_CLIP:
        f, df = _silu_array(np.minimum(x2, kind.clip))
        return f, np.where(x2 <= kind.clip, df, 0.0)
    if v is Variant.SILU:
        s = sigmoid_array(x2)
        return s, s * sigmoid_array(-x2)

    f = np.empty_like(x2)
    df = np.empty_like(x2)
    pos = x2 > 0
    f[~pos], df[~pos] = _silu_array(x2[~pos])
    xp = x2[pos]
    with np.errstate(over="ignore", divide="ignore"):
        lx, q, r = _power_terms_array(v, kind.m, xp)
        if v in _SIGMOID_POWER:
            s = sigmoid_array(xp)
            fp = np.exp(q * lx) * s
            f[pos] = fp
            df[pos] = _scaled_exp_array((q - 1.0) * lx, r) * s + fp * sigmoid_array(-xp)
        else:
            f[pos] = np.exp(q * lx)
            df[pos] = _scaled_exp_array((q - 1.0) * lx, r)
    return f, df


def pair_forward(kind: ActivationKind, x1, x2):
    """Elementwise pair activation; returns ``(out, cache)`` for :func:`pair_vjp`."""
    x1 = np.asarray(x1, dtype=np.float64)
    f, df = gate_forward(kind, x2)
    if kind.variant is Variant.SWIGLU_CLIP:
        c = kind.clip
        dlin = ((x1 >= -c) & (x1 <= c)).astype(np.float64)
        lin = np.clip(x1, -c, c)
    else:
        dlin = None
        lin = x1
    return lin * f, (lin, dlin, f, df)


def pair_vjp(cache, upstream):
    """Gradients ``(grad_x1, grad_x2)`` given the cache from :func:`pair_forward`."""
    lin, dlin, f, df = cache
    g1 = upstream * f
    if dlin is not None:
        g1 = g1 * dlin
    return g1, upstream * lin * df


def self_forward(kind: ActivationKind, x):
    """Elementwise self-gated values and derivatives, matching :func:`eval_self`."""
    x = np.asarray(x, dtype=np.float64)
    v = kind.variant
    if v is Variant.SILU:
        return _silu_array(x)
    if v is Variant.SWIGLU_CLIP:
        c = kind.clip
        lin = np.clip(x, -c, c)
        dlin = ((x >= -c) & (x <= c)).astype(np.float64)
        gate, dgate = _silu_array(np.minimum(x, c))
        dgate = np.where(x <= c, dgate, 0.0)
        return lin * gate, dlin * gate + lin * dgate
    s_val, s_der = _silu_array(x)
    value = x * s_val
    deriv = s_val + x * s_der
    if v is Variant.SWIGLU:
        return value, deriv
    pos = x > 0
    xp = x[pos]
    with np.errstate(over="ignore", divide="ignore"):
        lx, q, r = _power_terms_array(v, kind.m, xp)
        if v in _SIGMOID_POWER:
            s = sigmoid_array(xp)
            vp = np.exp((1.0 + q) * lx) * s
            value[pos] = vp
            deriv[pos] = _scaled_exp_array(q * lx, 1.0 + r) * s + vp * sigmoid_array(-xp)
        else:
            value[pos] = np.exp((1.0 + q) * lx)
            deriv[pos] = _scaled_exp_array(q * lx, 1.0 + r)
    return value, deriv
