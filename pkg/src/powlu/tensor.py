"""Dense matrices, gated FFN blocks, a top-1 MoE layer and Adam.

Matrices are plain 2-D ``float64`` numpy arrays. Products accumulate over
the inner dimension in increasing index order, so results are bitwise
reproducible regardless of the BLAS build.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activations import ActivationKind, pair_forward, pair_vjp


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A tensor picked up NaN or Inf; ``tag`` names the tensor."""

    def __init__(self, tag: str, step: Optional[int] = None):
        self.tag = tag
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite values in {tag}{where}")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(a: np.ndarray, tag: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NonFiniteError(tag)
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# gated FFN
# ---------------------------------------------------------------------------


@dataclass
class GluFfnBlock:
    """``y = (x1 * f(x2)) @ w_down`` with ``x1 = x @ w_up``, ``x2 = x @ w_gate``.

    ``gate_shift`` is a constant, non-trained offset on the gate
    pre-activation. It defaults to 0 and exists so tests can pin every gate
    input to the negative branch.
    """

    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    kind: ActivationKind
    gate_shift: float = 0.0

    def __post_init__(self):
        self.w_gate = as_matrix(self.w_gate, "w_gate")
        self.w_up = as_matrix(self.w_up, "w_up")
        self.w_down = as_matrix(self.w_down, "w_down")
        hidden, d_ff = self.w_gate.shape
        if self.w_up.shape != (hidden, d_ff) or self.w_down.shape != (d_ff, hidden):
            raise ShapeError(
                f"inconsistent block shapes: w_gate {self.w_gate.shape}, "
                f"w_up {self.w_up.shape}, w_down {self.w_down.shape}"
            )

    @classmethod
    def init(cls, rng, hidden: int, d_ff: int, kind: ActivationKind, gate_shift: float = 0.0) -> "GluFfnBlock":
        return cls(
            w_gate=uniform_init(rng, hidden, d_ff),
            w_up=uniform_init(rng, hidden, d_ff),
            w_down=uniform_init(rng, d_ff, hidden),
            kind=kind,
            gate_shift=gate_shift,
        )

    @property
    def hidden(self) -> int:
        return self.w_gate.shape[0]

    @property
    def d_ff(self) -> int:
        return self.w_gate.shape[1]

    def params(self) -> dict:
        return {"w_gate": self.w_gate, "w_up": self.w_up, "w_down": self.w_down}


@dataclass
class FfnCache:
    x: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    act: np.ndarray  # input to the down projection
    pair: tuple


@dataclass
class FfnGrads:
    grad_x: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    d_fc1: np.ndarray  # gradient at the fused [gate | up] projection output

    def params(self) -> dict:
        return {"w_gate": self.w_gate, "w_up": self.w_up, "w_down": self.w_down}


def ffn_forward(block: GluFfnBlock, x, tag: str = "ffn") -> tuple[np.ndarray, FfnCache]:
    x = as_matrix(x, "x")
    if x.shape[1] != block.hidden:
        raise ShapeError(f"input has {x.shape[1]} columns, block expects {block.hidden}")
    x1 = matmul(x, block.w_up)
    x2 = matmul(x, block.w_gate)
    if block.gate_shift:
        x2 = x2 + block.gate_shift
    act, pair = pair_forward(block.kind, x1, x2)
    check_finite(act, f"{tag}.fc2.fwd.x")
    y = check_finite(matmul(act, block.w_down), f"{tag}.y")
    return y, FfnCache(x=x, x1=x1, x2=x2, act=act, pair=pair)


def ffn_backward(block: GluFfnBlock, cache: FfnCache, upstream, tag: str = "ffn") -> FfnGrads:
    """Vector-Jacobian product of :func:`ffn_forward` for ``upstream = dL/dy``."""
    dy = as_matrix(upstream, "upstream")
    if dy.shape != (cache.x.shape[0], block.hidden):
        raise ShapeError(f"upstream shape {dy.shape} does not match output {(cache.x.shape[0], block.hidden)}")
    grad_w_down = matmul(cache.act.T, dy)
    d_act = matmul(dy, block.w_down.T)
    d_x1, d_x2 = pair_vjp(cache.pair, d_act)
    check_finite(d_x2, f"{tag}.fc1.bwd.dy")
    grad_w_up = matmul(cache.x.T, d_x1)
    grad_w_gate = matmul(cache.x.T, d_x2)
    grad_x = matmul(d_x1, block.w_up.T) + matmul(d_x2, block.w_gate.T)
    return FfnGrads(
        grad_x=check_finite(grad_x, f"{tag}.bwd.dx"),
        w_gate=grad_w_gate,
        w_up=grad_w_up,
        w_down=grad_w_down,
        d_fc1=np.hstack([d_x2, d_x1]),
    )


# ---------------------------------------------------------------------------
# top-1 mixture of experts
# ---------------------------------------------------------------------------


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MoeLayer:
    """Shared expert on every token plus one softmax-weighted routed expert."""

    experts: list
    shared_expert: GluFfnBlock
    router: np.ndarray

    def __post_init__(self):
        self.router = as_matrix(self.router, "router")
        if not self.experts:
            raise ValueError("MoeLayer needs at least one routed expert")
        hidden = self.shared_expert.hidden
        if self.router.shape != (hidden, len(self.experts)):
            raise ShapeError(f"router shape {self.router.shape}, expected {(hidden, len(self.experts))}")
        if any(e.hidden != hidden for e in self.experts):
            raise ShapeError("experts disagree on hidden size")

    @classmethod
    def init(cls, rng, hidden: int, d_ff: int, n_experts: int, kind: ActivationKind, gate_shift: float = 0.0) -> "MoeLayer":
        shared = GluFfnBlock.init(rng, hidden, d_ff, kind, gate_shift)
        experts = [GluFfnBlock.init(rng, hidden, d_ff, kind, gate_shift) for _ in range(n_experts)]
        return cls(experts=experts, shared_expert=shared, router=uniform_init(rng, hidden, n_experts))

    @property
    def hidden(self) -> int:
        return self.shared_expert.hidden

    def params(self) -> dict:
        out = {f"shared.{k}": v for k, v in self.shared_expert.params().items()}
        for j, e in enumerate(self.experts):
            out.update({f"expert{j}.{k}": v for k, v in e.params().items()})
        out["router"] = self.router
        return out


@dataclass
class MoeCache:
    x: np.ndarray
    probs: np.ndarray
    chosen: np.ndarray
    weight: np.ndarray
    shared: FfnCache
    experts: dict = field(default_factory=dict)  # j -> (token_idx, FfnCache, out)


def moe_forward(layer: MoeLayer, x, tag: str = "moe") -> tuple[np.ndarray, np.ndarray, MoeCache]:
    """Returns ``(y, chosen_expert_per_token, cache)``; ties go to the lowest index."""
    x = as_matrix(x, "x")
    if x.shape[1] != layer.hidden:
        raise ShapeError(f"input has {x.shape[1]} columns, layer expects {layer.hidden}")
    probs = softmax_rows(matmul(x, layer.router))
    chosen = np.argmax(probs, axis=1)
    weight = probs[np.arange(x.shape[0]), chosen]
    y, shared_cache = ffn_forward(layer.shared_expert, x, f"{tag}.shared")
    cache = MoeCache(x=x, probs=probs, chosen=chosen, weight=weight, shared=shared_cache)
    for j, expert in enumerate(layer.experts):
        idx = np.flatnonzero(chosen == j)
        if idx.size == 0:
            continue
        out, c = ffn_forward(expert, x[idx], f"{tag}.expert{j}")
        y[idx] += weight[idx, None] * out
        cache.experts[j] = (idx, c, out)
    return y, chosen, cache


@dataclass
class MoeGrads:
    grad_x: np.ndarray
    shared: FfnGrads
    experts: dict  # j -> FfnGrads, routed experts that saw tokens
    router: np.ndarray

    def params(self, layer: MoeLayer) -> dict:
        out = {f"shared.{k}": v for k, v in self.shared.params().items()}
        for j, e in enumerate(layer.experts):
            if j in self.experts:
                g = self.experts[j].params()
            else:
                g = {k: np.zeros_like(v) for k, v in e.params().items()}
            out.update({f"expert{j}.{k}": v for k, v in g.items()})
        out["router"] = self.router
        return out


def moe_backward(layer: MoeLayer, cache: MoeCache, upstream, tag: str = "moe") -> MoeGrads:
    dy = as_matrix(upstream, "upstream")
    n = cache.x.shape[0]
    shared = ffn_backward(layer.shared_expert, cache.shared, dy, f"{tag}.shared")
    grad_x = shared.grad_x.copy()
    d_weight = np.zeros(n)
    expert_grads = {}
    for j, (idx, c, out) in cache.experts.items():
        d_weight[idx] = np.einsum("ij,ij->i", dy[idx], out)
        g = ffn_backward(layer.experts[j], c, cache.weight[idx, None] * dy[idx], f"{tag}.expert{j}")
        grad_x[idx] += g.grad_x
        expert_grads[j] = g
    # weight = p[chosen]; dp_c/dlogit_k = p_c (delta_ck - p_k)
    onehot = np.zeros_like(cache.probs)
    onehot[np.arange(n), cache.chosen] = 1.0
    d_logits = (d_weight * cache.weight)[:, None] * (onehot - cache.probs)
    grad_router = matmul(cache.x.T, d_logits)
    grad_x += matmul(d_logits, layer.router.T)
    return MoeGrads(grad_x=check_finite(grad_x, f"{tag}.bwd.dx"), shared=shared, experts=expert_grads, router=grad_router)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, applied in place to the arrays in ``params``."""
    if set(params) != set(grads):
        raise ShapeError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        p, g = params[name], np.asarray(grads[name], dtype=np.float64)
        if p.shape != g.shape:
            raise ShapeError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# stacked network
# ---------------------------------------------------------------------------


class GluNetwork:
    """Stack of FFN or MoE layers with residual connections.

    ``readout`` is an optional final linear map for targets whose width
    differs from the hidden size.
    """

    def __init__(self, layers: list, residual: bool = True, readout: Optional[np.ndarray] = None):
        self.layers = list(layers)
        self.residual = residual
        self.readout = None if readout is None else as_matrix(readout, "readout")

    @classmethod
    def init(cls, rng, n_blocks: int, hidden: int, d_ff: int, kind: ActivationKind, n_experts: int = 0,
             gate_shift: float = 0.0, residual: bool = True, n_outputs: Optional[int] = None) -> "GluNetwork":
        layers = []
        for _ in range(n_blocks):
            if n_experts > 0:
                layers.append(MoeLayer.init(rng, hidden, d_ff, n_experts, kind, gate_shift))
            else:
                layers.append(GluFfnBlock.init(rng, hidden, d_ff, kind, gate_shift))
        readout = uniform_init(rng, hidden, n_outputs) if n_outputs is not None else None
        return cls(layers, residual=residual, readout=readout)

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update({f"block{i}.{k}": v for k, v in layer.params().items()})
        if self.readout is not None:
            out["readout"] = self.readout
        return out

    def forward(self, x):
        h = as_matrix(x, "x")
        caches = []
        for i, layer in enumerate(self.layers):
            tag = f"block{i}"
            if isinstance(layer, MoeLayer):
                out, chosen, cache = moe_forward(layer, h, tag)
            else:
                out, cache = ffn_forward(layer, h, tag)
            caches.append((h, cache))
            h = h + out if self.residual else out
        y = matmul(h, self.readout) if self.readout is not None else h
        return check_finite(y, "output"), (caches, h)

    def backward(self, state, dy):
        """Returns ``(param_grads, grad_x, fc1_grads)`` for upstream ``dy = dL/dy``.

        ``fc1_grads`` maps each FFN unit tag to the gradient arriving at its
        fused gate/up projection.
        """
        caches, h_last = state
        grads = {}
        fc1 = {}
        if self.readout is not None:
            grads["readout"] = matmul(h_last.T, dy)
            dh = matmul(dy, self.readout.T)
        else:
            dh = as_matrix(dy, "dy")
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            _, cache = caches[i]
            tag = f"block{i}"
            if isinstance(layer, MoeLayer):
                g = moe_backward(layer, cache, dh, tag)
                grads.update({f"{tag}.{k}": v for k, v in g.params(layer).items()})
                fc1[f"{tag}.shared"] = g.shared.d_fc1
                for j in sorted(g.experts):
                    fc1[f"{tag}.expert{j}"] = g.experts[j].d_fc1
            else:
                g = ffn_backward(layer, cache, dh, tag)
                grads.update({f"{tag}.{k}": v for k, v in g.params().items()})
                fc1[tag] = g.d_fc1
            dh = dh + g.grad_x if self.residual else g.grad_x
        return grads, dh, fc1

    @staticmethod
    def forward_taps(state) -> tuple[dict, dict]:
        """``(activations, routing)``: fc2 inputs per FFN unit and chosen experts per MoE block."""
        caches, _ = state
        acts, routing = {}, {}
        for i, (_, cache) in enumerate(caches):
            tag = f"block{i}"
            if isinstance(cache, MoeCache):
                acts[f"{tag}.shared"] = cache.shared.act
                for j, (_, c, _) in sorted(cache.experts.items()):
                    acts[f"{tag}.expert{j}"] = c.act
                routing[tag] = cache.chosen
            else:
                acts[tag] = cache.act
        return acts, routing
