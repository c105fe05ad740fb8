"""Desk-scale training harness for comparing activations on synthetic regression.

Each run is fully determined by its :class:`TrainConfig`. Data, weight init
and the held-out evaluation set come from independent seeded streams, so two
configs that differ only in the activation see identical data and start from
identical weights.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import instrumentation as inst
from .activations import DEFAULT_CLIP, DEFAULT_M, ActivationKind, Variant
from .tensor import AdamState, GluNetwork, NonFiniteError, adam_step

logger = logging.getLogger(__name__)

TASKS = ("regression", "heavy_tail_regression")
EVAL_SIZE = 256
HISTORY_HEADER = ("step", "loss", "grad_norm")


class TrainingAborted(RuntimeError):
    def __init__(self, tag: str, step: int):
        self.tag = tag
        self.step = step
        super().__init__(f"training aborted: non-finite values in {tag} at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    n_blocks: int = 2
    hidden: int = 32
    d_ff: int = 64
    n_experts: int = 0
    kind: str = "powlu"
    m: float = DEFAULT_M
    clip: float = DEFAULT_CLIP
    lr: float = 1e-3
    batch: int = 32
    steps: int = 500
    task: str = "regression"
    record_every: int = 10
    gate_shift: float = 0.0

    def __post_init__(self):
        for name in ("n_blocks", "hidden", "d_ff", "batch", "record_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_experts < 0:
            raise ValueError(f"n_experts must be >= 0, got {self.n_experts}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        self.activation()  # validates kind/m/clip

    def activation(self) -> ActivationKind:
        return ActivationKind.parse(self.kind, m=self.m, clip=self.clip)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    # flat key = value text format
    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def loads(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            conv = {"int": int, "float": float, "str": str}[types[key]]
            values[key] = conv(value)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.loads(fh.read())


@dataclass
class TrainRun:
    config: TrainConfig
    history: list = field(default_factory=list)  # (step, loss, grad_norm)
    log: inst.InstrumentLog = field(default_factory=inst.InstrumentLog)
    routing_counts: list = field(default_factory=list)  # (step, block_tag, counts per expert)

    @property
    def initial_loss(self) -> float:
        return self.history[0][1]

    @property
    def final_loss(self) -> float:
        return self.history[-1][1]


def _target_map(seed: int, hidden: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    return rng.normal(scale=1.0 / math.sqrt(hidden), size=(hidden, hidden))


def _draw(task: str, rng: np.random.Generator, n: int, hidden: int) -> np.ndarray:
    if task == "regression":
        return rng.standard_normal((n, hidden))
    return 2.0 * rng.standard_t(3.0, size=(n, hidden))


def _targets(x: np.ndarray, amap: np.ndarray) -> np.ndarray:
    return x @ amap + np.sin(x)


def make_task(task: str, seed: int, batch: int, hidden: int):
    """Endless generator of ``(inputs, targets)`` batches.

    ``regression`` draws standard-normal inputs; ``heavy_tail_regression``
    draws Student-t(3) inputs scaled by 2. Targets are a fixed random linear
    map of the inputs plus ``sin`` of the inputs.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    amap = _target_map(seed, hidden)
    rng = np.random.default_rng([seed, 2])
    while True:
        x = _draw(task, rng, batch, hidden)
        yield x, _targets(x, amap)


def eval_set(task: str, seed: int, hidden: int, n: int = EVAL_SIZE):
    x = _draw(task, np.random.default_rng([seed, 3]), n, hidden)
    return x, _targets(x, _target_map(seed, hidden))


def build_network(config: TrainConfig, n_outputs=None) -> GluNetwork:
    return GluNetwork.init(
        np.random.default_rng([config.seed, 0]),
        n_blocks=config.n_blocks,
        hidden=config.hidden,
        d_ff=config.d_ff,
        kind=config.activation(),
        n_experts=config.n_experts,
        gate_shift=config.gate_shift,
        n_outputs=n_outputs,
    )


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _record(run: TrainRun, step: int, acts: dict, fc1: dict, routing: dict) -> None:
    for unit in sorted(acts):
        run.log.record(f"{unit}.{inst.FWD_ROLE}", step, acts[unit])
    for unit in sorted(fc1):
        run.log.record(f"{unit}.{inst.BWD_ROLE}", step, fc1[unit])
    for block in sorted(routing):
        counts = np.bincount(routing[block], minlength=run.config.n_experts)
        run.routing_counts.append((step, block, tuple(int(c) for c in counts)))


def fit_network(net: GluNetwork, batches, config: TrainConfig, evaluation=None, run: TrainRun = None) -> TrainRun:
    """Adam/MSE loop shared by :func:`train` and the scikit-learn estimator.

    History row ``k`` holds the evaluation loss after ``k`` updates and the
    gradient norm on the ``k``-th training batch; updates are applied for
    ``k < steps`` only.
    """
    run = run if run is not None else TrainRun(config)
    state = AdamState()
    params = net.params()
    for step in range(config.steps + 1):
        x, target = next(batches)
        try:
            pred, fwd = net.forward(x)
            loss, dy = mse(pred, target)
            if not math.isfinite(loss):
                raise NonFiniteError("loss")
            grads, _, fc1 = net.backward(fwd, dy)
            grad_norm = math.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))
            if not math.isfinite(grad_norm):
                raise NonFiniteError("grad_norm")
            if evaluation is not None:
                eval_loss, _ = mse(net.forward(evaluation[0])[0], evaluation[1])
                if not math.isfinite(eval_loss):
                    raise NonFiniteError("eval_loss")
            else:
                eval_loss = loss
        except NonFiniteError as exc:
            logger.error("non-finite tensor %s at step %d", exc.tag, step)
            raise TrainingAborted(exc.tag, step) from exc
        run.history.append((step, eval_loss, grad_norm))
        if step % config.record_every == 0:
            acts, routing = net.forward_taps(fwd)
            _record(run, step, acts, fc1, routing)
        if step < config.steps:
            adam_step(params, grads, state, lr=config.lr)
    return run


def train(config: TrainConfig) -> TrainRun:
    net = build_network(config)
    batches = make_task(config.task, config.seed, config.batch, config.hidden)
    evaluation = eval_set(config.task, config.seed, config.hidden)
    run = fit_network(net, batches, config, evaluation)
    logger.info("%s: loss %.6g -> %.6g", config.activation().label, run.initial_loss, run.final_loss)
    return run


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

_VARIANT_FIELDS = {"kind", "m", "clip"}


def _shared_fields(config: TrainConfig) -> dict:
    return {k: v for k, v in dataclasses.asdict(config).items() if k not in _VARIANT_FIELDS}


def peak_forward_max(run: TrainRun) -> float:
    """Largest ``max`` field over the forward post-activation bands."""
    return max((b.max for b in run.log.bands if b.tag.endswith(inst.FWD_ROLE)), default=float("nan"))


def peak_abs_activation(run: TrainRun) -> float:
    return max((max(abs(b.min), abs(b.max)) for b in run.log.bands if b.tag.endswith(inst.FWD_ROLE)),
               default=float("nan"))


def peak_saturation(run: TrainRun, fmt: str = "E4M3") -> float:
    return max((s.saturated_fraction for s in run.log.saturation if s.format == fmt), default=0.0)


COMPARISON_HEADER = ("label", "final_loss", "loss_delta", "initial_loss", "peak_abs_activation",
                     "peak_fwd_max", "peak_e4m3_saturation")


def compare_runs(runs) -> list:
    """One row per run; ``loss_delta`` is relative to the first run."""
    runs = list(runs)
    if not runs:
        raise ValueError("compare_runs needs at least one run")
    base = _shared_fields(runs[0].config)
    for r in runs[1:]:
        other = _shared_fields(r.config)
        if other != base:
            diff = sorted(k for k in base if base[k] != other[k])
            raise ValueError(f"runs differ in more than the activation: {diff}")
    ref = runs[0].final_loss
    return [
        {
            "label": r.config.activation().label,
            "final_loss": r.final_loss,
            "loss_delta": r.final_loss - ref,
            "initial_loss": r.initial_loss,
            "peak_abs_activation": peak_abs_activation(r),
            "peak_fwd_max": peak_forward_max(r),
            "peak_e4m3_saturation": peak_saturation(r, "E4M3"),
        }
        for r in runs
    ]


def sweep_configs(base: TrainConfig, m_values=(2.0, 3.0, 4.0)) -> list:
    """SwiGLU baseline followed by PowLU at each ``m``."""
    return [base.replace(kind="swiglu")] + [base.replace(kind="powlu", m=float(m)) for m in m_values]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

RUN_FILES = ("config.txt", "history.csv", "bands.csv", "channels.csv", "saturation.csv")


def export_history(history, path) -> None:
    inst._write_csv(path, HISTORY_HEADER, history)


def load_history(path) -> list:
    return [(int(s), float(l), float(g)) for s, l, g in inst._read_csv(path, HISTORY_HEADER)]


def save_run(run: TrainRun, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(run.config.dumps())
    export_history(run.history, os.path.join(out_dir, "history.csv"))
    inst.export_bands(run.log.bands, os.path.join(out_dir, "bands.csv"))
    inst.export_channels(run.log.channels, os.path.join(out_dir, "channels.csv"))
    inst.export_saturation(run.log.saturation, os.path.join(out_dir, "saturation.csv"))
    summary = {
        "label": run.config.activation().label,
        "initial_loss": run.initial_loss,
        "final_loss": run.final_loss,
        "peak_abs_activation": peak_abs_activation(run),
        "peak_e4m3_saturation": peak_saturation(run, "E4M3"),
        "routing_counts": [[s, b, list(c)] for s, b, c in run.routing_counts],
    }
    if run.config.activation().variant is Variant.SWIGLU_CLIP:
        summary["clip_mode"] = "gate input capped before SiLU, linear input clamped to [-clip, clip]"
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_run(run_dir) -> TrainRun:
    """Rebuild a :class:`TrainRun` from the files written by :func:`save_run`."""
    for name in RUN_FILES:
        path = os.path.join(run_dir, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing file: {path}")
    run = TrainRun(TrainConfig.load(os.path.join(run_dir, "config.txt")))
    run.history = load_history(os.path.join(run_dir, "history.csv"))
    run.log.bands = inst.load_bands(os.path.join(run_dir, "bands.csv"))
    run.log.channels = inst.load_channels(os.path.join(run_dir, "channels.csv"))
    run.log.saturation = inst.load_saturation(os.path.join(run_dir, "saturation.csv"))
    return run
