"""Sequence regressor: optional dense input reducer, stacked bidirectional
LSTM layers, and a single output neuron, trained with the CCC-based loss via
exact backpropagation through time and Adam.

Parameter layout
----------------
Parameters live in an ordered name -> float64 array mapping. Gate weights
are stacked row-wise in the order [input, forget, cell, output], so a
layer/direction holds W (4U x in), R (4U x U) and b (4U,). The serialization
(topological) order is:

    norm.mean, norm.std,                  # input normalization (not trained)
    reducer.W, reducer.b,                 # only when the reducer is enabled
    lstm{k}.fwd.{W,R,b}, lstm{k}.bwd.{W,R,b}   for k = 0..L-1,
    out.w, out.b

Checkpoint file: magic "SERM" | u32 version | u32 length-prefixed canonical
config JSON | tensors as little-endian f32 in topological order | u32 CRC32
of all preceding bytes.
"""

from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .core import (
    FeatureMatrix,
    GoldTrack,
    NormStats,
    PredictionTrack,
    fit_norm_stats,
)
from .errors import FormatError, InvalidArgumentError, SchemaError
from .metrics import ccc_loss, ccc_loss_grad, concat_ccc

_CKPT_MAGIC = b"SERM"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    layer_units: tuple[int, ...] = (200, 64, 32, 32)
    reducer_dim: int | None = None
    output_tanh: bool = False
    grad_clip: float | None = None
    seed: int = 0
    feature_set: str = ""
    dimension: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layer_units", tuple(self.layer_units))
        if self.input_dim < 1:
            raise InvalidArgumentError("input_dim must be positive")
        if len(self.layer_units) < 1 or any(u < 1 for u in self.layer_units):
            raise InvalidArgumentError("layer_units must be positive and non-empty")
        if self.reducer_dim is not None and self.reducer_dim < 1:
            raise InvalidArgumentError("reducer_dim must be positive when set")


def config_to_json(config: ModelConfig) -> str:
    """Canonical (sorted, compact) JSON form used in checkpoints."""
    return json.dumps(
        {
            "input_dim": config.input_dim,
            "layer_units": list(config.layer_units),
            "reducer_dim": config.reducer_dim,
            "output_tanh": config.output_tanh,
            "grad_clip": config.grad_clip,
            "seed": config.seed,
            "feature_set": config.feature_set,
            "dimension": config.dimension,
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def config_from_json(text: str) -> ModelConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid config JSON: {exc}") from exc
    expected = {
        "input_dim",
        "layer_units",
        "reducer_dim",
        "output_tanh",
        "grad_clip",
        "seed",
        "feature_set",
        "dimension",
    }
    if not isinstance(raw, dict) or set(raw) != expected:
        raise FormatError("config JSON does not match the model schema")
    return ModelConfig(
        input_dim=raw["input_dim"],
        layer_units=tuple(raw["layer_units"]),
        reducer_dim=raw["reducer_dim"],
        output_tanh=raw["output_tanh"],
        grad_clip=raw["grad_clip"],
        seed=raw["seed"],
        feature_set=raw["feature_set"],
        dimension=raw["dimension"],
    )


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor shapes keyed by name, in topological (serialization) order."""
    shapes: dict[str, tuple[int, ...]] = {
        "norm.mean": (config.input_dim,),
        "norm.std": (config.input_dim,),
    }
    width = config.input_dim
    if config.reducer_dim is not None:
        shapes["reducer.W"] = (config.reducer_dim, config.input_dim)
        shapes["reducer.b"] = (config.reducer_dim,)
        width = config.reducer_dim
    for k, units in enumerate(config.layer_units):
        for direction in ("fwd", "bwd"):
            shapes[f"lstm{k}.{direction}.W"] = (4 * units, width)
            shapes[f"lstm{k}.{direction}.R"] = (4 * units, units)
            shapes[f"lstm{k}.{direction}.b"] = (4 * units,)
        width = 2 * units
    shapes["out.w"] = (width,)
    shapes["out.b"] = (1,)
    return shapes


@dataclass
class ModelParams:
    """Config plus named tensors; see the module docstring for the layout."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def trainable_names(self) -> list[str]:
        return [n for n in self.tensors if not n.startswith("norm.")]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: ModelConfig, norm: NormStats | None = None) -> ModelParams:
    """Deterministic Xavier-uniform initialization from a counter-based RNG.

    Weight matrices draw from U(-a, a) with a = sqrt(6 / (fan_in + fan_out))
    over the full stacked shape; biases start at zero except the forget-gate
    rows, which start at 1.0 to stabilize early backpropagation through time.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name == "norm.mean":
            tensors[name] = np.zeros(shape)
        elif name == "norm.std":
            tensors[name] = np.ones(shape)
        elif name.endswith(".b") or name == "out.b":
            tensors[name] = np.zeros(shape)
        elif name == "out.w":
            bound = np.sqrt(6.0 / (shape[0] + 1))
            tensors[name] = rng.uniform(-bound, bound, shape)
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-bound, bound, shape)
    for k, units in enumerate(config.layer_units):
        for direction in ("fwd", "bwd"):
            tensors[f"lstm{k}.{direction}.b"][units : 2 * units] = 1.0
    if norm is not None:
        if len(norm.mean) != config.input_dim:
            raise SchemaError(
                f"norm stats dimension {len(norm.mean)} does not match "
                f"input_dim {config.input_dim}"
            )
        tensors["norm.mean"] = np.asarray(norm.mean, dtype=np.float64).copy()
        tensors["norm.std"] = np.asarray(norm.std, dtype=np.float64).copy()
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _lstm_pass(x: np.ndarray, W: np.ndarray, R: np.ndarray, b: np.ndarray):
    """One direction's LSTM recurrence over pass time. Returns hidden states
    (T, U) and the activation caches needed for the backward pass."""
    T = x.shape[0]
    units = R.shape[1]
    pre = x @ W.T + b
    gi = np.empty((T, units))
    gf = np.empty((T, units))
    gg = np.empty((T, units))
    go = np.empty((T, units))
    cells = np.empty((T, units))
    tanh_c = np.empty((T, units))
    hs = np.empty((T, units))
    h = np.zeros(units)
    c = np.zeros(units)
    for t in range(T):
        z = pre[t] + R @ h
        i = expit(z[:units])
        f = expit(z[units : 2 * units])
        g = np.tanh(z[2 * units : 3 * units])
        o = expit(z[3 * units :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gi[t], gf[t], gg[t], go[t] = i, f, g, o
        cells[t] = c
        tanh_c[t] = tc
        hs[t] = h
    return hs, (gi, gf, gg, go, cells, tanh_c, hs)


def _lstm_pass_backward(x, W, R, dh_out, cache):
    """Reverse-time gradient accumulation for one direction's pass."""
    gi, gf, gg, go, cells, tanh_c, hs = cache
    T, units = hs.shape
    dZ = np.empty((T, 4 * units))
    dh_carry = np.zeros(units)
    dc_carry = np.zeros(units)
    for t in range(T - 1, -1, -1):
        dh = dh_out[t] + dh_carry
        do = dh * tanh_c[t]
        dc = dh * go[t] * (1.0 - tanh_c[t] ** 2) + dc_carry
        c_prev = cells[t - 1] if t > 0 else 0.0
        dZ[t, : units] = dc * gg[t] * gi[t] * (1.0 - gi[t])
        dZ[t, units : 2 * units] = dc * c_prev * gf[t] * (1.0 - gf[t])
        dZ[t, 2 * units : 3 * units] = dc * gi[t] * (1.0 - gg[t] ** 2)
        dZ[t, 3 * units :] = do * go[t] * (1.0 - go[t])
        dc_carry = dc * gf[t]
        dh_carry = R.T @ dZ[t]
    grad_W = dZ.T @ x
    grad_R = dZ[1:].T @ hs[:-1] if T > 1 else np.zeros_like(R)
    grad_b = dZ.sum(axis=0)
    dx = dZ @ W
    return grad_W, grad_R, grad_b, dx


def _forward_cached(params: ModelParams, rows: np.ndarray):
    cfg = params.config
    ten = params.tensors
    x = (rows - ten["norm.mean"]) / ten["norm.std"]
    caches: dict = {"x0": x}
    if cfg.reducer_dim is not None:
        a = np.tanh(x @ ten["reducer.W"].T + ten["reducer.b"])
        caches["reducer_out"] = a
        x = a
    layer_inputs = []
    layer_caches = []
    for k in range(len(cfg.layer_units)):
        layer_inputs.append(x)
        h_f, cache_f = _lstm_pass(
            x, ten[f"lstm{k}.fwd.W"], ten[f"lstm{k}.fwd.R"], ten[f"lstm{k}.fwd.b"]
        )
        h_b_rev, cache_b = _lstm_pass(
            x[::-1], ten[f"lstm{k}.bwd.W"], ten[f"lstm{k}.bwd.R"], ten[f"lstm{k}.bwd.b"]
        )
        x = np.concatenate([h_f, h_b_rev[::-1]], axis=1)
        layer_caches.append((cache_f, cache_b))
    caches["layer_inputs"] = layer_inputs
    caches["layer_caches"] = layer_caches
    caches["top"] = x
    y = x @ ten["out.w"] + ten["out.b"][0]
    if cfg.output_tanh:
        caches["pre_tanh_y"] = y
        y = np.tanh(y)
    return y, caches


def forward(params: ModelParams, features: FeatureMatrix) -> PredictionTrack:
    """Predict one scalar per emotional segment."""
    if features.dim != params.config.input_dim:
        raise SchemaError(
            f"feature dimension {features.dim} does not match model input_dim "
            f"{params.config.input_dim}"
        )
    y, _ = _forward_cached(params, features.rows)
    source = params.config.feature_set or "model"
    return PredictionTrack(features.timeline.conversation_id, y, source)


def _backward_from_cache(params: ModelParams, caches, dy: np.ndarray):
    cfg = params.config
    ten = params.tensors
    grads: dict[str, np.ndarray] = {}
    if cfg.output_tanh:
        dy = dy * (1.0 - np.tanh(caches["pre_tanh_y"]) ** 2)
    top = caches["top"]
    grads["out.w"] = top.T @ dy
    grads["out.b"] = np.array([dy.sum()])
    dh = dy[:, None] * ten["out.w"][None, :]
    for k in range(len(cfg.layer_units) - 1, -1, -1):
        units = cfg.layer_units[k]
        x = caches["layer_inputs"][k]
        cache_f, cache_b = caches["layer_caches"][k]
        gWf, gRf, gbf, dx_f = _lstm_pass_backward(
            x, ten[f"lstm{k}.fwd.W"], ten[f"lstm{k}.fwd.R"], dh[:, :units], cache_f
        )
        gWb, gRb, gbb, dx_b = _lstm_pass_backward(
            x[::-1],
            ten[f"lstm{k}.bwd.W"],
            ten[f"lstm{k}.bwd.R"],
            dh[:, units:][::-1],
            cache_b,
        )
        grads[f"lstm{k}.fwd.W"] = gWf
        grads[f"lstm{k}.fwd.R"] = gRf
        grads[f"lstm{k}.fwd.b"] = gbf
        grads[f"lstm{k}.bwd.W"] = gWb
        grads[f"lstm{k}.bwd.R"] = gRb
        grads[f"lstm{k}.bwd.b"] = gbb
        dh = dx_f + dx_b[::-1]
    if cfg.reducer_dim is not None:
        a = caches["reducer_out"]
        dz = dh * (1.0 - a**2)
        grads["reducer.W"] = dz.T @ caches["x0"]
        grads["reducer.b"] = dz.sum(axis=0)
    # Emit in topological order so downstream consumers can iterate stably.
    return {n: grads[n] for n in params.tensors if n in grads}


def _loss_and_grads(params: ModelParams, features: FeatureMatrix, gold: GoldTrack):
    if len(gold.values) != features.timeline.n_segments:
        raise SchemaError(
            f"gold length {len(gold.values)} does not match timeline "
            f"({features.timeline.n_segments} segments)"
        )
    if features.timeline.n_segments < 2:
        raise InvalidArgumentError("training needs at least 2 segments (CCC)")
    y, caches = _forward_cached(params, features.rows)
    loss = ccc_loss(y, gold.values)
    dy = ccc_loss_grad(y, gold.values)
    return loss, _backward_from_cache(params, caches, dy)


def backward(
    params: ModelParams, features: FeatureMatrix, gold: GoldTrack
) -> dict[str, np.ndarray]:
    """Exact gradient of ``1 - ccc(forward(features), gold)`` for every
    trainable parameter, in topological order."""
    if features.dim != params.config.input_dim:
        raise SchemaError(
            f"feature dimension {features.dim} does not match model input_dim "
            f"{params.config.input_dim}"
        )
    _, grads = _loss_and_grads(params, features, gold)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptimState:
    """Adam accumulators; hyperparameter defaults follow the training recipe."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optim_state(params: ModelParams, lr: float = 0.001) -> OptimState:
    state = OptimState(lr=lr)
    for name in params.trainable_names():
        state.m[name] = np.zeros_like(params.tensors[name])
        state.v[name] = np.zeros_like(params.tensors[name])
    return state


def adam_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: OptimState
) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name in params.trainable_names():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params.tensors[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 500
    batch_size: int = 15
    learning_rate: float = 0.001
    seed: int = 0


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_ccc: float
    wall_s: float


@dataclass(frozen=True)
class TrainRecord:
    epochs: tuple[EpochStats, ...]
    best_epoch: int


@dataclass(frozen=True)
class TrainResult:
    best: "ModelParams"
    last: "ModelParams"
    record: TrainRecord


def write_history_csv(record: TrainRecord, path: str | Path) -> None:
    """Per-epoch history. Wall time is deliberately omitted so identical
    runs produce byte-identical files."""
    lines = ["epoch,train_loss,dev_ccc"]
    lines += [
        f"{e.epoch},{float(e.train_loss)!r},{float(e.dev_ccc)!r}"
        for e in record.epochs
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def dev_concat_ccc(
    params: ModelParams, dev_data: Sequence[tuple[FeatureMatrix, GoldTrack]]
) -> float:
    preds = [forward(params, fm).values for fm, _ in dev_data]
    golds = [gold.values for _, gold in dev_data]
    return concat_ccc(preds, golds)


def train(
    train_data: Sequence[tuple[FeatureMatrix, GoldTrack]],
    dev_data: Sequence[tuple[FeatureMatrix, GoldTrack]],
    config: ModelConfig,
    settings: TrainSettings = TrainSettings(),
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train on whole conversations and return the best dev checkpoint.

    Epochs iterate seeded shuffles of the train conversations in batches of
    up to ``batch_size``; each conversation is processed at full length (no
    padding or truncation) and the batch gradient is the mean of the
    per-conversation gradients, followed by one Adam step. After every epoch
    the concatenated dev CCC is recorded; the returned parameters are the
    checkpoint with the best dev CCC (earliest epoch on ties).
    """
    if len(train_data) == 0 or len(dev_data) == 0:
        raise InvalidArgumentError("train and dev subsets must be non-empty")
    norm = fit_norm_stats([fm for fm, _ in train_data])
    params = init_params(config, norm)
    state = init_optim_state(params, lr=settings.learning_rate)
    shuffle_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((settings.seed, 0x5E9)))
    )

    best_params = params.copy()
    best_ccc = -np.inf
    best_epoch = -1
    history: list[EpochStats] = []
    n = len(train_data)
    for epoch in range(settings.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        conv_losses: list[float] = []
        for lo in range(0, n, settings.batch_size):
            batch = order[lo : lo + settings.batch_size]
            grad_sum: dict[str, np.ndarray] | None = None
            for idx in batch:
                fm, gold = train_data[idx]
                loss, grads = _loss_and_grads(params, fm, gold)
                conv_losses.append(loss)
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for name, g in grads.items():
                        grad_sum[name] += g
            assert grad_sum is not None
            for g in grad_sum.values():
                g /= len(batch)
            if config.grad_clip is not None:
                _clip_grads(grad_sum, config.grad_clip)
            adam_step(params, grad_sum, state)
        train_loss = float(np.mean(conv_losses))
        dev_ccc = dev_concat_ccc(params, dev_data)
        wall = time.perf_counter() - t0
        history.append(EpochStats(epoch, train_loss, dev_ccc, wall))
        if dev_ccc > best_ccc:
            best_ccc = dev_ccc
            best_epoch = epoch
            best_params = params.copy()
        if log is not None:
            log(
                f"epoch {epoch}: train_loss={train_loss:.4f} "
                f"dev_ccc={dev_ccc:.4f} ({wall:.2f}s)"
            )
    return TrainResult(best_params, params, TrainRecord(tuple(history), best_epoch))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    cfg = config_to_json(params.config).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(cfg)), cfg]
    for name, shape in param_shapes(params.config).items():
        tensor = params.tensors[name]
        if tensor.shape != shape:
            raise SchemaError(f"tensor {name} has shape {tensor.shape}, not {shape}")
        parts.append(tensor.astype("<f4").tobytes())
    blob = b"".join(parts)
    Path(path).write_bytes(blob + struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(
    path: str | Path, expect_config: ModelConfig | None = None
) -> ModelParams:
    """Load a checkpoint; tensors come back as float64 copies of the stored
    f32 values. With ``expect_config`` the stored config must match exactly."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, cfg_len = struct.unpack_from("<II", data, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(data) < 12 + cfg_len + 4:
        raise FormatError(f"{path}: truncated checkpoint")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored_crc:
        raise FormatError(f"{path}: CRC mismatch, checkpoint is corrupt")
    try:
        config = config_from_json(data[12 : 12 + cfg_len].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: config block is not valid UTF-8") from exc
    shapes = param_shapes(config)
    n_values = sum(int(np.prod(s)) for s in shapes.values())
    expected = 12 + cfg_len + 4 * n_values + 4
    if len(data) != expected:
        raise FormatError(
            f"{path}: checkpoint is {len(data)} bytes, expected {expected}"
        )
    if expect_config is not None and config != expect_config:
        raise FormatError(
            f"{path}: checkpoint config does not match the requested config"
        )
    tensors: dict[str, np.ndarray] = {}
    off = 12 + cfg_len
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        values = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        tensors[name] = values.astype(np.float64).reshape(shape)
        off += 4 * count
    return ModelParams(config, tensors)
