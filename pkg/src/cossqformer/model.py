"""Transformer forecaster over daily feature windows.

Each block is post-norm: ``h = LN(h + MHA(h))`` then ``h = LN(h + FF(h))``.
The prediction is a linear readout of the last position. Inputs and targets
are standardized with statistics from the training windows; ``forward`` and
``predict`` work in data units.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Sequence

import numpy as np

from . import numkit as nk
from .attention import AttentionConfig, Variant, attend, mean_head_attention_map
from .data import FEATURES, SeriesWindow
from .losses import LossConfig, hybrid_loss
from .numkit import ComputationTape, NonFiniteError, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CSQF"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 7
    n_features: int = len(FEATURES) + 1
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 3
    d_ff: int = 64
    attention: AttentionConfig = AttentionConfig(Variant.COS_SQUARE, causal=True)
    attention_form: str = "linear"
    seed: int = 42
    # append a constant 1 to every head's query and key so each query scores
    # each allowed key at least w(i, j) > 0; without it a head whose ReLU'd
    # query is all zero outputs nothing for that position and gets no gradient
    unit_feature: bool = True

    def __post_init__(self):
        for name in ("seq_len", "n_features", "d_model", "n_heads", "n_layers", "d_ff"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.attention_form not in ("linear", "direct"):
            raise ConfigError(f"attention_form must be 'linear' or 'direct', got {self.attention_form!r}")
        if self.attention.horizon_M is not None and self.attention.horizon_M < self.seq_len:
            raise ConfigError(f"horizon_M={self.attention.horizon_M} < seq_len={self.seq_len}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["attention"]["variant"] = self.attention.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["attention"] = AttentionConfig(**d["attention"])
        return cls(**d)


@dataclass
class Scaler:
    """Column means/stds for the input matrix plus target mean/std.

    The previous-day pollutant column shares the target's statistics.
    """

    mean: np.ndarray
    std: np.ndarray
    target_mean: float
    target_std: float

    @classmethod
    def fit(cls, windows: Sequence[SeriesWindow]) -> "Scaler":
        if not windows:
            raise TrainingError("cannot fit a scaler on zero windows")
        rows = np.concatenate([w.features for w in windows])
        targets = np.array([w.target for w in windows])
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        t_mean = float(targets.mean())
        t_std = float(targets.std())
        if t_std <= 0:
            t_std = 1.0
        mean[-1], std[-1] = t_mean, t_std
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std, t_mean, t_std)

    def inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def target(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def untarget(self, z):
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mean"]), np.array(d["std"]), d["target_mean"], d["target_std"])


@dataclass
class ForecastModel:
    config: ModelConfig
    params: "OrderedDict[str, Tensor]"
    scaler: Optional[Scaler] = None
    pollutant: Optional[str] = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def clone(self) -> "ForecastModel":
        params = OrderedDict((k, Tensor(v.data, requires_grad=True)) for k, v in self.params.items())
        return ForecastModel(self.config, params, self.scaler, self.pollutant)


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, tuple]":
    """Declaration order of every parameter and its shape."""
    d, f, ff = config.d_model, config.n_features, config.d_ff
    shapes = OrderedDict()
    shapes["input.weight"] = (f, d)
    shapes["input.bias"] = (d,)
    shapes["pos_embedding"] = (config.seq_len, d)
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"w{proj}"] = (d, d)
            shapes[p + f"b{proj}"] = (d,)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ff1.weight"] = (d, ff)
        shapes[p + "ff1.bias"] = (ff,)
        shapes[p + "ff2.weight"] = (ff, d)
        shapes[p + "ff2.bias"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    shapes["head.weight"] = (d, 1)
    shapes["head.bias"] = (1,)
    return shapes


def _fan_in(name: str, shapes: dict) -> int:
    if name == "pos_embedding":
        return shapes[name][1]
    prefix, leaf = name.rsplit(".", 1)
    if leaf == "bias":
        return shapes[prefix + ".weight"][0]
    if leaf in ("bq", "bk", "bv", "bo"):
        return shapes[prefix + ".w" + leaf[1]][0]
    return shapes[name][0]


def build_model(config: ModelConfig) -> ForecastModel:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; layer-norm gains 1, offsets 0."""
    rng = np.random.default_rng(config.seed)
    shapes = parameter_shapes(config)
    params = OrderedDict()
    for name, shape in shapes.items():
        if ".ln" in name:
            value = np.ones(shape) if name.endswith("gain") else np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shapes))
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return ForecastModel(config, params)


def _split_heads(x: Tensor, batch: int, seq: int, heads: int) -> Tensor:
    dh = x.shape[1] // heads
    x = nk.reshape(x, (batch, seq, heads, dh))
    x = nk.permute(x, (0, 2, 1, 3))
    return nk.reshape(x, (batch * heads, seq, dh))


def _with_unit(x: Tensor) -> Tensor:
    return nk.concat([x, Tensor.wrap(np.ones(x.shape[:-1] + (1,)))], axis=-1)


def _merge_heads(x: Tensor, batch: int, seq: int, heads: int) -> Tensor:
    dh = x.shape[2]
    x = nk.reshape(x, (batch, heads, seq, dh))
    x = nk.permute(x, (0, 2, 1, 3))
    return nk.reshape(x, (batch * seq, heads * dh))


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return nk.add_row(nk.matmul(x, w), b)


def forward_batch(model: ForecastModel, x_std: np.ndarray, form: Optional[str] = None, return_maps: bool = False):
    """Standardized ``(B, seq_len, n_features)`` inputs -> standardized predictions ``(B,)``.

    With ``return_maps`` the second result lists, per layer, an array of
    shape ``(B, n_heads, seq_len, seq_len)`` (``None`` for streaming layers).
    """
    cfg = model.config
    x_std = np.asarray(x_std, dtype=np.float64)
    if x_std.ndim != 3 or x_std.shape[1:] != (cfg.seq_len, cfg.n_features):
        raise nk.ShapeError(
            f"expected windows of shape (B, {cfg.seq_len}, {cfg.n_features}), got {x_std.shape}"
        )
    form = cfg.attention_form if form is None else form
    P = model.params
    B, L, H, D = x_std.shape[0], cfg.seq_len, cfg.n_heads, cfg.d_model
    x = Tensor.wrap(x_std.reshape(B * L, cfg.n_features).copy())
    h = _linear(x, P["input.weight"], P["input.bias"])
    h = nk.reshape(nk.add_row(nk.reshape(h, (B, L * D)), nk.reshape(P["pos_embedding"], (L * D,))), (B * L, D))
    maps = []
    for layer in range(cfg.n_layers):
        p = f"layers.{layer}."
        q = _split_heads(_linear(h, P[p + "wq"], P[p + "bq"]), B, L, H)
        k = _split_heads(_linear(h, P[p + "wk"], P[p + "bk"]), B, L, H)
        v = _split_heads(_linear(h, P[p + "wv"], P[p + "bv"]), B, L, H)
        if cfg.unit_feature:
            q, k = _with_unit(q), _with_unit(k)
        att = attend(q, k, v, cfg.attention, form)
        if return_maps:
            maps.append(None if att.weights is None else att.weights.data.reshape(B, H, L, L))
        a = _linear(_merge_heads(att.output, B, L, H), P[p + "wo"], P[p + "bo"])
        h = nk.layer_norm(nk.add(h, a), P[p + "ln1.gain"], P[p + "ln1.bias"])
        f = _linear(nk.relu(_linear(h, P[p + "ff1.weight"], P[p + "ff1.bias"])), P[p + "ff2.weight"], P[p + "ff2.bias"])
        h = nk.layer_norm(nk.add(h, f), P[p + "ln2.gain"], P[p + "ln2.bias"])
    last = nk.take(h, np.arange(B) * L + (L - 1))
    out = nk.reshape(_linear(last, P["head.weight"], P["head.bias"]), (B,))
    return (out, maps) if return_maps else out


def _stack(model: ForecastModel, windows: Sequence) -> np.ndarray:
    mats = np.stack([w.features if isinstance(w, SeriesWindow) else np.asarray(w, dtype=np.float64) for w in windows])
    return model.scaler.inputs(mats) if model.scaler is not None else mats


def predict(model: ForecastModel, windows: Sequence, form: Optional[str] = None, batch_size: int = 256) -> np.ndarray:
    """Predictions in data units for a list of windows (or raw matrices)."""
    out = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        z = forward_batch(model, _stack(model, chunk), form).data
        out.append(model.scaler.untarget(z) if model.scaler is not None else z.copy())
    return np.concatenate(out) if out else np.zeros(0)


def forward(model: ForecastModel, window, form: Optional[str] = None, return_maps: bool = False):
    """Single-window prediction; optionally also per-layer ``(n_heads, L, L)`` maps."""
    x = _stack(model, [window])
    if return_maps:
        z, maps = forward_batch(model, x, form, return_maps=True)
    else:
        z = forward_batch(model, x, form)
    value = float(model.scaler.untarget(z.data)[0]) if model.scaler is not None else float(z.data[0])
    if return_maps:
        return value, [None if m is None else m[0] for m in maps]
    return value


def head_attention_maps(model: ForecastModel, window, layer: int) -> list:
    """Per-head row-normalized attention matrices at ``layer`` (direct form)."""
    cfg = model.config
    if not 0 <= layer < cfg.n_layers:
        raise IndexError(f"layer {layer} out of range for {cfg.n_layers} layers")
    _, maps = forward(model, window, form="direct", return_maps=True)
    return [Tensor(m) for m in maps[layer]]


def extract_attention(model: ForecastModel, window, layer: int) -> Tensor:
    """Mean-over-heads attention matrix of one layer for one window."""
    return mean_head_attention_map(head_attention_maps(model, window, layer))


@dataclass(frozen=True)
class BatchSpec:
    """Windows are grouped into per-city runs of ``segment_len`` consecutive days
    (the soft-DTW term compares those short series); ``segments_per_batch``
    of them make one optimizer step."""

    segment_len: int = 8
    segments_per_batch: int = 4

    def __post_init__(self):
        if self.segment_len < 1 or self.segments_per_batch < 1:
            raise ValueError("segment_len and segments_per_batch must be positive")


@dataclass
class TrainReport:
    epoch_losses: list
    seed: int
    seconds: float
    val_rmse: dict = field(default_factory=dict)
    val_mape: dict = field(default_factory=dict)

    def comparable(self) -> dict:
        """Everything except wall-clock time."""
        return {
            "epoch_losses": list(self.epoch_losses),
            "seed": self.seed,
            "val_rmse": dict(self.val_rmse),
            "val_mape": dict(self.val_mape),
        }


def make_segments(windows: Sequence[SeriesWindow], segment_len: int) -> list:
    """Index lists of consecutive-day windows per city, chunked to ``segment_len``.

    A trailing chunk of one window joins the chunk before it.
    """
    order = sorted(range(len(windows)), key=lambda i: (windows[i].city, windows[i].end_date))
    runs, run = [], []
    for i in order:
        if run:
            prev = windows[run[-1]]
            cur = windows[i]
            if cur.city != prev.city or (cur.end_date - prev.end_date).days != 1:
                runs.append(run)
                run = []
        run.append(i)
    if run:
        runs.append(run)
    segments = []
    for run in runs:
        chunks = [run[s : s + segment_len] for s in range(0, len(run), segment_len)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            tail = chunks.pop()
            chunks[-1] = chunks[-1] + tail
        segments.extend(chunks)
    return segments


class Adam:
    """Bias-corrected first/second moment step scaling."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: "OrderedDict[str, Tensor]") -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            params[name] = Tensor.wrap(p.data - update, requires_grad=True)


def batch_loss(model: ForecastModel, windows: Sequence[SeriesWindow], segments: Sequence[Sequence[int]], loss_config: LossConfig) -> Tensor:
    """Mean hybrid loss over the segments, in standardized units."""
    flat = [i for seg in segments for i in seg]
    x = _stack(model, [windows[i] for i in flat])
    pred = forward_batch(model, x)
    total = None
    start = 0
    for seg in segments:
        y = Tensor.wrap(model.scaler.target([windows[i].target for i in seg]))
        yhat = nk.take(pred, slice(start, start + len(seg)))
        start += len(seg)
        term = hybrid_loss(y, yhat, loss_config)
        total = term if total is None else nk.add(total, term)
    return nk.scale(total, 1.0 / len(segments))


def train(
    model: ForecastModel,
    windows: Sequence[SeriesWindow],
    loss_config: LossConfig = LossConfig(),
    epochs: int = 30,
    learning_rate: float = 1e-3,
    batch_spec: BatchSpec = BatchSpec(),
    val_windows: Optional[Sequence[SeriesWindow]] = None,
) -> TrainReport:
    """Adam on the hybrid loss with seeded segment shuffling. Updates ``model`` in place."""
    if not windows:
        raise TrainingError("no training windows")
    started = time.perf_counter()
    if model.scaler is None:
        model.scaler = Scaler.fit(windows)
    if model.pollutant is None:
        model.pollutant = windows[0].pollutant
    rng = np.random.default_rng(model.config.seed)
    segments = make_segments(windows, batch_spec.segment_len)
    opt = Adam(learning_rate)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(segments))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), batch_spec.segments_per_batch)):
            segs = [segments[i] for i in order[start : start + batch_spec.segments_per_batch]]
            for p in model.params.values():
                p.zero_grad()
            try:
                with ComputationTape() as tape:
                    loss = batch_loss(model, windows, segs, loss_config)
                nk.backward(loss, tape)
                opt.step(model.params)
            except (NonFiniteError, FloatingPointError) as exc:
                first = windows[segs[0][0]]
                raise TrainingError(
                    f"non-finite value in epoch {epoch}, batch {b} "
                    f"(first window: {first.city} ending {first.end_date}): {exc}"
                ) from exc
            batch_losses.append(loss.item())
        losses.append(float(np.mean(batch_losses)))
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    report = TrainReport(losses, model.config.seed, 0.0)
    if val_windows:
        from .evaluation import mape, rmse

        pred = predict(model, val_windows)
        truth = [w.target for w in val_windows]
        report.val_rmse[model.pollutant] = rmse(truth, pred)
        report.val_mape[model.pollutant] = mape(truth, pred)
    report.seconds = time.perf_counter() - started
    return report


def save_checkpoint(model: ForecastModel, fh: BinaryIO) -> None:
    """Little-endian layout: ``b"CSQF"``, u16 version, u32 length + UTF-8 JSON
    config block, u32 tensor count, then per tensor: u16 name length, name,
    u8 ndim, u32 per dim, float64 data row-major."""
    block = {
        "model": model.config.to_dict(),
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "pollutant": model.pollutant,
    }
    raw = json.dumps(block, sort_keys=True).encode("utf-8")
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", p.ndim))
        fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
        fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(fh: BinaryIO) -> ForecastModel:
    def read(n):
        buf = fh.read(n)
        if len(buf) != n:
            raise ValueError("truncated checkpoint")
        return buf

    if read(4) != CHECKPOINT_MAGIC:
        raise ValueError("not a CSQF checkpoint")
    version, size = struct.unpack("<HI", read(6))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    block = json.loads(read(size).decode("utf-8"))
    config = ModelConfig.from_dict(block["model"])
    expected = parameter_shapes(config)
    (count,) = struct.unpack("<I", read(4))
    params = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", read(2))
        name = read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", read(1))
        shape = struct.unpack(f"<{ndim}I", read(4 * ndim))
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(read(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    if list(params) != list(expected) or any(params[k].shape != s for k, s in expected.items()):
        raise ValueError("checkpoint parameters do not match its config")
    scaler = None if block["scaler"] is None else Scaler.from_dict(block["scaler"])
    return ForecastModel(config, params, scaler, block.get("pollutant"))
