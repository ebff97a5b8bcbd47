"""Conformer encoder + BiLSTM + multi-task heads for stuttering event detection.

Dataflow for one clip (T x 80 log-mel frames)::

    [SpecAugment, train only] -> CMVN -> conv subsampling (2x conv2d k3 s2) ->
    linear -> + sinusoidal position -> dropout -> N x Conformer block ->
    L x (Bi)LSTM -> linear to proj_dim -> temporal pooling -> one head per task

All functions accept a batch (B, T, ...) of equal-length clips.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numerics as nx
from .corpus import TASKS
from .errors import ConfigError, ContractError, ParseError, ShapeError
from .frontend import AugmentPolicy, spec_augment
from .numerics import Array

FORMAT_VERSION = 1
MAGIC = b"SEDK"


@dataclass
class ModelConfig:
    num_blocks: int = 12
    d_model: int = 256
    attention_heads: int = 4
    ff_expansion: int = 4
    conv_kernel: int = 15
    dropout_p: float = 0.1
    lstm_layers: int = 2
    lstm_hidden: int = 256
    lstm_bidirectional: bool = True
    proj_dim: int = 128
    pooling: str = "mean"
    head_mode: str = "two_logit"
    task_subset: tuple = TASKS
    num_mel_bins: int = 80
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if isinstance(self.augment, Mapping):
            self.augment = AugmentPolicy(**self.augment)
        self.task_subset = tuple(self.task_subset)
        if self.num_blocks < 0 or self.lstm_layers < 0:
            raise ConfigError("num_blocks and lstm_layers must be non-negative")
        if min(self.d_model, self.attention_heads, self.ff_expansion, self.lstm_hidden, self.proj_dim) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.attention_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by attention_heads={self.attention_heads}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.pooling not in ("mean", "last"):
            raise ConfigError(f"pooling must be 'mean' or 'last', got {self.pooling!r}")
        if self.head_mode not in ("two_logit", "one_logit"):
            raise ConfigError(f"head_mode must be 'two_logit' or 'one_logit', got {self.head_mode!r}")
        if not self.task_subset or any(t not in TASKS for t in self.task_subset) or len(set(self.task_subset)) != len(self.task_subset):
            raise ConfigError(f"task_subset must be a non-empty subset of {TASKS}, got {self.task_subset}")
        if self.num_mel_bins < 7:
            raise ConfigError("num_mel_bins must be at least 7")

    @property
    def head_width(self) -> int:
        return 2 if self.head_mode == "two_logit" else 1

    @property
    def task_indices(self) -> list[int]:
        return [TASKS.index(t) for t in self.task_subset]

    @property
    def subsampled_bins(self) -> int:
        return subsampled_length(self.num_mel_bins)

    @property
    def lstm_out_dim(self) -> int:
        if self.lstm_layers == 0:
            return self.d_model
        return self.lstm_hidden * (2 if self.lstm_bidirectional else 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task_subset"] = list(self.task_subset)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**dict(d))


def subsampled_length(length: int) -> int:
    """Length after two kernel-3 stride-2 unpadded convolutions."""
    return nx.output_length(nx.output_length(length, 3, 2), 3, 2)


# -- parameter layout -------------------------------------------------------

def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable parameter implied by ``config``."""
    d, c = config.d_model, config.d_model
    shapes: dict[str, tuple[int, ...]] = {
        "subsample.conv1.weight": (3, 3, 1, c),
        "subsample.conv1.bias": (c,),
        "subsample.conv2.weight": (3, 3, c, c),
        "subsample.conv2.bias": (c,),
        "subsample.out.weight": (c * config.subsampled_bins, d),
        "subsample.out.bias": (d,),
    }
    inner = d * config.ff_expansion
    for n in range(config.num_blocks):
        p = f"blocks.{n}."
        for ff in ("ff1", "ff2"):
            shapes.update({
                p + ff + ".norm.gamma": (d,), p + ff + ".norm.beta": (d,),
                p + ff + ".w1": (d, inner), p + ff + ".b1": (inner,),
                p + ff + ".w2": (inner, d), p + ff + ".b2": (d,),
            })
        shapes.update({p + "mhsa.norm.gamma": (d,), p + "mhsa.norm.beta": (d,)})
        for proj in ("q", "k", "v", "o"):
            shapes.update({p + f"mhsa.w{proj}": (d, d), p + f"mhsa.b{proj}": (d,)})
        shapes.update({
            p + "conv.norm.gamma": (d,), p + "conv.norm.beta": (d,),
            p + "conv.pw1.weight": (d, 2 * d), p + "conv.pw1.bias": (2 * d,),
            p + "conv.dw.weight": (config.conv_kernel, d), p + "conv.dw.bias": (d,),
            p + "conv.dw_norm.gamma": (d,), p + "conv.dw_norm.beta": (d,),
            p + "conv.pw2.weight": (d, d), p + "conv.pw2.bias": (d,),
            p + "final_norm.gamma": (d,), p + "final_norm.beta": (d,),
        })
    d_in, h = d, config.lstm_hidden
    directions = ("fw", "bw") if config.lstm_bidirectional else ("fw",)
    for layer in range(config.lstm_layers):
        for direction in directions:
            p = f"lstm.{layer}.{direction}."
            shapes.update({p + "w_ih": (d_in, 4 * h), p + "w_hh": (h, 4 * h), p + "bias": (4 * h,)})
        d_in = h * len(directions)
    shapes.update({"proj.weight": (config.lstm_out_dim, config.proj_dim), "proj.bias": (config.proj_dim,)})
    for task in config.task_subset:
        shapes.update({f"head.{task}.weight": (config.proj_dim, config.head_width), f"head.{task}.bias": (config.head_width,)})
    return shapes


def count_parameters(config: ModelConfig, prefix: str = "") -> int:
    """Trainable scalar count, optionally restricted to names starting with ``prefix``."""
    return sum(int(np.prod(s)) for name, s in parameter_shapes(config).items() if name.startswith(prefix))


def init_parameters(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Array]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            value = np.ones(shape)
        elif leaf == "beta":
            value = np.zeros(shape)
        elif name.startswith("lstm."):
            bound = 1.0 / np.sqrt(config.lstm_hidden)
            value = rng.uniform(-bound, bound, shape)
            if leaf == "bias":
                h = config.lstm_hidden
                value[h : 2 * h] += 1.0  # forget gate
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(3.0 / fan_in)
            value = rng.uniform(-bound, bound, shape)
        params[name] = Array(value.astype(dtype), requires_grad=True)
    return params


def default_buffers(config: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    """Feature normalisation statistics (not trained by gradient descent)."""
    return {
        "cmvn.mean": np.zeros(config.num_mel_bins, dtype=dtype),
        "cmvn.istd": np.ones(config.num_mel_bins, dtype=dtype),
    }


# -- layers -----------------------------------------------------------------

@lru_cache(maxsize=16)
def positional_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(-np.log(10000.0) * np.arange(0, dim, 2) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : dim // 2]
    return pe


def conv_subsample(x: Array, params: Mapping[str, Array], config: ModelConfig) -> Array:
    """(B, T, F) features -> (B, T', d_model), T' = two applications of the k3/s2 length formula."""
    B, T, F = x.shape
    if T < 7:
        raise ShapeError(f"conv subsampling needs at least 7 frames, got {T}")
    img = x.reshape(B, T, F, 1)
    h = nx.relu(nx.conv2d(img, params["subsample.conv1.weight"], stride=2) + params["subsample.conv1.bias"])
    h = nx.relu(nx.conv2d(h, params["subsample.conv2.weight"], stride=2) + params["subsample.conv2.bias"])
    _, t2, f2, c = h.shape
    return nx.linear(h.reshape(B, t2, f2 * c), params["subsample.out.weight"], params["subsample.out.bias"])


def multi_head_attention(
    x: Array,
    params: Mapping[str, Array],
    prefix: str,
    heads: int,
    return_weights: bool = False,
):
    """Scaled dot-product self-attention over (B, T, d); returns (B, T, d)."""
    B, T, d = x.shape
    if d % heads:
        raise ConfigError(f"d_model={d} is not divisible by heads={heads}")
    dk = d // heads

    def split(name):
        y = nx.linear(x, params[prefix + "w" + name], params[prefix + "b" + name])
        return y.reshape(B, T, heads, dk).transpose(0, 2, 1, 3)

    q, k, v = split("q"), split("k"), split("v")
    weights = nx.softmax(nx.matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dk)))
    ctx = nx.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, T, d)
    out = nx.linear(ctx, params[prefix + "wo"], params[prefix + "bo"])
    return (out, weights) if return_weights else out


def _ln(x, params, name):
    return nx.layer_norm(x, params[name + ".gamma"], params[name + ".beta"])


def _feed_forward(x, params, p, config, training, rng):
    h = _ln(x, params, p + ".norm")
    h = nx.swish(nx.linear(h, params[p + ".w1"], params[p + ".b1"]))
    h = nx.dropout(h, config.dropout_p, training, rng)
    h = nx.linear(h, params[p + ".w2"], params[p + ".b2"])
    return nx.dropout(h, config.dropout_p, training, rng)


def _conv_module(x, params, p, config, training, rng):
    h = _ln(x, params, p + ".norm")
    h = nx.glu(nx.pointwise_conv1d(h, params[p + ".pw1.weight"]) + params[p + ".pw1.bias"])
    pad = (config.conv_kernel - 1) // 2
    h = nx.depthwise_conv1d(h, params[p + ".dw.weight"], padding=pad) + params[p + ".dw.bias"]
    h = nx.swish(_ln(h, params, p + ".dw_norm"))
    h = nx.pointwise_conv1d(h, params[p + ".pw2.weight"]) + params[p + ".pw2.bias"]
    return nx.dropout(h, config.dropout_p, training, rng)


def conformer_block(
    x: Array,
    params: Mapping[str, Array],
    index: int,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Array:
    """Macaron block: x + FFN/2 -> + MHSA -> + Conv -> + FFN/2 -> LayerNorm."""
    p = f"blocks.{index}."
    x = x + 0.5 * _feed_forward(x, params, p + "ff1", config, training, rng)
    att = multi_head_attention(_ln(x, params, p + "mhsa.norm"), params, p + "mhsa.", config.attention_heads)
    x = x + nx.dropout(att, config.dropout_p, training, rng)
    x = x + _conv_module(x, params, p + "conv", config, training, rng)
    x = x + 0.5 * _feed_forward(x, params, p + "ff2", config, training, rng)
    return _ln(x, params, p + "final_norm")


def bilstm_layer(
    x: Array,
    params: Mapping[str, Array],
    prefix: str,
    bidirectional: bool = True,
) -> Array:
    """(B, T, d_in) -> (B, T, 2h) (or h when unidirectional)."""
    if x.shape[1] < 1:
        raise ShapeError("LSTM input has no frames")
    outs = []
    for direction in ("fw", "bw") if bidirectional else ("fw",):
        p = f"{prefix}{direction}."
        w_ih, w_hh, bias = params[p + "w_ih"], params[p + "w_hh"], params[p + "bias"]
        h = w_hh.shape[0]
        gates = ("input", "forget", "output", "candidate")
        if w_ih.shape != (x.shape[-1], 4 * h):
            raise ShapeError(
                f"{p}w_ih has shape {w_ih.shape}; expected ({x.shape[-1]}, {4 * h}) for gates {gates} of width {h}"
            )
        if w_hh.shape != (h, 4 * h) or bias.shape != (4 * h,):
            raise ShapeError(f"{p}w_hh/bias shapes {w_hh.shape}/{bias.shape} do not hold 4 gates {gates} of width {h}")
        xw = nx.linear(x, w_ih, bias)
        outs.append(nx.lstm_recurrence(xw, w_hh, reverse=direction == "bw"))
    return outs[0] if len(outs) == 1 else nx.concat(outs, axis=-1)


def pool_and_classify(x: Array, params: Mapping[str, Array], config: ModelConfig) -> Array:
    """(B, T, proj_dim) -> logits (B, K, head_width)."""
    if x.shape[1] == 0:
        raise ContractError("cannot pool an empty sequence")
    pooled = x.mean(axis=1) if config.pooling == "mean" else x[:, -1, :]
    heads = [nx.linear(pooled, params[f"head.{t}.weight"], params[f"head.{t}.bias"]) for t in config.task_subset]
    return nx.stack(heads, axis=1)


def encode(
    feats: Array,
    params: Mapping[str, Array],
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    upto: str = "proj",
) -> Array:
    """Normalised features (B, T, F) -> frame representations.

    ``upto`` selects the stage returned: "subsample", "conformer", "lstm" or "proj".
    """
    x = conv_subsample(feats, params, config)
    if upto == "subsample":
        return x
    # embeddings are scaled by sqrt(d_model) so position does not swamp content
    x = x * np.sqrt(config.d_model) + positional_encoding(x.shape[1], config.d_model).astype(x.dtype)
    x = nx.dropout(x, config.dropout_p, training, rng)
    for n in range(config.num_blocks):
        x = conformer_block(x, params, n, config, training, rng)
    if upto == "conformer":
        return x
    for layer in range(config.lstm_layers):
        x = bilstm_layer(x, params, f"lstm.{layer}.", config.lstm_bidirectional)
        x = nx.dropout(x, config.dropout_p, training, rng)
    if upto == "lstm":
        return x
    return nx.linear(x, params["proj.weight"], params["proj.bias"])


def forward(
    config: ModelConfig,
    params: Mapping[str, Array],
    feats,
    training: bool = False,
    rng: np.random.Generator | None = None,
    buffers: Mapping[str, np.ndarray] | None = None,
) -> Array:
    """Logits for one clip (T, F) -> (K, w) or a batch (B, T, F) -> (B, K, w)."""
    raw = np.asarray(feats.data if isinstance(feats, Array) else feats)
    single = raw.ndim == 2
    batch = raw[None] if single else raw
    if batch.ndim != 3 or batch.shape[-1] != config.num_mel_bins:
        raise ShapeError(f"expected (B, T, {config.num_mel_bins}) features, got {raw.shape}")
    dtype = next(iter(params.values())).dtype
    if training and config.augment.enabled:
        if rng is None:
            raise ConfigError("training forward needs a seeded generator")
        batch = np.stack([spec_augment(f, config.augment, rng) for f in batch])
    if buffers is not None:
        batch = (batch - buffers["cmvn.mean"]) * buffers["cmvn.istd"]
    x = encode(Array(batch.astype(dtype, copy=False)), params, config, training, rng)
    logits = pool_and_classify(x, params, config)
    return logits[0] if single else logits


class ConformerBiLSTM:
    """Parameter store plus forward pass for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.params = init_parameters(config, seed, dtype)
        self.buffers = default_buffers(config, dtype)
        self.rng = np.random.default_rng(seed)

    def forward(self, feats, training: bool = False) -> Array:
        return forward(self.config, self.params, feats, training, self.rng, self.buffers)

    __call__ = forward

    def fit_normalizer(self, feature_list) -> None:
        """Global per-bin mean / inverse std over all training frames."""
        total = np.zeros(self.config.num_mel_bins)
        sq = np.zeros(self.config.num_mel_bins)
        n = 0
        for f in feature_list:
            f = np.asarray(f, dtype=np.float64)
            total += f.sum(axis=0)
            sq += (f * f).sum(axis=0)
            n += len(f)
        if n == 0:
            raise ContractError("cannot fit feature statistics on zero frames")
        mean = total / n
        std = np.sqrt(np.maximum(sq / n - mean * mean, 1e-10))
        dtype = self.buffers["cmvn.mean"].dtype
        self.buffers = {"cmvn.mean": mean.astype(dtype), "cmvn.istd": (1.0 / std).astype(dtype)}

    def predict_logits(self, feature_list, batch_size: int = 32) -> np.ndarray:
        """Eval-mode logits for clips of any lengths, shape (n, K, w)."""
        out = np.zeros((len(feature_list), len(self.config.task_subset), self.config.head_width), dtype=np.float64)
        with nx.no_grad():
            for idx in length_buckets([len(f) for f in feature_list], batch_size):
                batch = np.stack([feature_list[i] for i in idx])
                out[idx] = self.forward(batch, training=False).data
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, params: Mapping[str, np.ndarray], buffers: Mapping[str, np.ndarray] | None = None, strict: bool = True) -> None:
        """Copy arrays into this model, validating names and shapes against the config."""
        expected = parameter_shapes(self.config)
        if strict:
            missing = sorted(set(expected) - set(params))
            unexpected = sorted(set(params) - set(expected))
            if missing or unexpected:
                raise ShapeError(
                    f"parameter set does not match config: {len(missing)} missing (e.g. {missing[:3]}), "
                    f"{len(unexpected)} unexpected (e.g. {unexpected[:3]})"
                )
        for name, value in params.items():
            if name not in expected:
                continue
            if tuple(value.shape) != expected[name]:
                raise ShapeError(f"parameter {name!r} has shape {tuple(value.shape)}, config implies {expected[name]}")
            self.params[name].data = np.array(value, dtype=self.params[name].dtype)
        for name, value in (buffers or {}).items():
            if name in self.buffers:
                self.buffers[name] = np.array(value, dtype=self.buffers[name].dtype)


def length_buckets(lengths, batch_size: int, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Group indices of equal-length clips into batches of at most ``batch_size``.

    With ``rng`` the members of each length group and the batch order are shuffled.
    """
    groups: dict[int, list[int]] = {}
    for i, n in enumerate(lengths):
        groups.setdefault(int(n), []).append(i)
    batches = []
    for n in sorted(groups):
        idx = groups[n]
        if rng is not None:
            idx = [idx[k] for k in rng.permutation(len(idx))]
        batches += [idx[s : s + batch_size] for s in range(0, len(idx), batch_size)]
    if rng is not None:
        batches = [batches[k] for k in rng.permutation(len(batches))]
    return batches


# -- checkpoint container ------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam: nx.AdamState | None = None
    epoch: int = 0
    best_metric: float | None = None
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: ConformerBiLSTM, **kw) -> "Checkpoint":
        return cls(
            model.config,
            {k: v.copy() for k, v in model.state().items()},
            {k: v.copy() for k, v in model.buffers.items()},
            **kw,
        )

    def build_model(self) -> ConformerBiLSTM:
        model = ConformerBiLSTM(self.config)
        model.load_state(self.params, self.buffers)
        return model


def _write_record(fh, name: str, value: np.ndarray) -> None:
    raw = name.encode("utf-8")
    value = np.ascontiguousarray(value, dtype="<f4")
    fh.write(struct.pack("<I", len(raw)) + raw)
    fh.write(struct.pack("<B", value.ndim))
    fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
    fh.write(value.tobytes())


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write the little-endian SEDK container (parameters stored as float32)."""
    records = [(f"param.{k}", v) for k, v in ckpt.params.items()]
    records += [(f"buffer.{k}", v) for k, v in ckpt.buffers.items()]
    header = {
        "model": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "best_metric": ckpt.best_metric,
        "extra": ckpt.extra,
        "num_records": None,
    }
    if ckpt.adam is not None:
        a = ckpt.adam
        header["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
        records += [(f"adam.m.{k}", v) for k, v in a.m.items()]
        records += [(f"adam.v.{k}", v) for k, v in a.v.items()]
    header["num_records"] = len(records)
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", ckpt.version) + struct.pack("<I", len(text)) + text)
        for name, value in records:
            _write_record(fh, name, value)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Parse a SEDK container; nothing is returned unless the whole file is valid."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise ParseError(f"{path}: not a SEDK checkpoint (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from exc
    arrays = {}
    for _ in range(header["num_records"]):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.take(1)[0]
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise ParseError(f"{path}: {len(r.data) - r.pos} trailing bytes after last record")
    params = {k[6:]: v for k, v in arrays.items() if k.startswith("param.")}
    expected = parameter_shapes(config)
    if set(params) != set(expected):
        raise ShapeError(f"{path}: stored parameters do not match the stored config")
    for name, value in params.items():
        if value.shape != expected[name]:
            raise ShapeError(f"{path}: parameter {name!r} has shape {value.shape}, config implies {expected[name]}")
    adam = None
    if "adam" in header:
        a = header["adam"]
        adam = nx.AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["t"])
        adam.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam.m.")}
        adam.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam.v.")}
    return Checkpoint(
        config=config,
        params=params,
        buffers={k[7:]: v for k, v in arrays.items() if k.startswith("buffer.")},
        adam=adam,
        epoch=header.get("epoch", 0),
        best_metric=header.get("best_metric"),
        extra=header.get("extra", {}),
        version=version,
    )
