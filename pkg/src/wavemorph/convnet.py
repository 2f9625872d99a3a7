"""Compact three-block conv net with hand-written forward and backward passes.

Architecture (all convs 3x3, stride 1, zero padding 1, ReLU):

    x (B, C, S, S)
      -> conv1 (32) -> relu -> maxpool 2x2
      -> conv2 (64) -> relu -> maxpool 2x2
      -> conv3 (128) -> relu            # Grad-CAM target A
      -> global average pool            # embedding
      -> linear(128 -> 1)               # morph logit

Parameters live in a plain dict keyed by ``PARAM_NAMES``. The code is dtype
generic: float32 for training, float64 for gradient checks.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from ._kernels import backend as _kernels
from .errors import ArtifactError, ConfigError, InputError, InternalError, SelectionError

PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "fc.w", "fc.b")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 48
    image_size: int = 64
    conv_channels: tuple = (32, 64, 128)
    kernel: int = 3
    # indices into the full 48-band stack that feed the input channels
    channel_indices: tuple | None = None
    note: str = ""

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if len(self.conv_channels) != 3 or min(self.conv_channels) < 1:
            raise ConfigError("conv_channels must list three positive widths")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd")
        if self.image_size < 4 or self.image_size % 4:
            raise ConfigError("image_size must be a positive multiple of 4 (two 2x2 pools)")
        if self.channel_indices is not None and len(self.channel_indices) != self.in_channels:
            raise ConfigError("channel_indices must have in_channels entries")

    @property
    def bands(self) -> tuple:
        return tuple(self.channel_indices) if self.channel_indices is not None else tuple(range(self.in_channels))

    def param_shapes(self) -> dict:
        c1, c2, c3 = self.conv_channels
        k = self.kernel
        return {
            "conv1.w": (c1, self.in_channels, k, k),
            "conv1.b": (c1,),
            "conv2.w": (c2, c1, k, k),
            "conv2.b": (c2,),
            "conv3.w": (c3, c2, k, k),
            "conv3.b": (c3,),
            "fc.w": (c3,),
            "fc.b": (1,),
        }

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """He (fan-in) normal weights, zero biases; a pure function of ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name == "fc.w":
            params[name] = (rng.standard_normal(shape) * np.sqrt(1.0 / shape[0])).astype(dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return params


def reduce_input_channels(cfg: ModelConfig, selected) -> ModelConfig:
    """Config for retraining on a subset of the current input channels."""
    sel = [int(i) for i in selected]
    if not sel:
        raise SelectionError("empty sub-band selection")
    if any(b <= a for a, b in zip(sel, sel[1:])):
        raise SelectionError(f"selection must be strictly increasing: {sel}")
    if sel[0] < 0 or sel[-1] >= cfg.in_channels:
        raise SelectionError(f"selection {sel} out of range for {cfg.in_channels} channels")
    bands = cfg.bands
    return replace(
        cfg,
        in_channels=len(sel),
        channel_indices=tuple(bands[i] for i in sel),
        note=f"reduced from {cfg.in_channels} channels",
    )


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    idx1: np.ndarray
    p1: np.ndarray
    z2: np.ndarray
    idx2: np.ndarray
    p2: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    embedding: np.ndarray
    logits: np.ndarray
    signature: tuple = field(default=())


def _signature(params) -> tuple:
    return tuple((k, params[k].shape, id(params[k])) for k in PARAM_NAMES)


def _relu(z):
    return np.maximum(z, 0)


def head(params, a3):
    """Logit from final-block activations: GAP then linear."""
    emb = a3.mean(axis=(2, 3))
    return emb @ params["fc.w"] + params["fc.b"][0]


def head_backward(params, a3_shape, dlogits):
    """d logit / d A for the GAP + linear head, scaled by ``dlogits`` per sample."""
    B, K, H, W = a3_shape
    g = np.outer(dlogits, params["fc.w"]) / (H * W)
    return np.broadcast_to(g[:, :, None, None], a3_shape).astype(params["fc.w"].dtype)


def forward(params, x):
    """Logits for a batch ``x`` of shape (B, C, S, S), plus the cache for backprop."""
    x = np.asarray(x)
    w1 = params["conv1.w"]
    if x.ndim != 4 or x.shape[1] != w1.shape[1]:
        raise InputError(f"batch shape {x.shape} does not match model input channels {w1.shape[1]}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise InputError(f"spatial size {x.shape[2:]} must be divisible by 4")
    x = np.ascontiguousarray(x, dtype=w1.dtype)
    z1 = _kernels.conv2d_forward(x, w1, params["conv1.b"])
    p1, idx1 = _kernels.maxpool2_forward(_relu(z1))
    z2 = _kernels.conv2d_forward(p1, params["conv2.w"], params["conv2.b"])
    p2, idx2 = _kernels.maxpool2_forward(_relu(z2))
    z3 = _kernels.conv2d_forward(p2, params["conv3.w"], params["conv3.b"])
    a3 = _relu(z3)
    emb = a3.mean(axis=(2, 3))
    logits = emb @ params["fc.w"] + params["fc.b"][0]
    cache = ForwardCache(x, z1, idx1, p1, z2, idx2, p2, z3, a3, emb, logits, _signature(params))
    return logits, cache


def predict_logits(params, x, batch_size: int = 64) -> np.ndarray:
    out = [forward(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def sigmoid(z):
    return expit(z)


def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.size == 0:
        raise InputError("bce_loss on an empty batch")
    if logits.shape != labels.shape:
        raise InputError("logits and labels differ in shape")
    if not np.all((labels == 0) | (labels == 1)):
        raise InputError("labels must be 0 or 1")
    return float(np.mean(np.logaddexp(0.0, logits) - labels * logits))


def backward_from_logits(params, cache: ForwardCache, dlogits):
    """Gradients of ``sum(dlogits * logits)`` with respect to every parameter."""
    if cache.signature != _signature(params):
        raise InternalError("forward cache was produced with different parameters")
    dlogits = np.asarray(dlogits, dtype=params["fc.w"].dtype)
    if dlogits.shape != cache.logits.shape:
        raise InternalError("gradient batch size does not match the cached forward pass")
    grads = {
        "fc.w": cache.embedding.T @ dlogits,
        "fc.b": np.array([dlogits.sum()], dtype=dlogits.dtype),
    }
    dz3 = head_backward(params, cache.a3.shape, dlogits) * (cache.z3 > 0)
    dp2, grads["conv3.w"], grads["conv3.b"] = _kernels.conv2d_backward(dz3, cache.p2, params["conv3.w"], True)
    dz2 = _kernels.maxpool2_backward(dp2, cache.idx2) * (cache.z2 > 0)
    dp1, grads["conv2.w"], grads["conv2.b"] = _kernels.conv2d_backward(dz2, cache.p1, params["conv2.w"], True)
    dz1 = _kernels.maxpool2_backward(dp1, cache.idx1) * (cache.z1 > 0)
    _, grads["conv1.w"], grads["conv1.b"] = _kernels.conv2d_backward(dz1, cache.x, params["conv1.w"], False)
    return {k: grads[k] for k in PARAM_NAMES}


def backward(params, cache: ForwardCache, labels):
    """Gradient of the mean BCE loss for the batch held in ``cache``."""
    labels = np.asarray(labels)
    if labels.shape != cache.logits.shape:
        raise InternalError("labels do not match the cached batch")
    probs = sigmoid(cache.logits)
    dlogits = (probs - labels) / labels.size
    return backward_from_logits(params, cache, dlogits)


# --------------------------------------------------------------------------
# checkpoint format: "CKPT1\n", key=value lines, blank line, then per tensor
# <u32 name_len><name><u32 ndim><u32 dims...><float32 LE data>

_CKPT_MAGIC = b"CKPT1\n"


def _config_lines(cfg: ModelConfig, meta: dict) -> list:
    lines = [
        f"in_channels={cfg.in_channels}",
        f"image_size={cfg.image_size}",
        f"conv_channels={','.join(map(str, cfg.conv_channels))}",
        f"kernel={cfg.kernel}",
        f"channel_indices={','.join(map(str, cfg.bands))}",
    ]
    if cfg.note:
        lines.append(f"note={cfg.note}")
    for k, v in meta.items():
        lines.append(f"meta.{k}={v}")
    return lines


def save_checkpoint(path, params, cfg: ModelConfig, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        for line in _config_lines(cfg, meta or {}):
            if "\n" in line:
                raise ConfigError("checkpoint config values may not contain newlines")
            fh.write(line.encode("utf-8") + b"\n")
        fh.write(b"\n")
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            nb = name.encode("ascii")
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Return ``(params, cfg, meta)`` from a CKPT1 file."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(_CKPT_MAGIC):
        raise ArtifactError(f"{path} is not a CKPT1 checkpoint")
    head_end = raw.find(b"\n\n", len(_CKPT_MAGIC) - 1)
    if head_end < 0:
        raise ArtifactError(f"{path}: unterminated config block")
    fields, meta = {}, {}
    for line in raw[len(_CKPT_MAGIC):head_end].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            fields[key] = value
    try:
        cfg = ModelConfig(
            in_channels=int(fields["in_channels"]),
            image_size=int(fields["image_size"]),
            conv_channels=tuple(int(v) for v in fields["conv_channels"].split(",")),
            kernel=int(fields["kernel"]),
            channel_indices=tuple(int(v) for v in fields["channel_indices"].split(",")),
            note=fields.get("note", ""),
        )
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{path}: bad config block ({exc})") from None
    pos = head_end + 2
    params = {}
    try:
        for name in PARAM_NAMES:
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            got = raw[pos:pos + n].decode("ascii")
            pos += n
            if got != name:
                raise ArtifactError(f"{path}: expected tensor {name}, found {got}")
            (nd,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{nd}I", raw, pos)
            pos += 4 * nd
            count = int(np.prod(shape))
            params[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error:
        raise ArtifactError(f"{path}: truncated tensor block") from None
    expected = cfg.param_shapes()
    for name in PARAM_NAMES:
        if params[name].shape != expected[name]:
            raise ArtifactError(f"{path}: tensor {name} has shape {params[name].shape}, config implies {expected[name]}")
    return params, cfg, meta
