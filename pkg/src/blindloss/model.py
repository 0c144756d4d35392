"""Small encoder-decoder segmentation network exposing per-block features."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor


@dataclass
class NetworkConfig:
    n_classes: int = 5
    height: int = 32
    width: int = 32
    encoder_widths: tuple = (8, 16, 16)
    decoder_widths: tuple = (16, 16)
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if not self.encoder_widths or not self.decoder_widths:
            raise ContractError("NetworkConfig: need at least one encoder and one decoder block")
        if min(self.encoder_widths + self.decoder_widths) < 1 or self.n_classes < 2:
            raise ContractError("NetworkConfig: widths must be positive and n_classes >= 2")
        step = 2 ** self.n_e
        if self.height % step or self.width % step:
            raise ContractError(f"NetworkConfig: {self.height}x{self.width} not divisible by 2^{self.n_e}")
        if self.n_d > self.n_e:
            raise ContractError("NetworkConfig: more decoder than encoder blocks would exceed input resolution")

    @property
    def n_e(self) -> int:
        return len(self.encoder_widths)

    @property
    def n_d(self) -> int:
        return len(self.decoder_widths)

    def encoder_sizes(self) -> list[tuple]:
        return [(self.height >> (i + 1), self.width >> (i + 1)) for i in range(self.n_e)]

    def decoder_sizes(self) -> list[tuple]:
        h, w = self.encoder_sizes()[-1]
        return [(h << (j + 1), w << (j + 1)) for j in range(self.n_d)]


@dataclass
class Conv:
    weight: Tensor  # (k, k, Ci, Co)
    bias: Tensor  # (Co,)
    stride: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        k = self.weight.shape[0]
        return T.conv2d(x, self.weight, self.stride, k // 2, self.bias)


def _conv(rng: np.random.Generator, k: int, ci: int, co: int, stride: int = 1) -> Conv:
    fan_in = k * k * ci
    lim = np.sqrt(6.0 / fan_in)
    w = Tensor(rng.uniform(-lim, lim, (k, k, ci, co)), requires_grad=True)
    return Conv(w, Tensor(np.zeros(co), requires_grad=True), stride)


@dataclass
class ForwardOutput:
    encoder_features: list
    decoder_features: list
    logits: Tensor
    encoder_preactivations: list = field(default_factory=list)


@dataclass
class SegmentationNet:
    cfg: NetworkConfig
    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)
    head: Conv | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, c in enumerate(self.encoder):
            out += [(f"enc{i}.weight", c.weight), (f"enc{i}.bias", c.bias)]
        for j, c in enumerate(self.decoder):
            out += [(f"dec{j}.weight", c.weight), (f"dec{j}.bias", c.bias)]
        out += [("head.weight", self.head.weight), ("head.bias", self.head.bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def __call__(self, image) -> ForwardOutput:
        return forward(self, image)


def init_network(cfg: NetworkConfig) -> SegmentationNet:
    """Fan-in scaled uniform initialisation, deterministic per ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    net = SegmentationNet(cfg)
    ci = cfg.in_channels
    for w in cfg.encoder_widths:
        net.encoder.append(_conv(rng, 3, ci, w, stride=2))
        ci = w
    for w in cfg.decoder_widths:
        net.decoder.append(_conv(rng, 3, ci, w))
        ci = w
    net.head = _conv(rng, 1, ci, cfg.n_classes)
    return net


def forward(net: SegmentationNet, image) -> ForwardOutput:
    """Run the network on an (H, W, 3) image or a (B, H, W, 3) batch.

    Feature maps are always returned with a leading batch axis.
    """
    x = T.as_tensor(image)
    if x.ndim == 3:
        x = T.reshape(x, (1,) + x.shape)
    cfg = net.cfg
    if x.ndim != 4 or x.shape[1:] != (cfg.height, cfg.width, cfg.in_channels):
        raise ContractError(
            f"forward: expected images of shape ({cfg.height}, {cfg.width}, {cfg.in_channels}), got {x.shape}"
        )
    enc, pre, dec = [], [], []
    for conv in net.encoder:
        z = conv(x)
        x = T.relu(z)
        pre.append(z)
        enc.append(x)
    for conv in net.decoder:
        x = T.relu(conv(T.upsample2x(x)))
        dec.append(x)
    return ForwardOutput(enc, dec, net.head(x), pre)


def cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean per-pixel negative log-softmax of the true class (max-shifted)."""
    y = np.asarray(y)
    c = logits.shape[-1]
    if logits.shape[:-1] != y.shape:
        if logits.ndim == 4 and y.ndim == 2 and logits.shape[0] == 1 and logits.shape[1:3] == y.shape:
            y = y[None]
        else:
            raise ContractError(f"cross_entropy: logits {logits.shape} do not match labels {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ContractError(f"cross_entropy: labels must lie in [0, {c})")
    flat = T.reshape(logits, (-1, c))
    n = flat.shape[0]
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y.reshape(-1)] = 1.0
    shift = T.detach(T.reduce_max(flat, 1, keepdims=True))
    z = flat - T.expand(shift, flat.shape)
    lse = T.log(T.reduce_sum(T.exp(z), 1))
    picked = T.reduce_sum(z * Tensor(onehot), 1)
    return T.reduce_mean(lse - picked, 0)


def predict(net: SegmentationNet, images) -> np.ndarray:
    """Argmax class map at logits resolution, shape (B, H', W')."""
    return forward(net, images).logits.data.argmax(axis=-1)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"BLNDCKPT"
VERSION = 1


def save_checkpoint(path, named: list[tuple[str, Tensor]], meta: dict | None = None) -> None:
    """Write tensors as: magic, u32 version, u32 header length, JSON header, float64 LE payloads."""
    entries, offset = [], 0
    for name, t in named:
        size = int(np.prod(t.shape)) if t.shape else 1
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += size
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(arrays by name, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    payload = np.frombuffer(raw[16 + hlen :], dtype="<f8")
    arrays = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = payload[e["offset"] : e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return arrays, header.get("meta", {})


def load_into(named: list[tuple[str, Tensor]], arrays: dict) -> None:
    for name, t in named:
        if name not in arrays:
            raise ContractError(f"checkpoint is missing tensor {name!r}")
        if arrays[name].shape != t.shape:
            raise ContractError(f"checkpoint tensor {name!r} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name].copy()
