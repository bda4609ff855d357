"""EEG-Inception network: inception modules, residual projections and head.

The topology is fully described by :class:`ModelConfig`; the binary
(3-channel, kernels 25/75/125) and four-class (22-channel, kernels
25..225) networks as well as every ablation depth are instances of it.
"""
from __future__ import annotations

import io
import json
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ModelFormatError, ShapeMismatchError, TruncatedModelError, VersionMismatchError
from .nn import (BatchNorm1d, Conv1d, GlobalAvgPool, Linear, MaxPool1d, Parameter, ReLU,
                 concat_channels, split_channels)

FORMAT_MAGIC = b"EEGINCEPTION-MODEL"
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    in_channels: int = 3
    depth: int = 12
    kernel_sizes: tuple = (25, 75, 125)
    n_classes: int = 2
    time_len: int = 750
    n_inception: int = 6
    residual_period: int = 3
    pool_kernel: int = 25
    seed: int = 0

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)

    @classmethod
    def binary(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def four_class(cls, **overrides) -> "ModelConfig":
        base = dict(in_channels=22, depth=48, kernel_sizes=(25, 75, 125, 175, 225), n_classes=4)
        base.update(overrides)
        return cls(**base)

    @property
    def width(self) -> int:
        """Channels leaving every inception module (branches x depth)."""
        return (len(self.kernel_sizes) + 1) * self.depth

    @property
    def n_residual(self) -> int:
        return self.n_inception // self.residual_period

    def validate(self) -> "ModelConfig":
        def bad(msg):
            raise ValueError(f"invalid ModelConfig: {msg}")

        for name in ("in_channels", "depth", "n_inception", "residual_period", "pool_kernel", "time_len"):
            if int(getattr(self, name)) < 1:
                bad(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.n_classes < 2:
            bad(f"n_classes must be >= 2 (got {self.n_classes})")
        if not self.kernel_sizes:
            bad("kernel_sizes must not be empty")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            bad(f"kernel_sizes must be odd and positive (got {list(self.kernel_sizes)})")
        if list(self.kernel_sizes) != sorted(self.kernel_sizes):
            bad(f"kernel_sizes must be ascending (got {list(self.kernel_sizes)})")
        if self.n_inception % self.residual_period:
            bad(f"n_inception ({self.n_inception}) must be divisible by residual_period ({self.residual_period})")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# parameter arithmetic


def _conv_params(c_in: int, c_out: int, k: int) -> int:
    return c_out * c_in * k + c_out


def inception_params(c_in: int, depth: int, kernel_sizes: Sequence[int]) -> int:
    width = (len(kernel_sizes) + 1) * depth
    return (2 * _conv_params(c_in, depth, 1)
            + sum(_conv_params(depth, depth, k) for k in kernel_sizes)
            + 2 * width)


def count_params(config: ModelConfig) -> int:
    """Closed-form trainable parameter count (BatchNorm running stats excluded)."""
    config.validate()
    w = config.width
    total = inception_params(config.in_channels, config.depth, config.kernel_sizes)
    total += (config.n_inception - 1) * inception_params(w, config.depth, config.kernel_sizes)
    total += _conv_params(config.in_channels, w, 1) + 2 * w
    total += (config.n_residual - 1) * (_conv_params(w, w, 1) + 2 * w)
    total += w * config.n_classes + config.n_classes
    return total


# --------------------------------------------------------------------------
# blocks


class InceptionModule:
    """Bottleneck-fed parallel convolutions plus a max-pool branch.

    Branch order in the concatenated output: one block of ``depth`` channels
    per kernel size (ascending), then the pooling branch.
    """

    def __init__(self, in_channels: int, depth: int, kernel_sizes: Sequence[int], pool_kernel: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.in_channels = in_channels
        self.depth = depth
        self.bottleneck = Conv1d(in_channels, depth, 1, rng, dtype)
        self.convs = [Conv1d(depth, depth, k, rng, dtype) for k in kernel_sizes]
        self.pool = MaxPool1d(pool_kernel)
        self.pool_conv = Conv1d(in_channels, depth, 1, rng, dtype)
        self.width = depth * (len(self.convs) + 1)
        self.bn = BatchNorm1d(self.width, dtype=dtype)
        self.relu = ReLU()

    def named_parameters(self, prefix: str):
        out = [(f"{prefix}.bottleneck.{n}", p) for n, p in zip(("weight", "bias"), self.bottleneck.parameters())]
        for conv in self.convs:
            out += [(f"{prefix}.conv{conv.kernel_size}.{n}", p) for n, p in zip(("weight", "bias"), conv.parameters())]
        out += [(f"{prefix}.pool_conv.{n}", p) for n, p in zip(("weight", "bias"), self.pool_conv.parameters())]
        out += [(f"{prefix}.bn.gamma", self.bn.gamma), (f"{prefix}.bn.beta", self.bn.beta)]
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters("")]

    def layer_param_counts(self) -> list[tuple[str, int]]:
        """Per-layer counts in the row order of an architecture summary."""
        rows = [("maxpool", 0), ("pool_conv", sum(p.size for p in self.pool_conv.parameters())),
                ("bottleneck", sum(p.size for p in self.bottleneck.parameters()))]
        rows += [(f"conv{c.kernel_size}", sum(p.size for p in c.parameters())) for c in self.convs]
        rows += [("batchnorm", 2 * self.width), ("relu", 0)]
        return rows

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"inception module expects {self.in_channels} input channels, got {x.shape[1]}")
        b = self.bottleneck.forward(x)
        parts = [conv.forward(b) for conv in self.convs]
        parts.append(self.pool_conv.forward(self.pool.forward(x)))
        return self.relu.forward(self.bn.forward(concat_channels(parts)))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = self.bn.backward(self.relu.backward(grad_out))
        parts = split_channels(g, [self.depth] * (len(self.convs) + 1))
        g_b = None
        for conv, gp in zip(self.convs, parts):
            gi = conv.backward(gp)
            g_b = gi if g_b is None else g_b + gi
        gx = self.bottleneck.backward(g_b)
        gx = gx + self.pool.backward(self.pool_conv.backward(parts[-1]))
        return gx


class ResidualProjection:
    """``out = relu(main + bn(conv1x1(tap)))``."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv1d(in_channels, out_channels, 1, rng, dtype)
        self.bn = BatchNorm1d(out_channels, dtype=dtype)
        self.relu = ReLU()

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.conv.weight", self.conv.weight), (f"{prefix}.conv.bias", self.conv.bias),
                (f"{prefix}.bn.gamma", self.bn.gamma), (f"{prefix}.bn.beta", self.bn.beta)]

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters("")]

    def forward(self, tap: np.ndarray, main: np.ndarray) -> np.ndarray:
        if self.conv.out_channels != main.shape[1]:
            raise ValueError(f"residual projection emits {self.conv.out_channels} channels, main path has {main.shape[1]}")
        return self.relu.forward(main + self.bn.forward(self.conv.forward(tap)))

    def backward(self, grad_out: np.ndarray):
        """Return ``(grad_tap, grad_main)``."""
        g = self.relu.backward(grad_out)
        return self.conv.backward(self.bn.backward(g)), g


def residual_add(projection: ResidualProjection, tap: np.ndarray, main: np.ndarray) -> np.ndarray:
    return projection.forward(tap, main)


class EegInceptionModel:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        w = config.width
        self.modules = [InceptionModule(config.in_channels, config.depth, config.kernel_sizes,
                                        config.pool_kernel, rng, dtype)]
        self.modules += [InceptionModule(w, config.depth, config.kernel_sizes, config.pool_kernel, rng, dtype)
                         for _ in range(config.n_inception - 1)]
        self.residuals = [ResidualProjection(config.in_channels if r == 0 else w, w, rng, dtype)
                          for r in range(config.n_residual)]
        self.pool = GlobalAvgPool()
        self.linear = Linear(w, config.n_classes, rng, dtype)
        self.training = False
        self.eval()

    @property
    def initial(self) -> InceptionModule:
        return self.modules[0]

    @property
    def intermediate(self) -> list[InceptionModule]:
        return self.modules[1:]

    # -- mode / parameters -------------------------------------------------

    def _batchnorms(self):
        for m in self.modules:
            yield m.bn
        for r in self.residuals:
            yield r.bn

    def train(self) -> "EegInceptionModel":
        self.training = True
        for bn in self._batchnorms():
            bn.training = True
        return self

    def eval(self) -> "EegInceptionModel":
        self.training = False
        for bn in self._batchnorms():
            bn.training = False
        return self

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = self.modules[0].named_parameters("initial")
        for i, m in enumerate(self.modules[1:], 1):
            out += m.named_parameters(f"intermediate{i}")
        for r, proj in enumerate(self.residuals, 1):
            out += proj.named_parameters(f"residual{r}")
        out += [("head.linear.weight", self.linear.weight), ("head.linear.bias", self.linear.bias)]
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        names = ["initial"] + [f"intermediate{i}" for i in range(1, len(self.modules))]
        for name, m in zip(names, self.modules):
            out += [(f"{name}.bn.running_mean", m.bn.running_mean), (f"{name}.bn.running_var", m.bn.running_var)]
        for r, proj in enumerate(self.residuals, 1):
            out += [(f"residual{r}.bn.running_mean", proj.bn.running_mean),
                    (f"residual{r}.bn.running_var", proj.bn.running_var)]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def block_param_counts(self) -> "OrderedDict[str, int]":
        """Parameter totals per block, in network order."""
        counts = OrderedDict()
        period = self.config.residual_period
        for i, m in enumerate(self.modules):
            counts["initial" if i == 0 else f"intermediate{i}"] = sum(p.size for p in m.parameters())
            if (i + 1) % period == 0:
                r = (i + 1) // period
                counts[f"residual{r}"] = sum(p.size for p in self.residuals[r - 1].parameters())
        counts["head"] = self.linear.weight.size + self.linear.bias.size
        return counts

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- passes -------------------------------------------------------------

    def forward(self, x: np.ndarray, mode: str | None = None, return_activations: bool = False):
        """Logits ``(batch, n_classes)`` for input ``(batch, in_channels, time_len)``."""
        if mode == "train":
            self.train()
        elif mode == "eval":
            self.eval()
        elif mode is not None:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.time_len:
            raise ValueError(f"model expects input (batch, {cfg.in_channels}, {cfg.time_len}), got {x.shape}")
        x = np.asarray(x, dtype=self.dtype)
        acts = []
        tap = h = x
        period = cfg.residual_period
        for i, module in enumerate(self.modules):
            h = module.forward(h)
            if (i + 1) % period == 0:
                h = self.residuals[(i + 1) // period - 1].forward(tap, h)
                tap = h
            acts.append(h)
        logits = self.linear.forward(self.pool.forward(h))
        if return_activations:
            return logits, acts
        return logits

    __call__ = forward

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        g = self.pool.backward(self.linear.backward(grad_logits))
        period = self.config.residual_period
        pending = None
        for i in reversed(range(len(self.modules))):
            if (i + 1) % period == 0:
                pending, g = self.residuals[(i + 1) // period - 1].backward(g)
            g = self.modules[i].backward(g)
            if i % period == 0:
                g = g + pending
                pending = None
        return g

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        from .nn import softmax

        was_training = self.training
        self.eval()
        out = [softmax(self.forward(x[i:i + batch_size]).astype(np.float64))
               for i in range(0, len(x), batch_size)]
        if was_training:
            self.train()
        return np.concatenate(out, axis=0)


def build_model(config: ModelConfig, dtype=np.float32) -> EegInceptionModel:
    return EegInceptionModel(config, dtype=dtype)


def forward(model: EegInceptionModel, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    return model.forward(batch, mode=mode)


def inception_forward(module: InceptionModule, x: np.ndarray) -> np.ndarray:
    return module.forward(x)


# --------------------------------------------------------------------------
# serialization
#
# layout:  b"EEGINCEPTION-MODEL\n" + <one-line JSON header> + b"\n" + payload
# payload: little-endian float32 tensors back to back, offsets in the header


def _tensors(model: EegInceptionModel):
    for name, p in model.named_parameters():
        yield name, "param", p.value
    for name, buf in model.named_buffers():
        yield name, "state", buf


def model_to_bytes(model: EegInceptionModel) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, kind, arr in _tensors(model):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "n_params": sum(int(np.prod(t["shape"])) for t in manifest if t["kind"] == "param"),
        "payload_bytes": offset,
        "tensors": manifest,
    }
    return FORMAT_MAGIC + b"\n" + json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(chunks)


def save_model(model: EegInceptionModel, path) -> None:
    data = model_to_bytes(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_header(fh) -> dict:
    magic = fh.readline()
    if magic.rstrip(b"\n") != FORMAT_MAGIC:
        if not magic.endswith(b"\n") and FORMAT_MAGIC.startswith(magic):
            raise TruncatedModelError("model file truncated inside the magic line")
        raise ModelFormatError("not an EEG-Inception model file (bad magic)")
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise TruncatedModelError("model file truncated inside the header")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"model format version {header.get('format_version')!r} not supported (expected {FORMAT_VERSION})")
    return header


def read_model_header(path) -> dict:
    """Parse only the textual header; weights are not read."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def model_from_bytes(data: bytes) -> EegInceptionModel:
    fh = io.BytesIO(data)
    header = _read_header(fh)
    payload = fh.read()
    if len(payload) < header["payload_bytes"]:
        raise TruncatedModelError(
            f"model payload truncated: {len(payload)} of {header['payload_bytes']} bytes present")
    if len(payload) > header["payload_bytes"]:
        raise ModelFormatError("model payload has trailing bytes")
    model = EegInceptionModel(ModelConfig.from_dict(header["config"]))
    expected = {name: arr for name, _, arr in _tensors(model)}
    listed = {t["name"]: t for t in header["tensors"]}
    if set(expected) != set(listed):
        raise ShapeMismatchError(f"tensor set differs from config: {sorted(set(expected) ^ set(listed))[:5]}")
    for name, arr in expected.items():
        t = listed[name]
        if tuple(t["shape"]) != arr.shape:
            raise ShapeMismatchError(f"{name}: file shape {tuple(t['shape'])} != model shape {arr.shape}")
        if t["nbytes"] != arr.size * 4 or t["offset"] + t["nbytes"] > len(payload):
            raise ShapeMismatchError(f"{name}: byte range inconsistent with its shape")
        arr[...] = np.frombuffer(payload, dtype="<f4", count=arr.size, offset=t["offset"]).reshape(arr.shape)
    return model


def load_model(path) -> EegInceptionModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
