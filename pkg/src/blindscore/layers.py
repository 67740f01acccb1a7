"""Neural layer primitives over Q16.16 tensors, and the model container.

Layer arithmetic follows the fixed-point contract in `fixedpoint`: dot
products and convolutions accumulate widened products exactly and apply one
floor shift at the end, then add the bias raw value. Average pools floor-
divide the window sum by the window area. Everything is a pure function of
its inputs, so repeated evaluation on any host yields identical raw buffers.

Supported kinds: conv2d, linear, relu, avgpool2d, maxpool2d, batchnorm2d
(pre-folded to a per-channel affine), flatten, adaptive-avgpool2d,
dropout-identity.

The on-disk container is FXM1: a JSON manifest followed by raw little-endian
int32 weight buffers; see docs/FORMATS.md for the byte-exact layout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MalformedMessage, ShapeMismatch
from .fixedpoint import (
    FRAC_BITS,
    FixedTensor,
    check_raw_array,
    exact_matmul,
    shift_right,
)
from .mathfx import sqrt_raw
from .fixedpoint import raw_div, raw_mul, raw_sub

KINDS = (
    "conv2d",
    "linear",
    "relu",
    "avgpool2d",
    "maxpool2d",
    "batchnorm2d",
    "flatten",
    "adaptive-avgpool2d",
    "dropout-identity",
)

BATCHNORM_EPS_RAW = 1 << 6  # 2^-10 in Q16.16

_MODEL_MAGIC = b"FXM1"


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a kind plus the hyperparameters that kind needs.

    Parameters are kind-specific; unused fields stay at their defaults.
    Parametric kinds declare weight slots via `weight_shapes`.
    """

    kind: str
    name: str = ""
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0
    num_features: int = 0
    output_size: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeMismatch(f"unknown layer kind {self.kind!r}")

    @property
    def weight_shapes(self) -> tuple:
        if self.kind == "conv2d":
            return (
                (self.out_channels, self.in_channels, self.kernel, self.kernel),
                (self.out_channels,),
            )
        if self.kind == "linear":
            return ((self.out_features, self.in_features), (self.out_features,))
        if self.kind == "batchnorm2d":
            # folded per-channel affine: scale, shift
            return ((self.num_features,), (self.num_features,))
        return ()

    def out_shape(self, in_shape: tuple) -> tuple:
        """Propagate a shape through this layer, validating consistency."""
        k = self.kind
        if k == "conv2d":
            _expect_chw(in_shape, self.in_channels, k)
            c, h, w = in_shape
            oh = _conv_len(h, self.kernel, self.stride, self.padding, k)
            ow = _conv_len(w, self.kernel, self.stride, self.padding, k)
            return (self.out_channels, oh, ow)
        if k == "linear":
            if in_shape != (self.in_features,):
                raise ShapeMismatch(f"linear expects ({self.in_features},), got {in_shape}")
            return (self.out_features,)
        if k in ("relu", "dropout-identity"):
            return in_shape
        if k in ("avgpool2d", "maxpool2d"):
            if len(in_shape) != 3:
                raise ShapeMismatch(f"{k} expects (C,H,W), got {in_shape}")
            c, h, w = in_shape
            oh = _conv_len(h, self.kernel, self.stride, 0, k)
            ow = _conv_len(w, self.kernel, self.stride, 0, k)
            return (c, oh, ow)
        if k == "batchnorm2d":
            _expect_chw(in_shape, self.num_features, k)
            return in_shape
        if k == "flatten":
            n = 1
            for d in in_shape:
                n *= d
            return (n,)
        if k == "adaptive-avgpool2d":
            if len(in_shape) != 3:
                raise ShapeMismatch(f"{k} expects (C,H,W), got {in_shape}")
            if self.output_size > in_shape[1] or self.output_size > in_shape[2]:
                raise ShapeMismatch(f"{k} cannot upsample {in_shape} to {self.output_size}")
            return (in_shape[0], self.output_size, self.output_size)
        raise ShapeMismatch(f"unknown layer kind {k!r}")

    def to_manifest(self) -> dict:
        entry = {"kind": self.kind, "name": self.name}
        for f in (
            "in_channels",
            "out_channels",
            "kernel",
            "stride",
            "padding",
            "in_features",
            "out_features",
            "num_features",
            "output_size",
        ):
            v = getattr(self, f)
            default = 1 if f == "stride" else 0
            if v != default:
                entry[f] = v
        return entry

    @classmethod
    def from_manifest(cls, entry: dict) -> "LayerSpec":
        kwargs = dict(entry)
        kind = kwargs.pop("kind")
        name = kwargs.pop("name", "")
        return cls(kind=kind, name=name, **kwargs)


def _expect_chw(in_shape, channels, kind):
    if len(in_shape) != 3 or in_shape[0] != channels:
        raise ShapeMismatch(f"{kind} expects ({channels},H,W), got {in_shape}")


def _conv_len(size, kernel, stride, padding, kind):
    span = size + 2 * padding - kernel
    if kernel <= 0 or stride <= 0 or span < 0:
        raise ShapeMismatch(f"{kind} kernel {kernel}/stride {stride} does not fit size {size}")
    return span // stride + 1


def _check_weights(spec: LayerSpec, weights) -> None:
    shapes = tuple(w.shape for w in weights)
    if shapes != spec.weight_shapes:
        raise ShapeMismatch(
            f"{spec.kind} {spec.name!r} expects weights {spec.weight_shapes}, got {shapes}"
        )


def layer_forward(spec: LayerSpec, weights, x: FixedTensor) -> FixedTensor:
    """Evaluate one layer; pure and deterministic."""
    _check_weights(spec, weights)
    out_shape = spec.out_shape(x.shape)  # validates input shape
    k = spec.kind
    if k == "relu":
        return FixedTensor.from_raw(np.maximum(x.raw, 0))
    if k == "dropout-identity":
        return x
    if k == "flatten":
        return x.reshape(out_shape)
    if k == "linear":
        w, b = weights
        acc = exact_matmul(w.raw, x.raw.reshape(-1, 1)).reshape(-1)
        out = shift_right(acc) + b.raw
        return FixedTensor.from_raw(check_raw_array(np.asarray(out)).reshape(out_shape))
    if k == "conv2d":
        return _conv2d(spec, weights, x, out_shape)
    if k == "maxpool2d":
        win = _pool_windows(x.raw, spec.kernel, spec.stride)
        return FixedTensor.from_raw(win.max(axis=(3, 4)))
    if k == "avgpool2d":
        win = _pool_windows(x.raw, spec.kernel, spec.stride)
        area = spec.kernel * spec.kernel
        return FixedTensor.from_raw(win.sum(axis=(3, 4)) // area)
    if k == "batchnorm2d":
        scale, shift = weights
        prod = x.raw * scale.raw[:, None, None]
        out = shift_right(prod) + shift.raw[:, None, None]
        return FixedTensor.from_raw(check_raw_array(out))
    if k == "adaptive-avgpool2d":
        return _adaptive_avgpool(x.raw, spec.output_size, out_shape)
    raise ShapeMismatch(f"unknown layer kind {k!r}")


def _conv2d(spec, weights, x, out_shape):
    w, b = weights
    raw = x.raw
    if spec.padding:
        p = spec.padding
        raw = np.pad(raw, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(raw, (spec.kernel, spec.kernel), axis=(1, 2))
    win = win[:, :: spec.stride, :: spec.stride]
    _, oh, ow = out_shape
    patches = np.transpose(win, (1, 2, 0, 3, 4)).reshape(oh * ow, -1)
    wmat = w.raw.reshape(spec.out_channels, -1)
    acc = exact_matmul(patches, wmat.T)  # (oh*ow, out_c)
    out = shift_right(acc) + b.raw[None, :]
    out = check_raw_array(np.asarray(out))
    return FixedTensor.from_raw(np.transpose(out.reshape(oh, ow, spec.out_channels), (2, 0, 1)))


def _pool_windows(raw, kernel, stride):
    win = sliding_window_view(raw, (kernel, kernel), axis=(1, 2))
    return win[:, ::stride, ::stride]


def _adaptive_avgpool(raw, out_size, out_shape):
    c, h, w = raw.shape
    out = np.zeros(out_shape, dtype=np.int64)
    for i in range(out_size):
        r0, r1 = (i * h) // out_size, -((-(i + 1) * h) // out_size)
        for j in range(out_size):
            c0, c1 = (j * w) // out_size, -((-(j + 1) * w) // out_size)
            window = raw[:, r0:r1, c0:c1]
            out[:, i, j] = window.sum(axis=(1, 2)) // window[0].size
    return FixedTensor.from_raw(out)


def fold_batchnorm2d(name, gamma, beta, mean, var) -> tuple:
    """Fold (gamma, beta, mu, sigma^2, eps=2^-10) into a per-channel affine.

    Returns (LayerSpec, (scale, shift)): y = (x * scale) >> 16 + shift.
    """
    n = gamma.size
    scale = np.empty(n, dtype=np.int64)
    shift = np.empty(n, dtype=np.int64)
    for i in range(n):
        denom = sqrt_raw(int(var.flat()[i]) + BATCHNORM_EPS_RAW)
        s = raw_div(int(gamma.flat()[i]), denom)
        scale[i] = s
        shift[i] = raw_sub(int(beta.flat()[i]), raw_mul(int(mean.flat()[i]), s))
    spec = LayerSpec(kind="batchnorm2d", name=name, num_features=n)
    return spec, (FixedTensor.from_raw(scale), FixedTensor.from_raw(shift))


@dataclass
class Model:
    """An ordered stack of layers with their weight tensors."""

    input_shape: tuple
    layers: list = field(default_factory=list)  # list[LayerSpec]
    weights: list = field(default_factory=list)  # list[tuple[FixedTensor, ...]]

    def __post_init__(self):
        if len(self.layers) != len(self.weights):
            raise ShapeMismatch("layers and weight lists must align")
        shape = tuple(self.input_shape)
        for spec, w in zip(self.layers, self.weights):
            _check_weights(spec, w)
            shape = spec.out_shape(shape)
        self.output_shape = shape

    def shapes(self) -> list:
        """Per-layer activation shapes: [input, after layer 0, ...]."""
        out = [tuple(self.input_shape)]
        for spec in self.layers:
            out.append(spec.out_shape(out[-1]))
        return out

    def forward(self, x: FixedTensor) -> FixedTensor:
        for spec, w in zip(self.layers, self.weights):
            x = layer_forward(spec, w, x)
        return x

    def trace(self, x: FixedTensor) -> list:
        """All activations [a_0 = x, a_1, ..., a_L]."""
        acts = [x]
        for spec, w in zip(self.layers, self.weights):
            acts.append(layer_forward(spec, w, acts[-1]))
        return acts

    def param_count(self) -> int:
        return sum(w.size for ws in self.weights for w in ws)

    def to_bytes(self) -> bytes:
        manifest = {
            "format": "Q16.16",
            "input_shape": list(self.input_shape),
            "layers": [
                {
                    **spec.to_manifest(),
                    "weights": [list(w.shape) for w in ws],
                }
                for spec, ws in zip(self.layers, self.weights)
            ],
        }
        blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        out = _MODEL_MAGIC + struct.pack(">I", len(blob)) + blob
        for ws in self.weights:
            for w in ws:
                out += w.raw.astype("<i4").tobytes()
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "Model":
        if len(data) < 8 or data[:4] != _MODEL_MAGIC:
            raise MalformedMessage("bad model container header")
        (mlen,) = struct.unpack(">I", data[4:8])
        if len(data) < 8 + mlen:
            raise MalformedMessage("truncated model manifest")
        try:
            manifest = json.loads(data[8 : 8 + mlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedMessage(f"unreadable model manifest: {exc}") from None
        if manifest.get("format") != "Q16.16":
            raise MalformedMessage("unsupported numeric format")
        off = 8 + mlen
        layers, weights = [], []
        for entry in manifest["layers"]:
            entry = dict(entry)
            declared = entry.pop("weights", [])
            spec = LayerSpec.from_manifest(entry)
            ws = []
            for shape in declared:
                count = 1
                for d in shape:
                    count *= d
                end = off + 4 * count
                if end > len(data):
                    raise MalformedMessage("truncated weight buffer")
                raw = np.frombuffer(data, dtype="<i4", count=count, offset=off)
                ws.append(FixedTensor(tuple(shape), raw.astype(np.int64).reshape(shape)))
                off = end
            layers.append(spec)
            weights.append(tuple(ws))
        if off != len(data):
            raise MalformedMessage("trailing bytes after weight buffers")
        return cls(tuple(manifest["input_shape"]), layers, weights)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
