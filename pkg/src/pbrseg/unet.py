"""Encoder-decoder U-Net assembled from the hand-built kernels.

Four encoder blocks (two 3x3 conv + relu each, widths F, 2F, 4F, 8F)
with 2x2 max pooling between them, a 16F bottleneck, and four decoder
blocks that upsample with a 2x2 stride-2 transposed convolution, halve
the channel count, concatenate the matching encoder skip tensor, and
apply two more conv + relu pairs. A final 1x1 convolution plus sigmoid
produces a single-channel probability map at full input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ConfigError, SchemaError

CONV_KERNEL = 3
CONV_PAD = 1
UP_KERNEL = 2


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | transposed-conv | maxpool | activation | concat
    in_channels: int
    out_channels: int
    kernel: int = 0
    stride: int = 0
    padding: int = 0

    def __post_init__(self):
        if self.kind == "conv":
            if self.kernel < 1 or self.stride < 1 or self.padding < 0:
                raise ConfigError(f"bad conv geometry: {self}")
        elif self.kind == "transposed-conv":
            if (self.kernel, self.stride, self.padding) != (2, 2, 0):
                raise ConfigError(f"transposed-conv must be 2x2 stride 2: {self}")
        elif self.kind == "maxpool":
            if self.in_channels != self.out_channels or (self.kernel, self.stride) != (2, 2):
                raise ConfigError(f"maxpool must be 2x2 stride 2, channels preserved: {self}")
        elif self.kind not in ("activation", "concat"):
            raise ConfigError(f"unknown layer kind '{self.kind}'")

    @property
    def param_count(self) -> int:
        if self.kind == "conv":
            return self.out_channels * self.in_channels * self.kernel ** 2 + self.out_channels
        if self.kind == "transposed-conv":
            return self.in_channels * self.out_channels * self.kernel ** 2 + self.out_channels
        return 0


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int
    out_channels: int = 1
    base_width: int = 8
    levels: int = 4

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels != 1:
            raise ConfigError(f"invalid channel config: {self}")
        if self.base_width < 1 or self.levels < 1:
            raise ConfigError(f"invalid width/levels: {self}")

    @property
    def divisor(self) -> int:
        return 2 ** self.levels


def _block_specs(block, in_c, out_c):
    return [
        (f"{block}.conv1", LayerSpec("conv", in_c, out_c, CONV_KERNEL, 1, CONV_PAD)),
        (f"{block}.relu1", LayerSpec("activation", out_c, out_c)),
        (f"{block}.conv2", LayerSpec("conv", out_c, out_c, CONV_KERNEL, 1, CONV_PAD)),
        (f"{block}.relu2", LayerSpec("activation", out_c, out_c)),
    ]


def architecture_specs(config: UNetConfig):
    """Ordered (name, LayerSpec) pairs for the whole network."""
    F, L = config.base_width, config.levels
    widths = [F * 2 ** i for i in range(L)]
    specs = []
    c = config.in_channels
    for i, w in enumerate(widths, start=1):
        specs += _block_specs(f"enc{i}", c, w)
        specs += [(f"pool{i}", LayerSpec("maxpool", w, w, 2, 2))]
        c = w
    mid = F * 2 ** L
    specs += _block_specs("mid", c, mid)
    c = mid
    for i in range(L, 0, -1):
        w = widths[i - 1]
        specs += [(f"dec{i}.up", LayerSpec("transposed-conv", c, w, UP_KERNEL, 2, 0))]
        specs += [(f"dec{i}.concat", LayerSpec("concat", 2 * w, 2 * w))]
        specs += _block_specs(f"dec{i}", 2 * w, w)
        c = w
    specs += [("out", LayerSpec("conv", c, config.out_channels, 1, 1, 0))]
    specs += [("out.sigmoid", LayerSpec("activation", config.out_channels, config.out_channels))]
    return specs


class UNet:
    """A built network: immutable architecture, mutable named weights.

    ``forward(x, train=True)`` records the caches needed by ``backward``;
    inference calls (``train=False``) keep nothing and are safe to run
    concurrently on the same instance.
    """

    def __init__(self, config: UNetConfig, params: dict):
        self.config = config
        self.params = params
        self._tape = None

    @property
    def in_channels(self) -> int:
        return self.config.in_channels

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def layer_specs(self):
        return architecture_specs(self.config)

    # -- forward -----------------------------------------------------------

    def _conv(self, prefix, x, tape, padding=CONV_PAD):
        y, cache = ops.conv2d(x, self.params[f"{prefix}.w"], self.params[f"{prefix}.b"],
                              stride=1, padding=padding)
        if tape is not None:
            tape[prefix] = cache
        return y

    def _double_conv(self, block, x, tape):
        x = self._conv(f"{block}.conv1", x, tape)
        x, c = ops.activation(x, "relu")
        if tape is not None:
            tape[f"{block}.relu1"] = c
        x = self._conv(f"{block}.conv2", x, tape)
        x, c = ops.activation(x, "relu")
        if tape is not None:
            tape[f"{block}.relu2"] = c
        return x

    def forward(self, x, train=False):
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ConfigError(
                f"expected input (n,{cfg.in_channels},h,w), got shape {tuple(x.shape)}")
        h, w = x.shape[2], x.shape[3]
        if h % cfg.divisor or w % cfg.divisor:
            raise ConfigError(
                f"input spatial dims must be divisible by {cfg.divisor}, got {h}x{w}")
        tape = {} if train else None
        skips = []
        a = x
        for i in range(1, cfg.levels + 1):
            a = self._double_conv(f"enc{i}", a, tape)
            skips.append(a)
            if tape is not None:
                tape[f"pool{i}.shape"] = a.shape
            a, idx = ops.maxpool2x2(a)
            if tape is not None:
                tape[f"pool{i}.idx"] = idx
        a = self._double_conv("mid", a, tape)
        for i in range(cfg.levels, 0, -1):
            a, cache = ops.transposed_conv2d(a, self.params[f"dec{i}.up.w"],
                                             self.params[f"dec{i}.up.b"])
            if tape is not None:
                tape[f"dec{i}.up"] = cache
            a, split = ops.concat_channels(a, skips[i - 1])
            if tape is not None:
                tape[f"dec{i}.split"] = split
            a = self._double_conv(f"dec{i}", a, tape)
        a = self._conv("out", a, tape, padding=0)
        a, cache = ops.activation(a, "sigmoid")
        if tape is not None:
            tape["out.sigmoid"] = cache
            self._tape = tape
        return a

    # -- backward ----------------------------------------------------------

    def _double_conv_backward(self, block, gy, tape, grads):
        gy = ops.activation_backward(gy, tape[f"{block}.relu2"])
        gy, gw, gb = ops.conv2d_backward(gy, tape[f"{block}.conv2"])
        grads[f"{block}.conv2.w"] = gw
        grads[f"{block}.conv2.b"] = gb
        gy = ops.activation_backward(gy, tape[f"{block}.relu1"])
        gy, gw, gb = ops.conv2d_backward(gy, tape[f"{block}.conv1"])
        grads[f"{block}.conv1.w"] = gw
        grads[f"{block}.conv1.b"] = gb
        return gy

    def backward(self, gy):
        """Backpropagate an output gradient; returns (grads, input grad).

        Requires a preceding ``forward(..., train=True)`` on the same
        instance.
        """
        tape = self._tape
        if tape is None:
            raise ConfigError("backward() called without forward(train=True)")
        cfg = self.config
        grads: dict = {}
        gy = ops.activation_backward(gy, tape["out.sigmoid"])
        gy, gw, gb = ops.conv2d_backward(gy, tape["out"])
        grads["out.w"] = gw
        grads["out.b"] = gb
        skip_grads = [None] * cfg.levels
        for i in range(1, cfg.levels + 1):  # decoder blocks in reverse execution order
            gy = self._double_conv_backward(f"dec{i}", gy, tape, grads)
            g_up, g_skip = ops.concat_channels_backward(gy, tape[f"dec{i}.split"])
            skip_grads[i - 1] = g_skip
            gy, gw, gb = ops.transposed_conv2d_backward(g_up, tape[f"dec{i}.up"])
            grads[f"dec{i}.up.w"] = gw
            grads[f"dec{i}.up.b"] = gb
        gy = self._double_conv_backward("mid", gy, tape, grads)
        for i in range(cfg.levels, 0, -1):
            gy = ops.maxpool2x2_backward(gy, tape[f"pool{i}.idx"], tape[f"pool{i}.shape"])
            gy = gy + skip_grads[i - 1]
            gy = self._double_conv_backward(f"enc{i}", gy, tape, grads)
        self._tape = None
        return grads, gy

    # -- serialization -----------------------------------------------------

    def save(self) -> bytes:
        return save_checkpoint(self.params, self.config.in_channels, self.config.base_width)

    @classmethod
    def from_checkpoint(cls, cp: Checkpoint) -> "UNet":
        config = UNetConfig(in_channels=cp.in_channels, base_width=cp.base_width)
        net = build_unet(config)
        if set(cp.params) != set(net.params):
            missing = sorted(set(net.params) - set(cp.params))
            extra = sorted(set(cp.params) - set(net.params))
            raise SchemaError(f"checkpoint arrays do not match architecture "
                              f"(missing {missing[:4]}, extra {extra[:4]})")
        for name, arr in cp.params.items():
            if arr.shape != net.params[name].shape:
                raise SchemaError(f"array '{name}' has shape {arr.shape}, "
                                  f"expected {net.params[name].shape}")
            net.params[name] = arr
        return net

    @classmethod
    def load(cls, data: bytes) -> "UNet":
        return cls.from_checkpoint(load_checkpoint(data))


def build_unet(config: UNetConfig, seed: int = 0, dtype=np.float32) -> UNet:
    """Instantiate a network with fan-in-scaled normal weights (seeded)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params: dict = {}
    for name, spec in architecture_specs(config):
        if spec.kind == "conv":
            shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
            fan_in = spec.in_channels * spec.kernel ** 2
        elif spec.kind == "transposed-conv":
            shape = (spec.in_channels, spec.out_channels, spec.kernel, spec.kernel)
            # stride 2 means each output sees in_channels taps, not in*k*k
            fan_in = spec.in_channels
        else:
            continue
        std = np.sqrt(2.0 / fan_in)
        params[f"{name}.w"] = (rng.standard_normal(shape) * std).astype(dtype)
        params[f"{name}.b"] = np.zeros(spec.out_channels, dtype=dtype)
    return UNet(config, params)
