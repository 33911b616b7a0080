"""Learned spatial attention over synthesis features.

Every tapped feature map is reduced to a common channel width by a 1x1
convolution, resized to the blend layer's resolution, and concatenated in
layer order; a final 1x1 projection and a sigmoid yield one probability
per spatial location. Inference binarizes the mask with a strict
threshold; training consumes the soft probabilities directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ConfigurationError, LayerRangeError
from .generator import FeatureStack
from .seeding import tensor_rng

DEFAULT_TAU = 0.8


@dataclass(frozen=True)
class AttentionConfig:
    """Channel widths of the consumed feature stack plus module hyperparameters."""

    channels: tuple[int, ...]
    c_red: int = 32
    resize_mode: str = "bilinear"
    use_bias: bool = False
    seed: int = 0

    def __post_init__(self):
        channels = tuple(int(c) for c in self.channels)
        if not channels:
            raise ConfigurationError("attention needs at least one feature layer")
        if any(c < 1 for c in channels):
            raise ConfigurationError("channel widths must be >= 1")
        if self.c_red < 1:
            raise ConfigurationError(f"c_red must be >= 1, got {self.c_red}")
        if self.resize_mode not in ("bilinear", "nearest"):
            raise ConfigurationError(f"unknown resize_mode {self.resize_mode!r}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        object.__setattr__(self, "channels", channels)

    @property
    def num_layers(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class AttentionMask:
    """Per-location blending weights (1, H, W) in [0, 1]; soft or binary."""

    values: np.ndarray

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 1 or arr.shape[1] != arr.shape[2]:
            raise ArgumentError(f"mask must be (1, H, H), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("mask contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ArgumentError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def resolution(self) -> int:
        return self.values.shape[1]

    def mean(self) -> float:
        return float(self.values.mean())


class AttentionParams:
    """1x1 reduction weights per layer plus the single fusion projection."""

    def __init__(self, config: AttentionConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        expected = self._tensor_names(config)
        missing = [name for name in expected if name not in tensors]
        if missing:
            raise ConfigurationError(f"attention tensors missing: {missing}")
        self.tensors = {name: np.asarray(tensors[name], dtype=np.float64) for name in expected}
        for layer, c in enumerate(config.channels, start=1):
            shape = self.tensors[f"reduce{layer}.weight"].shape
            if shape != (config.c_red, c):
                raise ConfigurationError(
                    f"reduce{layer}.weight has shape {shape}, expected {(config.c_red, c)}"
                )
        fuse_in = config.num_layers * config.c_red
        if self.tensors["fuse.weight"].shape != (1, fuse_in):
            raise ConfigurationError(
                f"fuse.weight has shape {self.tensors['fuse.weight'].shape}, expected (1, {fuse_in})"
            )
        self._constants: dict[str, Tensor] | None = None

    @staticmethod
    def _tensor_names(config: AttentionConfig) -> list[str]:
        names = []
        for layer in range(1, config.num_layers + 1):
            names.append(f"reduce{layer}.weight")
            if config.use_bias:
                names.append(f"reduce{layer}.bias")
        names.append("fuse.weight")
        if config.use_bias:
            names.append("fuse.bias")
        return names

    @classmethod
    def init(cls, config: AttentionConfig) -> "AttentionParams":
        """Seeded normals scaled by 1/sqrt(fan_in); biases, when enabled, zero."""
        t: dict[str, np.ndarray] = {}
        for layer, c in enumerate(config.channels, start=1):
            name = f"reduce{layer}.weight"
            t[name] = tensor_rng(config.seed, name).standard_normal((config.c_red, c)) / math.sqrt(c)
            if config.use_bias:
                t[f"reduce{layer}.bias"] = np.zeros(config.c_red)
        fuse_in = config.num_layers * config.c_red
        t["fuse.weight"] = tensor_rng(config.seed, "fuse.weight").standard_normal((1, fuse_in)) / math.sqrt(fuse_in)
        if config.use_bias:
            t["fuse.bias"] = np.zeros(1)
        return cls(config, t)

    def constants(self) -> dict[str, Tensor]:
        if self._constants is None:
            self._constants = {name: Tensor.constant(v) for name, v in self.tensors.items()}
        return self._constants

    def trainable(self) -> dict[str, Tensor]:
        return {name: Tensor.parameter(v) for name, v in self.tensors.items()}


def _conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    c, h, w = x.shape
    out = weight @ x.reshape(c, h * w)
    if bias is not None:
        out = out + bias.reshape(bias.shape[0], 1)
    return out.reshape(weight.shape[0], h, w)


def compute_mask_graph(
    maps: Sequence[Tensor],
    blend_layer: int,
    config: AttentionConfig,
    tensors: Mapping[str, Tensor],
) -> Tensor:
    """Differentiable mask: (1, r_i, r_i) with entries strictly inside (0, 1)."""
    if len(maps) != config.num_layers:
        raise ConfigurationError(
            f"got {len(maps)} feature maps for {config.num_layers} attention layers"
        )
    if not 1 <= blend_layer <= config.num_layers:
        raise LayerRangeError(f"blend layer {blend_layer} outside 1..{config.num_layers}")
    for layer, (fmap, c) in enumerate(zip(maps, config.channels), start=1):
        if fmap.shape[0] != c:
            raise ConfigurationError(
                f"layer {layer} features have {fmap.shape[0]} channels, params expect {c}"
            )
    resize = ad.resize_nearest if config.resize_mode == "nearest" else ad.resize_bilinear
    target = (maps[blend_layer - 1].shape[1], maps[blend_layer - 1].shape[2])

    reduced = []
    for layer, fmap in enumerate(maps, start=1):
        bias = tensors.get(f"reduce{layer}.bias") if config.use_bias else None
        r = _conv1x1(fmap, tensors[f"reduce{layer}.weight"], bias)
        if r.shape[1:] != target:
            r = resize(r, target)
        reduced.append(r)
    fused = ad.concat(reduced, axis=0)
    bias = tensors.get("fuse.bias") if config.use_bias else None
    logits = _conv1x1(fused, tensors["fuse.weight"], bias)
    return ad.sigmoid(logits)


def compute_mask(features: FeatureStack, blend_layer: int, params: AttentionParams) -> AttentionMask:
    """Mask from an original-pass feature stack (the pass with unedited codes)."""
    maps = [Tensor.constant(m) for m in features.maps]
    out = compute_mask_graph(maps, blend_layer, params.config, params.constants())
    return AttentionMask(out.data)


def threshold_mask(mask: AttentionMask, tau: float) -> AttentionMask:
    """Binary mask keeping locations strictly above tau; ties fall outside."""
    if not 0.0 <= tau <= 1.0:
        raise ArgumentError(f"tau must lie in [0, 1], got {tau}")
    return AttentionMask(np.where(mask.values > tau, 1.0, 0.0))
