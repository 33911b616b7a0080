"""Miniature style-based generator with per-layer feature taps.

The synthesis path is a stack of modulated 3x3 convolutions, two layers per
resolution, starting from a learned constant at the base resolution and
doubling spatially every other layer. A single unmodulated 1x1 toRGB maps
the last feature map to the image, so the image is a function of the final
features alone; this keeps feature injection at any layer an exact splice
(see synthesize's override hook).

Layers are numbered 1..L in every public signature. Feature map ℓ lives at
resolution base·2^((ℓ-1)//2) and is tapped after the layer's activation.

All weights are float64 and immutable after construction; synthesis is a
pure function of (weights, inputs) and safe to call concurrently.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ConfigurationError, InjectionError, LayerRangeError
from .seeding import tensor_rng as _tensor_rng

LEAKY_SLOPE = 0.2
ACT_GAIN = math.sqrt(2.0)
DEMOD_EPS = 1e-8


def default_channel_schedule(num_layers: int, widest: int = 128, narrowest: int = 32) -> tuple[int, ...]:
    """Geometric interpolation from widest to narrowest, rounded up to multiples of 16."""
    if num_layers == 1:
        return (widest,)
    out = []
    for layer in range(num_layers):
        t = layer / (num_layers - 1)
        raw = widest * (narrowest / widest) ** t
        out.append(16 * math.ceil(raw / 16))
    return tuple(out)


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture hyperparameters; immutable and hashable into fingerprints."""

    z_dim: int = 64
    w_dim: int = 64
    num_layers: int = 8
    base_resolution: int = 4
    channel_schedule: tuple[int, ...] = ()
    noise_enabled: bool = False
    mapping_depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 2 or self.num_layers % 2 != 0:
            raise ConfigurationError(f"num_layers must be even and >= 2, got {self.num_layers}")
        for name in ("z_dim", "w_dim", "base_resolution", "mapping_depth"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        schedule = tuple(int(c) for c in self.channel_schedule)
        if not schedule:
            schedule = default_channel_schedule(self.num_layers)
        if len(schedule) != self.num_layers:
            raise ConfigurationError(
                f"channel_schedule has {len(schedule)} entries for {self.num_layers} layers"
            )
        if any(c < 1 for c in schedule):
            raise ConfigurationError("channel_schedule entries must be >= 1")
        object.__setattr__(self, "channel_schedule", schedule)

    @property
    def output_resolution(self) -> int:
        return self.base_resolution * 2 ** (self.num_layers // 2 - 1)

    def layer_resolution(self, layer: int) -> int:
        self._check_layer(layer)
        return self.base_resolution * 2 ** ((layer - 1) // 2)

    def feature_shape(self, layer: int) -> tuple[int, int, int]:
        r = self.layer_resolution(layer)
        return (self.channel_schedule[layer - 1], r, r)

    def _check_layer(self, layer: int) -> None:
        if not 1 <= layer <= self.num_layers:
            raise LayerRangeError(f"layer {layer} outside 1..{self.num_layers}")

    def canonical_json(self) -> str:
        payload = {
            "z_dim": self.z_dim,
            "w_dim": self.w_dim,
            "num_layers": self.num_layers,
            "base_resolution": self.base_resolution,
            "channel_schedule": list(self.channel_schedule),
            "noise_enabled": self.noise_enabled,
            "mapping_depth": self.mapping_depth,
            "seed": self.seed,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# -- light value types -----------------------------------------------------


def _finite_array(values, shape: tuple[int, ...] | None, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ArgumentError(f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class LatentZ:
    values: np.ndarray

    def __init__(self, values, z_dim: int | None = None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ArgumentError(f"latent z must be a vector, got shape {arr.shape}")
        if z_dim is not None and arr.shape != (z_dim,):
            raise ArgumentError(f"latent z must have length {z_dim}, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("latent z contains non-finite values")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class LatentWPlus:
    """Per-layer style codes, one row per synthesis layer."""

    rows: np.ndarray

    def __init__(self, rows):
        arr = np.asarray(rows, dtype=np.float64)
        if arr.ndim != 2:
            raise ArgumentError(f"wplus must be (L, w_dim), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("wplus contains non-finite values")
        object.__setattr__(self, "rows", arr)

    @property
    def num_layers(self) -> int:
        return self.rows.shape[0]

    @property
    def w_dim(self) -> int:
        return self.rows.shape[1]

    def row(self, layer: int) -> np.ndarray:
        return self.rows[layer - 1]


@dataclass(frozen=True)
class FeatureStack:
    """Per-layer feature maps, index 0 holding layer 1."""

    maps: tuple[np.ndarray, ...]

    def map(self, layer: int) -> np.ndarray:
        if not 1 <= layer <= len(self.maps):
            raise LayerRangeError(f"layer {layer} outside 1..{len(self.maps)}")
        return self.maps[layer - 1]

    @property
    def num_layers(self) -> int:
        return len(self.maps)


@dataclass(frozen=True)
class ImageTensor:
    """Raw synthesis output (3, R, R); clamping to [-1, 1] happens at export."""

    pixels: np.ndarray = field(repr=False)

    def __init__(self, pixels):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3 or arr.shape[1] != arr.shape[2]:
            raise ArgumentError(f"image must be (3, R, R), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("image contains non-finite values")
        object.__setattr__(self, "pixels", arr)

    @property
    def resolution(self) -> int:
        return self.pixels.shape[1]


# -- weights ---------------------------------------------------------------


class GeneratorWeights:
    """Named float64 tensors for one GeneratorConfig. Immutable by convention."""

    def __init__(self, config: GeneratorConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = {name: np.asarray(v, dtype=np.float64) for name, v in tensors.items()}
        self._constants: dict[str, Tensor] | None = None

    @classmethod
    def init(cls, config: GeneratorConfig) -> "GeneratorWeights":
        """Seeded initialization: unit-variance normals scaled by 1/sqrt(fan_in)."""
        seed = config.seed
        t: dict[str, np.ndarray] = {}

        dims = [config.z_dim] + [config.w_dim] * config.mapping_depth
        for d in range(config.mapping_depth):
            fan_in, fan_out = dims[d], dims[d + 1]
            rng = _tensor_rng(seed, f"mapping.{d}.weight")
            t[f"mapping.{d}.weight"] = rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)

        c0 = config.channel_schedule[0]
        base = config.base_resolution
        t["const"] = _tensor_rng(seed, "const").standard_normal((c0, base, base))

        in_channels = c0
        for layer in range(1, config.num_layers + 1):
            out_channels = config.channel_schedule[layer - 1]
            prefix = f"layer{layer}"
            rng = _tensor_rng(seed, f"{prefix}.affine.weight")
            t[f"{prefix}.affine.weight"] = rng.standard_normal((in_channels, config.w_dim)) / math.sqrt(config.w_dim)
            t[f"{prefix}.affine.bias"] = np.ones(in_channels)
            rng = _tensor_rng(seed, f"{prefix}.conv.weight")
            fan_in = in_channels * 9
            t[f"{prefix}.conv.weight"] = rng.standard_normal((out_channels, in_channels, 3, 3)) / math.sqrt(fan_in)
            if config.noise_enabled:
                r = config.layer_resolution(layer)
                t[f"{prefix}.noise.buffer"] = _tensor_rng(seed, f"{prefix}.noise.buffer").standard_normal((1, r, r))
                t[f"{prefix}.noise.strength"] = np.zeros(())
            in_channels = out_channels

        rng = _tensor_rng(seed, "torgb.weight")
        t["torgb.weight"] = rng.standard_normal((3, in_channels)) / math.sqrt(in_channels)
        return cls(config, t)

    def constant(self, name: str) -> Tensor:
        if self._constants is None:
            self._constants = {}
        got = self._constants.get(name)
        if got is None:
            got = Tensor.constant(self.tensors[name])
            self._constants[name] = got
        return got

    def fingerprint(self) -> str:
        """Hash of config and all tensors; identifies the frozen generator."""
        h = hashlib.sha256()
        h.update(self.config.canonical_json().encode("utf-8"))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype=np.float64)
            h.update(name.encode("utf-8"))
            h.update(str(arr.shape).encode("utf-8"))
            h.update(arr.tobytes())
        return h.hexdigest()


# -- mapping network -------------------------------------------------------


def mapping_graph(z: Tensor, weights: GeneratorWeights) -> Tensor:
    """(1, z_dim) -> (1, w_dim); leaky rectifier between layers, linear output."""
    config = weights.config
    h = z
    for d in range(config.mapping_depth):
        h = h @ weights.constant(f"mapping.{d}.weight").T
        if d < config.mapping_depth - 1:
            h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


def map_latent(z: LatentZ | np.ndarray, weights: GeneratorWeights) -> np.ndarray:
    """Map a sampled latent to a style code w of length w_dim."""
    config = weights.config
    values = z.values if isinstance(z, LatentZ) else np.asarray(z, dtype=np.float64)
    if values.shape != (config.z_dim,):
        raise ConfigurationError(f"latent length {values.shape} does not match z_dim {config.z_dim}")
    if not np.all(np.isfinite(values)):
        raise ArgumentError("latent z contains non-finite values")
    out = mapping_graph(Tensor.constant(values.reshape(1, -1)), weights)
    return out.data.reshape(-1).copy()


def broadcast(w: np.ndarray, num_layers: int) -> LatentWPlus:
    """Replicate one style code into identical per-layer rows."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 1:
        raise ArgumentError(f"style code must be a vector, got shape {arr.shape}")
    return LatentWPlus(np.tile(arr, (num_layers, 1)))


# -- synthesis -------------------------------------------------------------


def _layer_block(x: Tensor, layer: int, wplus: Tensor, weights: GeneratorWeights) -> Tensor:
    """One synthesis layer: optional x2 upsample, modulated conv, activation."""
    config = weights.config
    idx = layer - 1
    if idx >= 2 and idx % 2 == 0:
        x = ad.upsample2(x)

    prefix = f"layer{layer}"
    wrow = wplus[idx : idx + 1]
    style = wrow @ weights.constant(f"{prefix}.affine.weight").T + weights.constant(f"{prefix}.affine.bias")
    in_channels = style.shape[1]
    style = style.reshape(1, in_channels, 1, 1)

    modulated = weights.constant(f"{prefix}.conv.weight") * style
    sigma = ((modulated * modulated).sum(axis=(1, 2, 3), keepdims=True) + DEMOD_EPS).sqrt()
    x = ad.conv3x3(x, modulated / sigma)

    if config.noise_enabled:
        x = x + weights.constant(f"{prefix}.noise.strength") * weights.constant(f"{prefix}.noise.buffer")
    return ad.leaky_relu(x, LEAKY_SLOPE) * ACT_GAIN


def _check_wplus_tensor(wplus: Tensor, config: GeneratorConfig) -> None:
    if wplus.shape != (config.num_layers, config.w_dim):
        raise ArgumentError(
            f"wplus shape {wplus.shape} does not match (L, w_dim) = "
            f"({config.num_layers}, {config.w_dim})"
        )


def features_graph(wplus: Tensor, weights: GeneratorWeights, upto: int) -> list[Tensor]:
    """Run layers 1..upto from the learned constant; returns the tapped features."""
    config = weights.config
    config._check_layer(upto)
    _check_wplus_tensor(wplus, config)
    x = weights.constant("const")
    taps: list[Tensor] = []
    for layer in range(1, upto + 1):
        x = _layer_block(x, layer, wplus, weights)
        taps.append(x)
    return taps


def continue_graph(features: Tensor, layer: int, wplus: Tensor, weights: GeneratorWeights) -> Tensor:
    """Resume synthesis after ``layer`` whose output is ``features``; returns the image."""
    config = weights.config
    config._check_layer(layer)
    _check_wplus_tensor(wplus, config)
    expected = config.feature_shape(layer)
    if features.shape != expected:
        raise InjectionError(f"features for layer {layer} must have shape {expected}, got {features.shape}")
    x = features
    for nxt in range(layer + 1, config.num_layers + 1):
        x = _layer_block(x, nxt, wplus, weights)
    return image_graph(x, weights)


def image_graph(final_features: Tensor, weights: GeneratorWeights) -> Tensor:
    """Unmodulated 1x1 toRGB from the last feature map."""
    c, h, w = final_features.shape
    flat = final_features.reshape(c, h * w)
    rgb = weights.constant("torgb.weight") @ flat
    return rgb.reshape(3, h, w)


def synthesize_graph(wplus: Tensor, weights: GeneratorWeights) -> tuple[Tensor, list[Tensor]]:
    """Full differentiable pass: image plus all tapped features."""
    taps = features_graph(wplus, weights, weights.config.num_layers)
    return image_graph(taps[-1], weights), taps


def synthesize(
    wplus: LatentWPlus,
    weights: GeneratorWeights,
    override: tuple[int, np.ndarray] | None = None,
) -> tuple[ImageTensor, FeatureStack]:
    """Run the synthesis network, optionally splicing features in at one layer.

    With ``override=(i, F)``, layer i's tapped features are replaced by F
    before layers > i run; rows j > i of wplus modulate the continuation.
    Passing back a stack's own map i reproduces the unmodified image bit for
    bit, which is what makes masked feature blending an exact operation.
    """
    config = weights.config
    if wplus.rows.shape != (config.num_layers, config.w_dim):
        raise ArgumentError(
            f"wplus shape {wplus.rows.shape} does not match (L, w_dim) = "
            f"({config.num_layers}, {config.w_dim})"
        )
    injected: tuple[int, np.ndarray] | None = None
    if override is not None:
        layer, feat = override
        config._check_layer(layer)
        feat = np.asarray(feat, dtype=np.float64)
        expected = config.feature_shape(layer)
        if feat.shape != expected:
            raise InjectionError(
                f"override for layer {layer} must have shape {expected}, got {feat.shape}"
            )
        injected = (layer, feat)

    wplus_t = Tensor.constant(wplus.rows)
    x = weights.constant("const")
    taps: list[np.ndarray] = []
    for layer in range(1, config.num_layers + 1):
        x = _layer_block(x, layer, wplus_t, weights)
        if injected is not None and layer == injected[0]:
            x = Tensor.constant(injected[1])
        taps.append(x.data)
    image = image_graph(x, weights)
    return ImageTensor(image.data), FeatureStack(tuple(taps))
