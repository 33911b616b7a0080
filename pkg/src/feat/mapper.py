"""Latent mapper: per-row residual offsets over a configurable layer scope.

A row j inside the scope becomes w_j + alpha*h(w_j); rows outside the scope
pass through bit for bit. The mapper h is a fixed 3-layer MLP. By default
one weight set is shared by every edited row; a config switch instantiates
an independent MLP per layer instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ConfigurationError, LayerRangeError
from .generator import LEAKY_SLOPE, LatentWPlus
from .seeding import tensor_rng

MLP_DEPTH = 3


@dataclass(frozen=True)
class MapperConfig:
    w_dim: int = 64
    hidden: int = 512
    per_layer: bool = False
    num_layers: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("w_dim", "hidden", "num_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")

    def prefixes(self) -> tuple[str, ...]:
        if self.per_layer:
            return tuple(f"layer{j}." for j in range(1, self.num_layers + 1))
        return ("",)


def _mlp_tensor_names(prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}fc{d}.{kind}" for d in range(MLP_DEPTH) for kind in ("weight", "bias"))


class MapperParams:
    """Weights of the offset MLP(s). The canonical state is plain numpy."""

    def __init__(self, config: MapperConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        expected = [name for prefix in config.prefixes() for name in _mlp_tensor_names(prefix)]
        missing = [name for name in expected if name not in tensors]
        if missing:
            raise ConfigurationError(f"mapper tensors missing: {missing}")
        self.tensors = {name: np.asarray(tensors[name], dtype=np.float64) for name in expected}
        self._constants: dict[str, Tensor] | None = None

    @classmethod
    def init(cls, config: MapperConfig) -> "MapperParams":
        """Hidden layers seeded normal/sqrt(fan_in); final layer all zero.

        The zero-initialized output layer makes the initial edit the
        identity, so training starts from the unedited image.
        """
        t: dict[str, np.ndarray] = {}
        dims = (config.w_dim, config.hidden, config.hidden, config.w_dim)
        for prefix in config.prefixes():
            for d in range(MLP_DEPTH):
                fan_in, fan_out = dims[d], dims[d + 1]
                name = f"{prefix}fc{d}.weight"
                if d == MLP_DEPTH - 1:
                    t[name] = np.zeros((fan_out, fan_in))
                else:
                    t[name] = tensor_rng(config.seed, name).standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)
                t[f"{prefix}fc{d}.bias"] = np.zeros(fan_out)
        return cls(config, t)

    def constants(self) -> dict[str, Tensor]:
        if self._constants is None:
            self._constants = {name: Tensor.constant(v) for name, v in self.tensors.items()}
        return self._constants

    def trainable(self) -> dict[str, Tensor]:
        return {name: Tensor.parameter(v) for name, v in self.tensors.items()}


@dataclass(frozen=True)
class EditScope:
    """Set of wplus rows the mapper may move; all other rows are untouched."""

    edited_layers: frozenset[int]

    def __init__(self, layers: Iterable[int]):
        got = frozenset(int(j) for j in layers)
        if not got:
            raise ArgumentError("edit scope must contain at least one layer")
        if any(j < 1 for j in got):
            raise LayerRangeError(f"edit scope layers must be >= 1, got {sorted(got)}")
        object.__setattr__(self, "edited_layers", got)

    @classmethod
    def upto(cls, blend_layer: int) -> "EditScope":
        """All rows at or before the blend layer, the usual configuration."""
        if blend_layer < 1:
            raise LayerRangeError(f"blend layer must be >= 1, got {blend_layer}")
        return cls(range(1, blend_layer + 1))

    @property
    def sorted_layers(self) -> tuple[int, ...]:
        return tuple(sorted(self.edited_layers))

    def validate_for(self, num_layers: int, blend_layer: int | None = None) -> None:
        top = max(self.edited_layers)
        if top > num_layers:
            raise LayerRangeError(f"edit scope reaches layer {top} but the generator has {num_layers}")
        if blend_layer is not None and top > blend_layer:
            raise LayerRangeError(
                f"edit scope reaches layer {top} past the blend layer {blend_layer}"
            )


def mapper_mlp(rows: Tensor, tensors: Mapping[str, Tensor], prefix: str = "") -> Tensor:
    """The offset head h applied to a batch of style rows (k, w_dim)."""
    h = rows
    for d in range(MLP_DEPTH):
        h = h @ tensors[f"{prefix}fc{d}.weight"].T + tensors[f"{prefix}fc{d}.bias"]
        if d < MLP_DEPTH - 1:
            h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


def apply_mapper_graph(
    wplus: Tensor,
    config: MapperConfig,
    tensors: Mapping[str, Tensor],
    alpha: float,
    scope: EditScope,
) -> Tensor:
    """Differentiable edit of the style matrix; rows outside scope are reused as-is."""
    num_layers = wplus.shape[0]
    scope.validate_for(num_layers)
    if not math.isfinite(alpha):
        raise ArgumentError(f"alpha must be finite, got {alpha}")

    edited: dict[int, Tensor] = {}
    if config.per_layer:
        for j in scope.sorted_layers:
            row = wplus[j - 1 : j]
            edited[j] = row + alpha * mapper_mlp(row, tensors, prefix=f"layer{j}.")
    else:
        idx = [j - 1 for j in scope.sorted_layers]
        rows = wplus[idx]
        moved = rows + alpha * mapper_mlp(rows, tensors)
        for pos, j in enumerate(scope.sorted_layers):
            edited[j] = moved[pos : pos + 1]

    parts = [
        edited[j] if j in edited else wplus[j - 1 : j]
        for j in range(1, num_layers + 1)
    ]
    return ad.concat(parts, axis=0)


def apply_mapper(wplus: LatentWPlus, params: MapperParams, alpha: float, scope: EditScope) -> LatentWPlus:
    """Non-differentiable convenience wrapper over apply_mapper_graph."""
    out = apply_mapper_graph(
        Tensor.constant(wplus.rows), params.config, params.constants(), alpha, scope
    )
    return LatentWPlus(out.data)
