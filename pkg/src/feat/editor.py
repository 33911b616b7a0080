"""End-to-end edit pipeline: two synthesis passes joined by a masked blend.

The original pass supplies the feature stack the attention module reads and
the features that survive outside the mask. The mapped pass rebuilds layers
up to the blend layer from the edited codes. The blended features continue
through the remaining layers under the ORIGINAL codes, so everything past
the blend layer is driven by the unedited latent.

One graph function, run_edit_pass, is the single source of truth; the
public edit_image / edit_with_frozen_mask wrappers and the trainer all go
through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .attention import (
    DEFAULT_TAU,
    AttentionConfig,
    AttentionMask,
    AttentionParams,
    compute_mask_graph,
    threshold_mask,
)
from .autodiff import Tensor
from .errors import ArgumentError, BlendError, ConfigurationError, MaskError, StaleModelError
from .generator import (
    FeatureStack,
    GeneratorWeights,
    ImageTensor,
    LatentWPlus,
    continue_graph,
    features_graph,
)
from .mapper import EditScope, MapperConfig, MapperParams, apply_mapper_graph

MASK_MODES = ("soft", "hard")


@dataclass(frozen=True)
class EditConfig:
    """Where and how strongly the edit is applied.

    mask_mode selects soft probabilities (training) or a thresholded binary
    mask (inference). attention_muted forces the mask to 1 everywhere, the
    unrestricted-edit ablation.
    """

    blend_layer: int
    scope: EditScope | None = None
    alpha: float = 0.1
    tau: float = DEFAULT_TAU
    mask_mode: str = "hard"
    attention_muted: bool = False

    def __post_init__(self):
        if self.blend_layer < 1:
            raise ConfigurationError(f"blend_layer must be >= 1, got {self.blend_layer}")
        if not math.isfinite(self.alpha):
            raise ConfigurationError(f"alpha must be finite, got {self.alpha}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError(f"tau must lie in [0, 1], got {self.tau}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigurationError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        scope = self.scope if self.scope is not None else EditScope.upto(self.blend_layer)
        scope.validate_for(self.blend_layer, blend_layer=self.blend_layer)
        object.__setattr__(self, "scope", scope)


@dataclass
class EditModel:
    """The trained artifact: mapper plus attention bound to one generator."""

    mapper: MapperParams
    attention: AttentionParams
    config: EditConfig
    prompt: str
    generator_fingerprint: str
    frozen_mask: AttentionMask | None = None


def blend(s_orig: np.ndarray, s_mapped: np.ndarray, mask: AttentionMask | np.ndarray) -> np.ndarray:
    """Per-location convex mix m*mapped + (1-m)*orig, broadcast over channels.

    Endpoints are exact: entries where m is 0 or 1 are copied bit for bit
    from the respective pass.
    """
    s_orig = np.asarray(s_orig, dtype=np.float64)
    s_mapped = np.asarray(s_mapped, dtype=np.float64)
    m = mask.values if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)
    if s_orig.shape != s_mapped.shape:
        raise BlendError(f"feature shapes differ: {s_orig.shape} vs {s_mapped.shape}")
    if m.shape[-2:] != s_orig.shape[-2:]:
        raise BlendError(f"mask spatial shape {m.shape[-2:]} does not match features {s_orig.shape[-2:]}")
    out = ad.blend(Tensor.constant(s_orig), Tensor.constant(s_mapped), Tensor.constant(m))
    return out.data


@dataclass
class EditPass:
    """Everything one edit produces, with graph tensors where gradients flow."""

    image: Tensor
    mask: Tensor
    w_edited: Tensor
    blended: Tensor
    s_orig: np.ndarray
    original_stack: FeatureStack
    mask_differentiable: bool


def run_edit_pass(
    wplus: LatentWPlus,
    weights: GeneratorWeights,
    mapper_config: MapperConfig,
    mapper_tensors: Mapping[str, Tensor],
    config: EditConfig,
    attention_config: AttentionConfig | None = None,
    attention_tensors: Mapping[str, Tensor] | None = None,
    frozen_mask: AttentionMask | None = None,
) -> EditPass:
    """The six-step pipeline over autodiff tensors.

    1. original pass taps all layers (constants: the generator is frozen and
       the attention input must not depend on the mapper);
    2. the mask: all-ones when muted, the frozen mask verbatim when given,
       otherwise computed from the original stack (thresholded in hard mode);
    3. the mapper edits the in-scope rows;
    4. a partial pass rebuilds features up to the blend layer from the
       edited codes;
    5. original and mapped features blend under the mask;
    6. synthesis continues under the original codes.
    """
    gen_config = weights.config
    num_layers = gen_config.num_layers
    i = config.blend_layer
    if i > num_layers:
        raise ConfigurationError(f"blend layer {i} exceeds generator depth {num_layers}")
    if wplus.rows.shape != (num_layers, gen_config.w_dim):
        raise ArgumentError(
            f"wplus shape {wplus.rows.shape} does not match generator "
            f"({num_layers}, {gen_config.w_dim})"
        )
    blend_res = gen_config.layer_resolution(i)

    wplus_const = Tensor.constant(wplus.rows)
    orig_taps = features_graph(wplus_const, weights, upto=num_layers)
    s_orig = orig_taps[i - 1].data
    original_stack = FeatureStack(tuple(t.data for t in orig_taps))

    mask_differentiable = False
    if config.attention_muted:
        mask_t = Tensor.constant(np.ones((1, blend_res, blend_res)))
    elif frozen_mask is not None:
        if frozen_mask.resolution != blend_res:
            raise MaskError(
                f"frozen mask resolution {frozen_mask.resolution} does not match "
                f"blend layer {i} resolution {blend_res}"
            )
        mask_t = Tensor.constant(frozen_mask.values)
    else:
        if attention_config is None or attention_tensors is None:
            raise ConfigurationError("attention params required unless muted or a frozen mask is given")
        soft = compute_mask_graph(orig_taps, i, attention_config, attention_tensors)
        if config.mask_mode == "hard":
            mask_t = Tensor.constant(threshold_mask(AttentionMask(soft.data), config.tau).values)
        else:
            mask_t = soft
            mask_differentiable = True

    w_edited = apply_mapper_graph(wplus_const, mapper_config, mapper_tensors, config.alpha, config.scope)
    mapped_taps = features_graph(w_edited, weights, upto=i)
    blended = ad.blend(orig_taps[i - 1], mapped_taps[-1], mask_t)
    image = continue_graph(blended, i, wplus_const, weights)

    return EditPass(
        image=image,
        mask=mask_t,
        w_edited=w_edited,
        blended=blended,
        s_orig=s_orig,
        original_stack=original_stack,
        mask_differentiable=mask_differentiable,
    )


def edit_image(
    wplus: LatentWPlus, model: EditModel, weights: GeneratorWeights
) -> tuple[ImageTensor, AttentionMask, LatentWPlus]:
    """Apply a trained edit model to one latent.

    Returns the edited image, the mask actually used (binary in hard mode),
    and the edited codes.
    """
    if model.generator_fingerprint != weights.fingerprint():
        raise StaleModelError(
            "edit model was trained against a different generator "
            f"(model fingerprint {model.generator_fingerprint[:12]}..)"
        )
    out = run_edit_pass(
        wplus,
        weights,
        model.mapper.config,
        model.mapper.constants(),
        model.config,
        attention_config=model.attention.config,
        attention_tensors=model.attention.constants(),
        frozen_mask=model.frozen_mask,
    )
    return ImageTensor(out.image.data), AttentionMask(out.mask.data), LatentWPlus(out.w_edited.data)


def edit_with_frozen_mask(
    wplus: LatentWPlus,
    step2_mapper: MapperParams,
    frozen: AttentionMask,
    config: EditConfig,
    weights: GeneratorWeights,
) -> ImageTensor:
    """The two-step inference path: the given mask is used verbatim."""
    out = run_edit_pass(
        wplus,
        weights,
        step2_mapper.config,
        step2_mapper.constants(),
        config,
        frozen_mask=frozen,
    )
    return ImageTensor(out.image.data)
