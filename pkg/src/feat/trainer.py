"""Training loops for the mapper and attention networks.

The generator stays frozen throughout; only mapper and attention tensors
enter the optimizer. Every source of randomness is a named stream derived
from the config seed, so a (seed, config, embedder) triple fully determines
the trained parameters and the numeric content of the history.

Includes the two-step variant (first prompt defines the mask, second one
drives the edit) and a finite-difference gradient-check harness.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .attention import (
    AttentionConfig,
    AttentionMask,
    AttentionParams,
    compute_mask,
    compute_mask_graph,
    threshold_mask,
)
from .autodiff import Tensor
from .editor import EditConfig, EditModel, run_edit_pass
from .errors import ArgumentError, ConfigurationError, NumericError
from .generator import GeneratorWeights, broadcast, features_graph, map_latent, synthesize
from .losses_metrics import (
    LossReport,
    LossWeights,
    att_loss_graph,
    clip_loss_graph,
    latent_loss_graph,
    total_loss_graph,
    tv_loss_graph,
)
from .mapper import MapperConfig, MapperParams, apply_mapper_graph
from .seeding import tensor_rng

log = logging.getLogger(__name__)

GRADCHECK_EPSILON = 1e-5
GRADCHECK_COORDS = 64
# Two-step blending sits two thirds of the way up the stack (layer 12 of 18).
TWO_STEP_BLEND_FRACTION = 2.0 / 3.0


def two_step_blend_layer(num_layers: int) -> int:
    if num_layers < 1:
        raise ArgumentError(f"num_layers must be >= 1, got {num_layers}")
    return math.ceil(TWO_STEP_BLEND_FRACTION * num_layers)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters plus the edit being trained."""

    edit: EditConfig
    learning_rate: float = 1e-4
    batch_size: int = 2
    iterations: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {b}")
        if self.adam_eps <= 0:
            raise ConfigurationError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.log_every < 1:
            raise ConfigurationError(f"log_every must be >= 1, got {self.log_every}")


@dataclass(frozen=True)
class TrainHistory:
    """Per-logged-step loss records. Wall-clock is informational only and is
    excluded from deterministic comparisons."""

    steps: tuple[int, ...]
    reports: tuple[LossReport, ...]
    mean_mask: tuple[float, ...]
    wall_clock: tuple[float, ...]

    def __post_init__(self):
        n = len(self.steps)
        if not (len(self.reports) == len(self.mean_mask) == len(self.wall_clock) == n):
            raise ArgumentError("history series lengths differ")

    def __len__(self) -> int:
        return len(self.steps)

    def check(self, weights: LossWeights) -> None:
        for report in self.reports:
            report.check(weights)

    def entries(self) -> list[dict]:
        return [
            {"step": s, **r.as_dict(), "mean_mask": m, "wall_clock": w}
            for s, r, m, w in zip(self.steps, self.reports, self.mean_mask, self.wall_clock)
        ]

    def deterministic_state(self) -> list[dict]:
        return [
            {"step": s, **r.as_dict(), "mean_mask": m}
            for s, r, m in zip(self.steps, self.reports, self.mean_mask)
        ]


@dataclass(frozen=True)
class StepState:
    """Snapshot handed to on_step callbacks after each optimizer update."""

    step: int
    report: LossReport
    mean_mask: float
    mapper: MapperParams
    attention: AttentionParams


class Adam:
    """In-place Adam over named tensors, iterated in sorted-name order."""

    def __init__(self, params: Mapping[str, Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not params:
            raise ArgumentError("optimizer needs at least one parameter")
        self._order = tuple(sorted(params))
        self._params = dict(params)
        self._m = {k: np.zeros_like(self._params[k].data) for k in self._order}
        self._v = {k: np.zeros_like(self._params[k].data) for k in self._order}
        self._lr = learning_rate
        self._beta1 = beta1
        self._beta2 = beta2
        self._eps = eps
        self._t = 0

    def zero_grad(self) -> None:
        for k in self._order:
            self._params[k].grad = None

    def step(self) -> None:
        self._t += 1
        bias1 = 1.0 - self._beta1 ** self._t
        bias2 = 1.0 - self._beta2 ** self._t
        for k in self._order:
            p = self._params[k]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self._m[k]
            v = self._v[k]
            m *= self._beta1
            m += (1.0 - self._beta1) * g
            v *= self._beta2
            v += (1.0 - self._beta2) * (g * g)
            p.data -= self._lr * (m / bias1) / (np.sqrt(v / bias2) + self._eps)


def _derive_mapper_config(weights: GeneratorWeights, seed: int) -> MapperConfig:
    g = weights.config
    return MapperConfig(w_dim=g.w_dim, num_layers=g.num_layers, seed=seed)


def _derive_attention_config(weights: GeneratorWeights, seed: int) -> AttentionConfig:
    return AttentionConfig(channels=weights.config.channel_schedule, seed=seed)


def _check_compat(weights: GeneratorWeights, mapper_config: MapperConfig, edit: EditConfig) -> None:
    g = weights.config
    if mapper_config.w_dim != g.w_dim or mapper_config.num_layers != g.num_layers:
        raise ConfigurationError(
            f"mapper config ({mapper_config.num_layers}, {mapper_config.w_dim}) does not "
            f"match generator ({g.num_layers}, {g.w_dim})"
        )
    if edit.blend_layer > g.num_layers:
        raise ConfigurationError(
            f"blend layer {edit.blend_layer} exceeds generator depth {g.num_layers}"
        )


def _batch_mean(terms: Sequence[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc / float(len(terms))


def _snapshot_mapper(config: MapperConfig, tensors: Mapping[str, Tensor]) -> MapperParams:
    return MapperParams(config, {k: t.data.copy() for k, t in tensors.items()})


def _snapshot_attention(config: AttentionConfig, tensors: Mapping[str, Tensor]) -> AttentionParams:
    return AttentionParams(config, {k: t.data.copy() for k, t in tensors.items()})


def _fit(
    prompt: str,
    embedder,
    weights: GeneratorWeights,
    cfg: TrainConfig,
    mapper_config: MapperConfig,
    mapper_tensors: dict[str, Tensor],
    attention_config: AttentionConfig,
    attention_tensors: dict[str, Tensor],
    *,
    train_attention: bool,
    mask_mode: str,
    frozen_mask: AttentionMask | None,
    stream: str,
    on_step: Callable[[StepState], None] | None,
) -> TrainHistory:
    """The shared optimization loop; samples fresh latents every step."""
    g = weights.config
    run_cfg = replace(cfg.edit, mask_mode=mask_mode)

    trainable = {f"mapper.{k}": t for k, t in mapper_tensors.items()}
    if train_attention:
        trainable.update({f"attention.{k}": t for k, t in attention_tensors.items()})
    adam = Adam(trainable, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    steps: list[int] = []
    reports: list[LossReport] = []
    mask_series: list[float] = []
    clocks: list[float] = []

    for step in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        stream_name = f"{stream}/step{step}"
        zs = tensor_rng(cfg.seed, stream_name).standard_normal((cfg.batch_size, g.z_dim))

        clip_terms, att_terms, tv_terms, l2_terms = [], [], [], []
        mask_means = []
        for z in zs:
            wplus = broadcast(map_latent(z, weights), g.num_layers)
            out = run_edit_pass(
                wplus,
                weights,
                mapper_config,
                mapper_tensors,
                run_cfg,
                attention_config=attention_config,
                attention_tensors=attention_tensors,
                frozen_mask=frozen_mask,
            )
            clip_terms.append(clip_loss_graph(out.image, prompt, embedder))
            att_terms.append(att_loss_graph(out.mask))
            tv_terms.append(tv_loss_graph(out.mask))
            l2_terms.append(latent_loss_graph(Tensor.constant(wplus.rows), out.w_edited))
            mask_means.append(float(out.mask.data.mean()))

        total_t, report = total_loss_graph(
            _batch_mean(clip_terms),
            _batch_mean(att_terms),
            _batch_mean(tv_terms),
            _batch_mean(l2_terms),
            cfg.weights,
        )
        if not math.isfinite(report.total):
            raise NumericError(
                f"non-finite loss at step {step}: {report.as_dict()}; "
                f"offending batch stream '{stream_name}' under base seed {cfg.seed}"
            )
        adam.zero_grad()
        total_t.backward()
        adam.step()

        mean_mask = float(np.mean(mask_means))
        if on_step is not None:
            on_step(StepState(
                step=step,
                report=report,
                mean_mask=mean_mask,
                mapper=_snapshot_mapper(mapper_config, mapper_tensors),
                attention=_snapshot_attention(attention_config, attention_tensors),
            ))
        if step % cfg.log_every == 0 or step == cfg.iterations:
            steps.append(step)
            reports.append(report)
            mask_series.append(mean_mask)
            clocks.append(time.perf_counter() - t0)
            log.info("step %d: total=%.6f clip=%.6f mean_mask=%.4f",
                     step, report.total, report.clip, mean_mask)

    return TrainHistory(tuple(steps), tuple(reports), tuple(mask_series), tuple(clocks))


def train_edit_model(
    prompt: str,
    embedder,
    weights: GeneratorWeights,
    cfg: TrainConfig,
    *,
    mapper_config: MapperConfig | None = None,
    attention_config: AttentionConfig | None = None,
    on_step: Callable[[StepState], None] | None = None,
) -> tuple[EditModel, TrainHistory]:
    """Jointly train mapper and attention against one prompt.

    Training always runs with soft masks so gradients reach the attention
    network; the returned model is switched to hard masks for inference.
    """
    if mapper_config is None:
        mapper_config = _derive_mapper_config(weights, cfg.seed)
    if attention_config is None:
        attention_config = _derive_attention_config(weights, cfg.seed)
    _check_compat(weights, mapper_config, cfg.edit)

    mapper_tensors = MapperParams.init(mapper_config).trainable()
    attention_tensors = AttentionParams.init(attention_config).trainable()

    history = _fit(
        prompt, embedder, weights, cfg, mapper_config, mapper_tensors,
        attention_config, attention_tensors,
        train_attention=True,
        mask_mode="soft",
        frozen_mask=None,
        stream="train",
        on_step=on_step,
    )
    model = EditModel(
        mapper=_snapshot_mapper(mapper_config, mapper_tensors),
        attention=_snapshot_attention(attention_config, attention_tensors),
        config=replace(cfg.edit, mask_mode="hard"),
        prompt=prompt,
        generator_fingerprint=weights.fingerprint(),
    )
    return model, history


def canonical_frozen_mask(
    model: EditModel, weights: GeneratorWeights, seed: int
) -> AttentionMask:
    """Hard mask of one designated latent, the mask the two-step edit reports."""
    g = weights.config
    z = tensor_rng(seed, "two_step/canonical").standard_normal(g.z_dim)
    wplus = broadcast(map_latent(z, weights), g.num_layers)
    _, stack = synthesize(wplus, weights)
    soft = compute_mask(stack, model.config.blend_layer, model.attention)
    return threshold_mask(soft, model.config.tau)


def train_two_step(
    prompt1: str,
    prompt2: str,
    embedder,
    weights: GeneratorWeights,
    cfg: TrainConfig,
    *,
    single_mask: bool = False,
    on_step1: Callable[[StepState], None] | None = None,
    on_step2: Callable[[StepState], None] | None = None,
    history_sink: list[TrainHistory] | None = None,
) -> tuple[EditModel, AttentionMask]:
    """First prompt learns the mask, second prompt learns the edit under it.

    After step 1 the attention parameters are frozen. By default step 2
    thresholds a fresh mask from them for every sampled image; with
    single_mask=True the canonical mask is applied to every image verbatim.
    Either way the mask is a constant in step 2, so attention receives no
    gradient and only the fresh mapper trains. history_sink, if given,
    receives the histories of both steps in order.
    """
    step1_model, history1 = train_edit_model(prompt1, embedder, weights, cfg, on_step=on_step1)
    frozen = canonical_frozen_mask(step1_model, weights, cfg.seed)

    mapper_config = _derive_mapper_config(weights, cfg.seed)
    mapper_tensors = MapperParams.init(mapper_config).trainable()
    attention_constants = step1_model.attention.constants()

    history = _fit(
        prompt2, embedder, weights, cfg, mapper_config, mapper_tensors,
        step1_model.attention.config, attention_constants,
        train_attention=False,
        mask_mode="hard",
        frozen_mask=frozen if single_mask else None,
        stream="train2",
        on_step=on_step2,
    )
    if history_sink is not None:
        history_sink.extend([history1, history])
    step2_model = EditModel(
        mapper=_snapshot_mapper(mapper_config, mapper_tensors),
        attention=step1_model.attention,
        config=replace(cfg.edit, mask_mode="hard"),
        prompt=prompt2,
        generator_fingerprint=weights.fingerprint(),
        frozen_mask=frozen if single_mask else None,
    )
    return step2_model, frozen


def grad_check(
    objective: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = GRADCHECK_EPSILON,
    *,
    num_coords: int = GRADCHECK_COORDS,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    Probes num_coords randomly chosen parameter coordinates (all of them if
    fewer exist). The objective must rebuild its graph on every call so the
    perturbed parameter values take effect.
    """
    if epsilon <= 0:
        raise ArgumentError(f"epsilon must be positive, got {epsilon}")
    if not params:
        raise ArgumentError("grad_check needs at least one parameter")
    order = sorted(params)

    for name in order:
        params[name].grad = None
    out = objective()
    if out.data.shape != ():
        raise ArgumentError(f"objective must be scalar, got shape {out.data.shape}")
    if not math.isfinite(float(out.data)):
        raise NumericError("objective is non-finite at the evaluation point")
    out.backward()
    analytic = {
        name: (params[name].grad.copy() if params[name].grad is not None
               else np.zeros_like(params[name].data))
        for name in order
    }

    coords = [(name, idx) for name in order for idx in range(params[name].data.size)]
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    if len(coords) > num_coords:
        chosen = sorted(rng.choice(len(coords), size=num_coords, replace=False))
        coords = [coords[c] for c in chosen]

    worst = 0.0
    for name, flat_idx in coords:
        data = params[name].data
        idx = np.unravel_index(flat_idx, data.shape)
        saved = data[idx]
        data[idx] = saved + epsilon
        hi = float(objective().data)
        data[idx] = saved - epsilon
        lo = float(objective().data)
        data[idx] = saved
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"objective non-finite while probing {name}[{flat_idx}]")
        numeric = (hi - lo) / (2.0 * epsilon)
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
        worst = max(worst, rel)
    return worst


def standard_grad_checks(
    prompt: str,
    embedder,
    weights: GeneratorWeights,
    cfg: TrainConfig,
    *,
    epsilon: float = GRADCHECK_EPSILON,
    num_coords: int = GRADCHECK_COORDS,
    seed: int = 0,
) -> dict[str, float]:
    """Gradient-check every loss term in isolation plus the full objective.

    Mapper tensors get a small random nudge first; at the exact zero init
    the latent offset sits on the norm kink where one-sided differences
    disagree with the subgradient.
    """
    g = weights.config
    mapper_config = _derive_mapper_config(weights, cfg.seed)
    attention_config = _derive_attention_config(weights, cfg.seed)
    _check_compat(weights, mapper_config, cfg.edit)

    mapper_init = MapperParams.init(mapper_config)
    nudged = {
        name: arr + 0.01 * tensor_rng(seed, f"gradcheck/nudge/{name}").standard_normal(arr.shape)
        for name, arr in mapper_init.tensors.items()
    }
    mapper_tensors = MapperParams(mapper_config, nudged).trainable()
    attention_tensors = AttentionParams.init(attention_config).trainable()
    mapper_named = {f"mapper.{k}": t for k, t in mapper_tensors.items()}
    attention_named = {f"attention.{k}": t for k, t in attention_tensors.items()}

    z = tensor_rng(seed, "gradcheck/z").standard_normal(g.z_dim)
    wplus = broadcast(map_latent(z, weights), g.num_layers)
    run_cfg = replace(cfg.edit, mask_mode="soft", attention_muted=False)

    def pipeline():
        return run_edit_pass(
            wplus, weights, mapper_config, mapper_tensors, run_cfg,
            attention_config=attention_config, attention_tensors=attention_tensors,
        )

    # The original taps are constants; computing them once keeps the
    # mask-only probes cheap.
    taps = features_graph(Tensor.constant(wplus.rows), weights, upto=g.num_layers)

    def mask_only():
        return compute_mask_graph(taps, cfg.edit.blend_layer, attention_config, attention_tensors)

    def total_objective():
        out = pipeline()
        total_t, _ = total_loss_graph(
            clip_loss_graph(out.image, prompt, embedder),
            att_loss_graph(out.mask),
            tv_loss_graph(out.mask),
            latent_loss_graph(Tensor.constant(wplus.rows), out.w_edited),
            cfg.weights,
        )
        return total_t

    check = lambda objective, named: grad_check(
        objective, named, epsilon, num_coords=num_coords, seed=seed)
    return {
        "clip": check(lambda: clip_loss_graph(pipeline().image, prompt, embedder),
                      {**mapper_named, **attention_named}),
        "att": check(lambda: att_loss_graph(mask_only()), attention_named),
        "tv": check(lambda: tv_loss_graph(mask_only()), attention_named),
        "l2": check(lambda: latent_loss_graph(
            Tensor.constant(wplus.rows),
            apply_mapper_graph(Tensor.constant(wplus.rows), mapper_config, mapper_tensors,
                               cfg.edit.alpha, cfg.edit.scope)), mapper_named),
        "total": check(total_objective, {**mapper_named, **attention_named}),
    }
