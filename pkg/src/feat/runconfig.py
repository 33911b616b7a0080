"""Run configuration files: schema validation and domain-object construction.

A run config is one JSON document describing the generator, the training
setup, the edit, and the embedder. It is validated against the published
schema before any numeric work starts; unknown keys are rejected so typos
fail loudly instead of silently using a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import jsonschema

from .editor import EditConfig
from .errors import ConfigurationError, FeatError
from .generator import GeneratorConfig
from .losses_metrics import LossWeights
from .mapper import EditScope
from .trainer import TrainConfig

RUNCONFIG_FORMAT_VERSION = 1
DEFAULT_EVAL_SAMPLES = 256

_SCHEMA_PATH = Path(__file__).parent / "schemas" / "runconfig.schema.json"


@lru_cache(maxsize=1)
def _schema() -> dict:
    return json.loads(_SCHEMA_PATH.read_text())


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, plus the hash that names the run."""

    format_version: int
    output_dir: str
    generator: GeneratorConfig
    train: TrainConfig
    embedder_spec: dict
    prompt: str | None
    prompts: tuple[str, str] | None
    eval_samples: int
    eval_seed: int
    config_sha256: str

    @property
    def edit(self) -> EditConfig:
        return self.train.edit

    def require_prompt(self) -> str:
        if self.prompt is None:
            raise ConfigurationError("this command needs a 'prompt' in the config")
        return self.prompt

    def require_prompts(self) -> tuple[str, str]:
        if self.prompts is None:
            raise ConfigurationError("this command needs a two-element 'prompts' list in the config")
        return self.prompts


def _build_generator(section: dict) -> GeneratorConfig:
    kwargs = dict(section)
    if "channel_schedule" in kwargs:
        kwargs["channel_schedule"] = tuple(kwargs["channel_schedule"])
    return GeneratorConfig(**kwargs)


def _build_edit(section: dict) -> EditConfig:
    kwargs = dict(section)
    if "scope" in kwargs:
        kwargs["scope"] = EditScope(kwargs["scope"])
    return EditConfig(**kwargs)


def _build_train(section: dict, edit: EditConfig) -> TrainConfig:
    kwargs = dict(section)
    if "weights" in kwargs:
        kwargs["weights"] = LossWeights(**kwargs["weights"])
    return TrainConfig(edit=edit, **kwargs)


def parse_run_config(document: dict, source: str = "<config>") -> RunConfig:
    try:
        jsonschema.validate(document, _schema())
    except jsonschema.ValidationError as exc:
        raise ConfigurationError(f"{source}: {exc.json_path}: {exc.message}") from exc
    if document["format_version"] != RUNCONFIG_FORMAT_VERSION:
        raise ConfigurationError(
            f"{source}: unsupported format_version {document['format_version']} "
            f"(this build reads {RUNCONFIG_FORMAT_VERSION})"
        )
    digest = hashlib.sha256(
        json.dumps(document, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    try:
        generator = _build_generator(document["generator"])
        edit = _build_edit(document["edit"])
        train = _build_train(document["train"], edit)
    except FeatError as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    except TypeError as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    eval_section = document.get("eval", {})
    prompts = document.get("prompts")
    return RunConfig(
        format_version=document["format_version"],
        output_dir=document["output_dir"],
        generator=generator,
        train=train,
        embedder_spec=dict(document["embedder"]),
        prompt=document.get("prompt"),
        prompts=tuple(prompts) if prompts is not None else None,
        eval_samples=eval_section.get("num_samples", DEFAULT_EVAL_SAMPLES),
        eval_seed=eval_section.get("seed", 0),
        config_sha256=digest,
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    return parse_run_config(document, source=str(path))
