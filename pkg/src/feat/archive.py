"""EditModel archives: a zip of tensor files plus a JSON manifest.

Archives are byte-deterministic: entries are stored uncompressed in sorted
name order with a fixed timestamp, and the manifest is canonical JSON.
Writing the same model twice yields identical bytes, which is what makes
training runs audit-equal by checksum.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

from .attention import AttentionConfig, AttentionMask, AttentionParams
from .editor import EditConfig, EditModel
from .errors import FormatError
from .formats import decode_tensor, encode_tensor
from .mapper import EditScope, MapperConfig, MapperParams

ARCHIVE_FORMAT_VERSION = 1
# Zip timestamps have 2-second resolution and no zone; the epoch below is
# the earliest representable, pinned so rewrites are byte-identical.
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)

_MANIFEST = "manifest.json"
_MAPPER_DIR = "mapper"
_ATTENTION_DIR = "attention"
_FROZEN_MASK = "frozen_mask.ft"


def _canonical_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode()


def _model_manifest(model: EditModel) -> dict:
    cfg = model.config
    return {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "prompt": model.prompt,
        "generator_fingerprint": model.generator_fingerprint,
        "edit": {
            "blend_layer": cfg.blend_layer,
            "scope": list(cfg.scope.sorted_layers),
            "alpha": cfg.alpha,
            "tau": cfg.tau,
            "mask_mode": cfg.mask_mode,
            "attention_muted": cfg.attention_muted,
        },
        "mapper": {
            "w_dim": model.mapper.config.w_dim,
            "hidden": model.mapper.config.hidden,
            "per_layer": model.mapper.config.per_layer,
            "num_layers": model.mapper.config.num_layers,
            "seed": model.mapper.config.seed,
        },
        "attention": {
            "channels": list(model.attention.config.channels),
            "c_red": model.attention.config.c_red,
            "resize_mode": model.attention.config.resize_mode,
            "use_bias": model.attention.config.use_bias,
            "seed": model.attention.config.seed,
        },
        "has_frozen_mask": model.frozen_mask is not None,
    }


def save_model(path: str | Path, model: EditModel) -> None:
    entries: dict[str, bytes] = {_MANIFEST: _canonical_json(_model_manifest(model))}
    for name, arr in model.mapper.tensors.items():
        entries[f"{_MAPPER_DIR}/{name}.ft"] = encode_tensor(arr)
    for name, arr in model.attention.tensors.items():
        entries[f"{_ATTENTION_DIR}/{name}.ft"] = encode_tensor(arr)
    if model.frozen_mask is not None:
        entries[_FROZEN_MASK] = encode_tensor(model.frozen_mask.values)

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    Path(path).write_bytes(buf.getvalue())


def _read_group(zf: zipfile.ZipFile, directory: str) -> dict:
    prefix = directory + "/"
    out = {}
    for name in zf.namelist():
        if name.startswith(prefix) and name.endswith(".ft"):
            out[name[len(prefix):-3]] = decode_tensor(zf.read(name), what=name)
    return out


def load_model(path: str | Path) -> EditModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model archive not found: {path}")
    try:
        zf = zipfile.ZipFile(path, "r")
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path} is not a model archive: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read(_MANIFEST))
        except KeyError:
            raise FormatError(f"{path}: missing {_MANIFEST}")
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: manifest is not valid JSON: {exc}")
        version = manifest.get("format_version")
        if version != ARCHIVE_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported archive version {version}")
        try:
            edit = manifest["edit"]
            config = EditConfig(
                blend_layer=edit["blend_layer"],
                scope=EditScope(edit["scope"]),
                alpha=edit["alpha"],
                tau=edit["tau"],
                mask_mode=edit["mask_mode"],
                attention_muted=edit["attention_muted"],
            )
            mapper_config = MapperConfig(**manifest["mapper"])
            att = manifest["attention"]
            attention_config = AttentionConfig(
                channels=tuple(att["channels"]),
                c_red=att["c_red"],
                resize_mode=att["resize_mode"],
                use_bias=att["use_bias"],
                seed=att["seed"],
            )
            prompt = manifest["prompt"]
            fingerprint = manifest["generator_fingerprint"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: manifest field missing or malformed: {exc}")

        mapper = MapperParams(mapper_config, _read_group(zf, _MAPPER_DIR))
        attention = AttentionParams(attention_config, _read_group(zf, _ATTENTION_DIR))
        frozen_mask = None
        if manifest.get("has_frozen_mask"):
            try:
                frozen_mask = AttentionMask(decode_tensor(zf.read(_FROZEN_MASK), what=_FROZEN_MASK))
            except KeyError:
                raise FormatError(f"{path}: manifest promises a frozen mask but none is stored")

    return EditModel(
        mapper=mapper,
        attention=attention,
        config=config,
        prompt=prompt,
        generator_fingerprint=fingerprint,
        frozen_mask=frozen_mask,
    )
