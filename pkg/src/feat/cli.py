"""Command-line surface: train, edit, eval, gradcheck, two-step.

Exit codes form a contract CI can branch on:

    0  success
    2  usage or configuration problem (bad flags, bad config, missing file)
    3  numeric abort during optimization
    4  compatibility mismatch (model trained against a different generator)
    5  verification failure (gradient check above tolerance)

Every run writes a manifest whose content is a pure function of config and
seed; wall-clock and host identity never enter any artifact checksum.
FEAT_LOG sets the log level and nothing else.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .archive import load_model, save_model
from .attention import AttentionMask, compute_mask, threshold_mask
from .editor import edit_image
from .embedders import from_spec
from .errors import (
    ArgumentError,
    ConfigurationError,
    FeatError,
    FormatError,
    NumericError,
    StaleModelError,
)
from .formats import read_tensor, write_image_png, write_mask_png, write_tensor
from .generator import GeneratorWeights, broadcast, map_latent, synthesize
from .losses_metrics import frechet_distance, gaussian_stats, identity_metrics
from .runconfig import RunConfig, load_run_config
from .seeding import tensor_rng
from .trainer import (
    TrainHistory,
    grad_check,
    standard_grad_checks,
    train_edit_model,
    train_two_step,
)
from .autodiff import Tensor

log = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
MODEL_FILENAME = "model.feat"


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _canonical_json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _write_history(path: Path, history: TrainHistory) -> None:
    with path.open("w") as fh:
        for entry in history.entries():
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _write_loss_curve(path: Path, histories: dict[str, TrainHistory]) -> None:
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, history in histories.items():
        prefix = f"{label} " if len(histories) > 1 else ""
        if len(history):
            ax.plot(history.steps, [r.total for r in history.reports], label=f"{prefix}total")
            ax.plot(history.steps, [r.clip for r in history.reports], label=f"{prefix}clip", ls="--")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if any(len(h) for h in histories.values()):
        ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "feat"})
    plt.close(fig)


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig, seeds: dict,
                    checksums: dict[str, str]) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg.config_sha256,
        "format_version": cfg.format_version,
        "seeds": seeds,
        "versions": {
            "feat": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "outputs": checksums,
    }
    (out_dir / "manifest.json").write_text(_canonical_json_text(manifest))


def _resolve_out(cfg: RunConfig, out_override: str | None) -> Path:
    out = Path(out_override) if out_override else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds_block(cfg: RunConfig) -> dict:
    return {
        "generator": cfg.generator.seed,
        "train": cfg.train.seed,
        "embedder": int(cfg.embedder_spec.get("seed", 0)),
    }


def cmd_train(cfg: RunConfig, out_override: str | None = None) -> int:
    out = _resolve_out(cfg, out_override)
    prompt = cfg.require_prompt()
    weights = GeneratorWeights.init(cfg.generator)
    embedder = from_spec(cfg.embedder_spec, cfg.generator.output_resolution)
    model, history = train_edit_model(prompt, embedder, weights, cfg.train)

    model_path = out / MODEL_FILENAME
    save_model(model_path, model)
    _write_history(out / "history.jsonl", history)
    _write_loss_curve(out / "loss_curve.png", {"train": history})
    _write_manifest(out, "train", cfg, _seeds_block(cfg),
                    {MODEL_FILENAME: _sha256_file(model_path)})
    click.echo(f"trained '{prompt}' for {cfg.train.iterations} iterations -> {model_path}")
    return 0


def cmd_two_step(cfg: RunConfig, out_override: str | None = None, single_mask: bool = False) -> int:
    out = _resolve_out(cfg, out_override)
    prompt1, prompt2 = cfg.require_prompts()
    weights = GeneratorWeights.init(cfg.generator)
    embedder = from_spec(cfg.embedder_spec, cfg.generator.output_resolution)
    histories: list[TrainHistory] = []
    model2, frozen = train_two_step(
        prompt1, prompt2, embedder, weights, cfg.train,
        single_mask=single_mask, history_sink=histories,
    )

    model_path = out / MODEL_FILENAME
    save_model(model_path, model2)
    write_tensor(out / "frozen_mask.ft", frozen.values)
    write_mask_png(out / "frozen_mask.png", frozen.values)
    _write_history(out / "history_step1.jsonl", histories[0])
    _write_history(out / "history_step2.jsonl", histories[1])
    _write_loss_curve(out / "loss_curve.png", {"step1": histories[0], "step2": histories[1]})
    checksums = {
        MODEL_FILENAME: _sha256_file(model_path),
        "frozen_mask.ft": _sha256_file(out / "frozen_mask.ft"),
    }
    _write_manifest(out, "two-step", cfg, _seeds_block(cfg), checksums)
    click.echo(f"two-step '{prompt1}' / '{prompt2}' -> {model_path}")
    return 0


def _load_latent(cfg: RunConfig, seed: int | None, latent_file: str | None) -> tuple[np.ndarray, dict]:
    z_dim = cfg.generator.z_dim
    if latent_file is not None:
        z = read_tensor(latent_file)
        if z.shape != (z_dim,):
            raise ArgumentError(f"latent file must hold a ({z_dim},) vector, got {z.shape}")
        return z.astype(np.float64), {"file": str(latent_file)}
    effective = 0 if seed is None else seed
    return tensor_rng(effective, "edit/z").standard_normal(z_dim), {"seed": effective}


def cmd_edit(cfg: RunConfig, model_path: str | None, out_override: str | None,
             seed: int | None, latent_file: str | None,
             mask_mode: str | None, tau: float | None, export_mask: bool) -> int:
    out = _resolve_out(cfg, out_override)
    archive = Path(model_path) if model_path else out / MODEL_FILENAME
    model = load_model(archive)
    overrides = {}
    if mask_mode is not None:
        overrides["mask_mode"] = mask_mode
    if tau is not None:
        overrides["tau"] = tau
    if overrides:
        model.config = replace(model.config, **overrides)

    weights = GeneratorWeights.init(cfg.generator)
    z, latent_desc = _load_latent(cfg, seed, latent_file)
    wplus = broadcast(map_latent(z, weights), cfg.generator.num_layers)

    original, stack = synthesize(wplus, weights)
    edited, mask_used, _ = edit_image(wplus, model, weights)

    write_image_png(out / "original.png", original.pixels)
    write_image_png(out / "edited.png", edited.pixels)
    if export_mask:
        if model.config.attention_muted:
            soft = AttentionMask(np.ones_like(mask_used.values))
        elif model.frozen_mask is not None:
            soft = model.frozen_mask
        else:
            soft = compute_mask(stack, model.config.blend_layer, model.attention)
        write_mask_png(out / "mask_soft.png", soft.values)
        write_mask_png(out / "mask_hard.png", threshold_mask(soft, model.config.tau).values)

    sidecar = {
        "latent": latent_desc,
        "model": str(archive),
        "prompt": model.prompt,
        "generator_fingerprint": model.generator_fingerprint,
        "mask_mode": model.config.mask_mode,
        "tau": model.config.tau,
        "blend_layer": model.config.blend_layer,
        "mask_mean": mask_used.mean(),
    }
    (out / "edit.json").write_text(_canonical_json_text(sidecar))
    click.echo(f"edited latent {latent_desc} -> {out / 'edited.png'}")
    return 0


def cmd_eval(cfg: RunConfig, model_path: str | None, out_override: str | None,
             num_samples: int | None, seed: int | None) -> int:
    out = _resolve_out(cfg, out_override)
    n = cfg.eval_samples if num_samples is None else num_samples
    if n < 1:
        raise ConfigurationError(f"num_samples must be >= 1, got {n}")
    eval_seed = cfg.eval_seed if seed is None else seed
    archive = Path(model_path) if model_path else out / MODEL_FILENAME
    model = load_model(archive)
    weights = GeneratorWeights.init(cfg.generator)
    embedder = from_spec(cfg.embedder_spec, cfg.generator.output_resolution)
    if n < embedder.embed_dim + 1:
        click.echo(
            f"warning: {n} samples for {embedder.embed_dim}-dim embeddings leaves the "
            "covariance rank-deficient; proceeding with the clamped square root",
            err=True,
        )

    zs = tensor_rng(eval_seed, "eval/z").standard_normal((n, cfg.generator.z_dim))
    orig_embs = np.empty((n, embedder.embed_dim))
    edit_embs = np.empty((n, embedder.embed_dim))
    for k in range(n):
        wplus = broadcast(map_latent(zs[k], weights), cfg.generator.num_layers)
        original, _ = synthesize(wplus, weights)
        edited, _, _ = edit_image(wplus, model, weights)
        orig_embs[k] = embedder.embed_image(original)
        edit_embs[k] = embedder.embed_image(edited)

    mu_o, cov_o = gaussian_stats(orig_embs)
    mu_e, cov_e = gaussian_stats(edit_embs)
    fid = frechet_distance(mu_o, cov_o, mu_e, cov_e)
    cs, ed = identity_metrics(orig_embs, edit_embs)

    row = {"num_samples": n, "fid": fid, "cs": cs, "ed": ed}
    (out / "eval.json").write_text(_canonical_json_text(
        {**row, "model": str(archive), "seed": eval_seed, "config_sha256": cfg.config_sha256}))
    with (out / "eval.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["num_samples", "fid", "cs", "ed"])
        writer.writeheader()
        writer.writerow(row)
    click.echo(f"eval over {n} samples: fid={fid:.6g} cs={cs:.6g} ed={ed:.6g}")
    return 0


def cmd_gradcheck(cfg: RunConfig, seed: int | None, corrupt_gradient: bool = False) -> int:
    prompt = cfg.prompt if cfg.prompt is not None else "gradcheck"
    weights = GeneratorWeights.init(cfg.generator)
    embedder = from_spec(cfg.embedder_spec, cfg.generator.output_resolution)
    results = standard_grad_checks(prompt, embedder, weights, cfg.train,
                                   seed=0 if seed is None else seed)
    if corrupt_gradient:
        # Harness sensitivity hook: an objective whose backward is wrong by
        # construction (one factor detached) must be flagged.
        p = Tensor.parameter(np.full(4, 2.0))
        results["corrupted"] = grad_check(lambda: (p.detach() * p).sum(), {"p": p})

    width = max(len(t) for t in results)
    click.echo(f"{'term'.ljust(width)}  max rel err   status")
    failing = []
    for term, err in results.items():
        ok = err <= GRADCHECK_TOLERANCE
        if not ok:
            failing.append(term)
        click.echo(f"{term.ljust(width)}  {err:11.3e}   {'ok' if ok else 'FAIL'}")
    if failing:
        click.echo(f"gradient check failed for: {', '.join(failing)}", err=True)
        return 5
    return 0


@click.group()
def cli() -> None:
    """Text-guided latent editing with learned attention masks."""


_config_opt = click.option("--config", "config_path", required=True,
                           type=click.Path(), help="Run config JSON.")
_out_opt = click.option("--out", "out_dir", default=None,
                        type=click.Path(), help="Output directory (overrides config).")
_seed_opt = click.option("--seed", default=None, type=int,
                         help="Seed override; meaning depends on the command.")


@cli.command("train")
@_config_opt
@_out_opt
@_seed_opt
def _train(config_path: str, out_dir: str | None, seed: int | None) -> int:
    cfg = load_run_config(config_path)
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    return cmd_train(cfg, out_dir)


@cli.command("two-step")
@_config_opt
@_out_opt
@_seed_opt
@click.option("--single-mask", is_flag=True,
              help="Apply one canonical mask to every image in step 2.")
def _two_step(config_path: str, out_dir: str | None, seed: int | None, single_mask: bool) -> int:
    cfg = load_run_config(config_path)
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    return cmd_two_step(cfg, out_dir, single_mask)


@cli.command("edit")
@_config_opt
@_out_opt
@_seed_opt
@click.option("--model", "model_path", default=None, type=click.Path(),
              help="Model archive (default: <out>/model.feat).")
@click.option("--latent-file", default=None, type=click.Path(),
              help="Tensor file holding the z vector (overrides --seed).")
@click.option("--mask-mode", default=None, type=click.Choice(["soft", "hard"]))
@click.option("--tau", default=None, type=float)
@click.option("--export-mask", is_flag=True, help="Also write soft and hard mask PNGs.")
def _edit(config_path: str, out_dir: str | None, seed: int | None, model_path: str | None,
          latent_file: str | None, mask_mode: str | None, tau: float | None,
          export_mask: bool) -> int:
    cfg = load_run_config(config_path)
    return cmd_edit(cfg, model_path, out_dir, seed, latent_file, mask_mode, tau, export_mask)


@cli.command("eval")
@_config_opt
@_out_opt
@_seed_opt
@click.option("--model", "model_path", default=None, type=click.Path())
@click.option("--num-samples", default=None, type=int)
def _eval(config_path: str, out_dir: str | None, seed: int | None,
          model_path: str | None, num_samples: int | None) -> int:
    cfg = load_run_config(config_path)
    return cmd_eval(cfg, model_path, out_dir, num_samples, seed)


@cli.command("gradcheck")
@_config_opt
@_seed_opt
@click.option("--corrupt-gradient", is_flag=True, hidden=True)
def _gradcheck(config_path: str, seed: int | None, corrupt_gradient: bool) -> int:
    cfg = load_run_config(config_path)
    return cmd_gradcheck(cfg, seed, corrupt_gradient)


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("FEAT_LOG", "WARNING").upper()
    logging.basicConfig(level=level if level in
                        ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL") else "WARNING")
    try:
        result = cli.main(args=argv, standalone_mode=False)
        return result if isinstance(result, int) else 0
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 2
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        return 2
    except (ConfigurationError, ArgumentError, FormatError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except NumericError as exc:
        click.echo(f"numeric abort: {exc}", err=True)
        return 3
    except StaleModelError as exc:
        click.echo(f"compatibility error: {exc}", err=True)
        return 4
    except FeatError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
