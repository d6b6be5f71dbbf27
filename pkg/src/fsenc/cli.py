"""Command-line entry point for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command
that involves randomness takes --seed; --json switches the progress output
to machine-readable JSON lines. All outputs land under the given --out.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import data as data_mod
from .checkpoint import file_sha256, load_archive

__all__ = ["cli", "main"]


def _emit(ctx, event: str, human: str, **fields) -> None:
    if ctx.obj and ctx.obj.get("json"):
        click.echo(json.dumps({"event": event, **fields}, sort_keys=True))
    else:
        click.echo(human)


def _load_bundle(path):
    from .training import load_bundle
    return load_bundle(path)


def _load_any_generator(path, k_override=None):
    """Accept either a generator-only or a full encoder checkpoint."""
    _, specs = load_archive(path)
    if specs.get("kind") == "generator":
        from .pretrain import load_generator
        return load_generator(path, k_override=k_override)
    bundle = _load_bundle(path)
    gen = bundle.generator
    if k_override is not None and k_override != gen.spec.k_inject:
        from .training import _with_k
        gen = _with_k(gen, k_override)
    return gen


def _load_input_image(path, resolution):
    """Load a PNG and resize it to the model resolution if needed."""
    from PIL import Image
    import numpy as np
    import torch
    pil = Image.open(path).convert("RGB")
    if pil.size != (resolution, resolution):
        pil = pil.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(pil, dtype=np.float32).transpose(2, 0, 1)
    return torch.from_numpy(arr / 127.5 - 1.0)


@click.group()
@click.option("--json", "json_logs", is_flag=True, help="machine-readable logs")
@click.pass_context
def cli(ctx, json_logs):
    """Inversion-encoder toolkit: data, training, editing, evaluation."""
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_logs


@cli.command("make-dataset")
@click.option("--out", required=True, type=click.Path())
@click.option("--n", required=True, type=int)
@click.option("--resolution", default=32, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.pass_context
def make_dataset_cmd(ctx, out, n, resolution, seed):
    """Render a procedural dataset with exact attribute labels."""
    data_mod.make_dataset(out, n=n, resolution=resolution, seed=seed)
    _emit(ctx, "dataset", f"wrote {n} images at {resolution}x{resolution} to {out}",
          out=str(out), n=n, resolution=resolution, seed=seed)


@cli.command("pretrain-gan")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="override the config seed")
@click.option("--steps", default=None, type=int, help="override the step count")
@click.pass_context
def pretrain_gan_cmd(ctx, data_dir, config_path, out, seed, steps):
    """Adversarially pretrain the miniature generator."""
    from dataclasses import replace
    from .generator import GeneratorSpec
    from .pretrain import GanTrainConfig, pretrain_generator
    from .plots import plot_gan_log

    raw = json.loads(Path(config_path).read_text()) if config_path else {}
    gspec = (GeneratorSpec.from_dict(raw.pop("generator_spec"))
             if "generator_spec" in raw else None)
    config = GanTrainConfig.from_dict(raw)
    if seed is not None:
        config = replace(config, seed=seed)
    if steps is not None:
        config = replace(config, steps=steps)
    dataset = data_mod.DatasetHandle(data_dir)
    out = Path(out)
    summary = pretrain_generator(config, dataset, out, spec=gspec,
                                 log_path=out.with_suffix(".log.jsonl"))
    plot_gan_log(summary["log"], out.with_suffix(".losses.png"))
    _emit(ctx, "pretrain",
          f"checkpoint -> {out} (disc real acc {summary['disc_real_accuracy']:.3f}, "
          f"sample std {summary['sample_pixel_std']:.3f})",
          out=str(out), disc_real_accuracy=summary["disc_real_accuracy"],
          sample_pixel_std=summary["sample_pixel_std"], steps=config.steps)


@cli.command("train")
@click.option("--gan", "gan_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--ablation", type=click.Choice(["A", "B", "C", "D"]), default=None)
@click.option("--k", "k_inject", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--resume", "resume_from", type=click.Path(exists=True))
@click.pass_context
def train_cmd(ctx, gan_path, data_dir, config_path, out, ablation, k_inject,
              seed, resume_from):
    """Train the two-branch encoder against a frozen generator."""
    from dataclasses import replace
    from .pretrain import load_generator
    from .training import AblationFlags, TrainConfig, train
    from .plots import plot_training_log

    config = (TrainConfig.from_json(config_path) if config_path
              else TrainConfig.desk())
    if ablation is not None:
        config = replace(config, ablation=AblationFlags.named(ablation))
    if k_inject is not None:
        config = replace(config, k_inject=k_inject)
    if seed is not None:
        config = replace(config, seed=seed)
    generator = load_generator(gan_path)
    dataset = data_mod.DatasetHandle(data_dir)
    result = train(generator, dataset, config, out, resume_from=resume_from,
                   quiet=bool(ctx.obj.get("json")))
    plot_training_log(result.log_path, Path(out).with_suffix(".curves.png"))
    final_val = result.validations[-1] if result.validations else {}
    _emit(ctx, "train", f"checkpoint -> {out} after {result.steps} steps; "
          f"final val {final_val}", out=str(out), steps=result.steps,
          final_validation=final_val)


@cli.command("invert")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--variant", type=click.Choice(["x1", "x2"]), default="x2",
              show_default=True)
@click.pass_context
def invert_cmd(ctx, ckpt, input_path, out, variant):
    """Invert one image or a directory of images."""
    from .encoder import invert
    from .metrics import psnr

    bundle = _load_bundle(ckpt)
    if variant == "x2" and not bundle.encoder.spec.feature_branch_enabled:
        raise click.UsageError("this checkpoint has no feature branch; use --variant x1")
    input_path = Path(input_path)
    paths = (sorted(input_path.glob("*.png")) if input_path.is_dir()
             else [input_path])
    if not paths:
        raise click.UsageError(f"no PNG inputs under {input_path}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for path in paths:
        image = _load_input_image(path, bundle.encoder.spec.input_resolution)
        inv = invert(bundle.encoder, bundle.generator, image, bundle.eval_noise)
        recon = inv.x1 if variant == "x1" else inv.x2
        target = out / f"{path.stem}.png"
        data_mod.save_image(recon, target)
        _emit(ctx, "invert", f"{path.name} -> {target} "
              f"(psnr {psnr(recon, image):.2f} dB)",
              input=str(path), output=str(target), variant=variant,
              psnr_db=psnr(recon, image))


@cli.command("edit")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--direction", "direction_path", required=True,
              type=click.Path(exists=True))
@click.option("--alpha", required=True, type=float)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def edit_cmd(ctx, ckpt, input_path, direction_path, alpha, out):
    """Apply a latent direction with the feature-code correction."""
    from .editing import ALPHA_RANGE, EditDirection, edit_image
    from .encoder import invert

    if not ALPHA_RANGE[0] <= alpha <= ALPHA_RANGE[1]:
        raise click.UsageError(f"alpha {alpha} outside {list(ALPHA_RANGE)}")
    bundle = _load_bundle(ckpt)
    direction = EditDirection.load(direction_path)
    image = _load_input_image(input_path, bundle.encoder.spec.input_resolution)
    inv = invert(bundle.encoder, bundle.generator, image, bundle.eval_noise)
    edited = edit_image(inv, direction, alpha, bundle.eval_noise, bundle.generator)
    data_mod.save_image(edited, out)
    _emit(ctx, "edit", f"{Path(input_path).name} + {alpha} x {direction.name} -> {out}",
          output=str(out), alpha=alpha, direction=direction.name)


@cli.command("mix")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--latent-from", "latent_path", required=True,
              type=click.Path(exists=True))
@click.option("--feature-from", "feature_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def mix_cmd(ctx, ckpt, latent_path, feature_path, out):
    """Combine the latent code of one image with the feature code of another."""
    from .editing import style_mix
    from .encoder import invert

    bundle = _load_bundle(ckpt)
    res = bundle.encoder.spec.input_resolution
    inv_w = invert(bundle.encoder, bundle.generator,
                   _load_input_image(latent_path, res), bundle.eval_noise)
    inv_f = invert(bundle.encoder, bundle.generator,
                   _load_input_image(feature_path, res), bundle.eval_noise)
    mixed = style_mix(inv_w, inv_f, bundle.eval_noise, bundle.generator)
    data_mod.save_image(mixed, out)
    _emit(ctx, "mix", f"latent({Path(latent_path).name}) + "
          f"feature({Path(feature_path).name}) -> {out}", output=str(out))


@cli.group()
def directions():
    """Discover latent editing directions."""


@directions.command("sefa")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--blocks", default=None, help="LO:HI 1-based block range")
@click.option("--top", "top_k", default=4, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def directions_sefa_cmd(ctx, ckpt, blocks, top_k, out):
    """Closed-form directions from the style-affine weights."""
    from .editing import closed_form_directions

    generator = _load_any_generator(ckpt)
    if blocks:
        try:
            lo, hi = (int(p) for p in blocks.split(":"))
        except ValueError:
            raise click.UsageError(f"--blocks must be LO:HI, got {blocks!r}")
    else:
        lo, hi = generator.spec.k_inject, generator.spec.n_layers
    dirs = closed_form_directions(generator, (lo, hi), top_k)
    out = Path(out)
    for d in dirs:
        d.save(out / f"{d.name}.json")
    _emit(ctx, "directions", f"wrote {len(dirs)} directions to {out}",
          out=str(out), count=len(dirs), block_range=[lo, hi])


@directions.command("boundary")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--attr", "attr_name", required=True)
@click.option("--n", "n_samples", default=512, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def directions_boundary_cmd(ctx, ckpt, data_dir, attr_name, n_samples, out):
    """Linear attribute boundary on encoded latents."""
    import torch
    from .editing import linear_boundary

    bundle = _load_bundle(ckpt)
    dataset = data_mod.DatasetHandle(data_dir)
    if attr_name not in dataset.records[0]["attributes"]:
        raise click.UsageError(
            f"unknown attribute {attr_name!r}; choose from "
            f"{sorted(dataset.records[0]['attributes'])}")
    count = min(n_samples, len(dataset))
    latents, labels = [], []
    with torch.no_grad():
        for i in range(count):
            w, _ = bundle.encoder.encode(dataset.load_image(i))
            latents.append(w)
            labels.append(dataset.records[i]["attributes"][attr_name])
    direction = linear_boundary(latents, labels, name=attr_name)
    direction.save(out)
    _emit(ctx, "boundary", f"{attr_name}: r2={direction.metadata['r2']:.3f} -> {out}",
          out=str(out), attr=attr_name, r2=direction.metadata["r2"],
          n_samples=count)


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--holdout", default=None, type=int,
              help="evaluation split size (defaults to the training holdout)")
@click.pass_context
def eval_cmd(ctx, ckpt, data_dir, out, holdout):
    """Evaluate a checkpoint; writes JSON + CSV + a figure."""
    import csv
    from .metrics import evaluate
    from .objectives import desk_embedder
    from .plots import plot_metric_reports
    from .training import IDENTITY_SEED, PERCEPTUAL_SEED

    bundle = _load_bundle(ckpt)
    dataset = data_mod.DatasetHandle(data_dir)
    if holdout is None:
        holdout = bundle.train_config.val_count if bundle.train_config else 128
    _, val_ids = dataset.split(holdout)
    reports = evaluate(bundle.encoder, bundle.generator, dataset, val_ids,
                       desk_embedder(IDENTITY_SEED), desk_embedder(PERCEPTUAL_SEED),
                       bundle.eval_noise)

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"checkpoint": str(ckpt), "checkpoint_sha256": file_sha256(ckpt),
               "n_samples": len(val_ids),
               "variants": {v: r.to_dict() for v, r in reports.items()}}
    out.write_text(json.dumps(payload, indent=1, sort_keys=True))

    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        fields = ["variant", "mse", "psnr_db", "ssim", "lpips",
                  "id_similarity", "fid", "n_samples"]
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for v, r in reports.items():
            writer.writerow({"variant": v, **r.to_dict()})
    fig_path = plot_metric_reports(reports, out.with_suffix(".png"))
    _emit(ctx, "eval", f"report -> {out} (+ {csv_path.name}, {fig_path.name})",
          out=str(out), variants={v: r.to_dict() for v, r in reports.items()})


@cli.command("video")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--frames", "frames_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--strict/--no-strict", default=True, show_default=True,
              help="abort on unreadable or odd-sized frames instead of skipping")
@click.pass_context
def video_cmd(ctx, ckpt, frames_dir, out, strict):
    """Invert a frame sequence and report consistency metrics."""
    import csv
    from .data import load_image
    from .objectives import desk_embedder
    from .plots import plot_sequence_report
    from .training import IDENTITY_SEED, PERCEPTUAL_SEED
    from .video import invert_sequence, sequence_report, write_report

    bundle = _load_bundle(ckpt)
    out = Path(out)
    inversions, kept = invert_sequence(frames_dir, bundle.encoder, bundle.generator,
                                       bundle.eval_noise, out_dir=out / "frames",
                                       strict=strict)
    sources = [load_image(p) for p in kept]
    report = sequence_report(inversions, sources, desk_embedder(IDENTITY_SEED),
                             desk_embedder(PERCEPTUAL_SEED))
    write_report(report, out / "report.json")
    with open(out / "per_frame.csv", "w", newline="") as fh:
        fields = ["frame", "mse", "psnr_db", "ssim", "lpips", "id_similarity"]
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for i, m in enumerate(report["per_frame"]):
            writer.writerow({"frame": i, **m})
    plot_sequence_report(report, out / "report.png")
    _emit(ctx, "video", f"{report['n_frames']} frames -> {out} "
          f"(IC inv {report['identity_consistency_inversion']}, "
          f"IC src {report['identity_consistency_source']})",
          out=str(out), n_frames=report["n_frames"],
          identity_consistency_inversion=report["identity_consistency_inversion"],
          identity_consistency_source=report["identity_consistency_source"])


@cli.command("serve")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--directions", "directions_dir", type=click.Path(exists=True))
@click.option("--ui", "ui_dir", type=click.Path(exists=True),
              help="built single-page app to serve at /")
def serve_cmd(ckpt, port, host, directions_dir, ui_dir):
    """Run the HTTP inversion/editing service."""
    import uvicorn
    from .service import create_app

    app = create_app(ckpt, directions_dir=directions_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    threads = os.environ.get("FSE_NUM_THREADS")
    if threads:
        import torch
        torch.set_num_threads(max(1, int(threads)))
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 130
    except Exception as exc:  # runtime failure
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
