"""Frame-sequence inversion and consistency evaluation.

Frames are processed independently (no temporal smoothing) with the
pinned evaluation noise, written atomically, and summarized with mean
reconstruction metrics plus identity consistency of both the inverted
and the source sequence.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import torch

from .data import (ProceduralAttributes, image_to_png_bytes, load_image,
                   render_procedural)
from .encoder import Encoder, InversionResult, invert
from .generator import Generator, NoiseBundle
from .metrics import identity_consistency, per_image_metrics
from .objectives import Embedder

__all__ = ["invert_sequence", "sequence_report", "make_interpolation_frames",
           "make_trajectory_frames", "FrameError"]


class FrameError(RuntimeError):
    """A frame could not be read or has the wrong shape."""


def _list_frames(frames_dir) -> list[Path]:
    frames_dir = Path(frames_dir)
    frames = sorted(p for p in frames_dir.iterdir()
                    if p.suffix.lower() == ".png")
    if not frames:
        raise FrameError(f"no PNG frames under {frames_dir}")
    return frames


def invert_sequence(frames_dir, encoder: Encoder, generator: Generator,
                    noise: NoiseBundle, out_dir=None,
                    strict: bool = True) -> tuple[list[InversionResult], list[Path]]:
    """Invert every frame; optionally write reconstructed frames.

    Outputs are written to a temp name first and renamed, so a crash never
    leaves a partial frame behind.
    """
    resolution = encoder.spec.input_resolution
    inversions: list[InversionResult] = []
    kept: list[Path] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for path in _list_frames(frames_dir):
        try:
            frame = load_image(path)
        except Exception as exc:
            if strict:
                raise FrameError(f"{path.name}: unreadable ({exc})") from exc
            warnings.warn(f"skipping unreadable frame {path.name}: {exc}")
            continue
        if tuple(frame.shape[-2:]) != (resolution, resolution):
            if strict:
                raise FrameError(f"{path.name}: got {tuple(frame.shape[-2:])}, "
                                 f"expected {(resolution, resolution)}")
            warnings.warn(f"skipping odd-sized frame {path.name}")
            continue

        inv = invert(encoder, generator, frame, noise)
        inversions.append(inv)
        kept.append(path)
        if out_dir is not None:
            recon = inv.x2 if inv.x2 is not None else inv.x1
            target = out_dir / path.name
            tmp = target.with_suffix(".tmp")
            tmp.write_bytes(image_to_png_bytes(recon))
            tmp.rename(target)
    return inversions, kept


def sequence_report(inversions: list[InversionResult],
                    source_frames: list[torch.Tensor],
                    identity: Embedder, perceptual: Embedder) -> dict:
    """Aggregate per-frame metrics plus identity consistency of the
    reconstructed and the source sequence."""
    if len(inversions) != len(source_frames):
        raise ValueError("inversion / frame count mismatch")
    per_frame = []
    for inv, src in zip(inversions, source_frames):
        recon = inv.x2 if inv.x2 is not None else inv.x1
        per_frame.append(per_image_metrics(recon, src, identity, perceptual))

    n = len(per_frame)
    means = {key: sum(m[key] for m in per_frame) / n
             for key in per_frame[0]} if n else {}
    recons = [inv.x2 if inv.x2 is not None else inv.x1 for inv in inversions]
    ic_inv = identity_consistency(recons, identity) if n >= 2 else None
    ic_src = identity_consistency(source_frames, identity) if n >= 2 else None
    return {
        "n_frames": n,
        "mean": means,
        "per_frame": per_frame,
        "identity_consistency_inversion": ic_inv,
        "identity_consistency_source": ic_src,
    }


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=1, sort_keys=True))
    return path


def make_interpolation_frames(generator: Generator, out_dir, n_frames: int,
                              seed: int) -> Path:
    """Render a synthetic "video": a straight line between two latents."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = torch.Generator().manual_seed(seed)
    z0 = torch.randn(generator.spec.z_dim, generator=gen)
    z1 = torch.randn(generator.spec.z_dim, generator=gen)
    noise = generator.noise_bundle(seed)
    with torch.no_grad():
        for i in range(n_frames):
            t = i / max(n_frames - 1, 1)
            z = (1 - t) * z0 + t * z1
            w = generator.broadcast_w(generator.map_latent(z))
            image = generator.synthesize(w, noise)
            (out_dir / f"{i:05d}.png").write_bytes(image_to_png_bytes(image))
    return out_dir


def make_trajectory_frames(out_dir, n_frames: int, resolution: int,
                           seed: int) -> Path:
    """Render a procedural "video": one shape drifting across the canvas."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    import numpy as np
    rng = np.random.default_rng(seed)
    hue = float(rng.uniform(0, 1))
    radius = float(rng.uniform(0.12, 0.25))
    bg = float(rng.uniform(-0.4, 0.4))
    for i in range(n_frames):
        t = i / max(n_frames - 1, 1)
        attrs = ProceduralAttributes(hue=hue, radius=radius,
                                     cx=0.25 + 0.5 * t, cy=0.35 + 0.3 * t,
                                     bg_level=bg)
        image = render_procedural(attrs, resolution)
        (out_dir / f"{i:05d}.png").write_bytes(image_to_png_bytes(image))
    return out_dir
