"""Procedural training data, synthetic samples, and batch mixing.

"Real" images are anti-aliased ellipses rendered from exact attribute
labels and stored as PNG files plus a JSON-lines manifest. Synthetic
samples come straight from the generator and keep their ground-truth
noise so training can replay it. All batch content is a pure function of
(seed, epoch, step).
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .generator import Generator, NoiseBundle

__all__ = [
    "ProceduralAttributes",
    "SyntheticSample",
    "BatchSample",
    "MixedBatch",
    "DatasetHandle",
    "RealStream",
    "render_procedural",
    "sample_attributes",
    "make_dataset",
    "sample_synthetic",
    "next_batch",
    "image_to_png_bytes",
    "png_bytes_to_image",
    "save_image",
    "load_image",
    "mix_seed",
]

_SEED_MASK = (1 << 63) - 1


def mix_seed(*parts) -> int:
    """Stable 63-bit mix of integers/strings for derived RNG streams."""
    acc = 0x9E3779B97F4A7C15
    for part in parts:
        if isinstance(part, str):
            vals = part.encode("utf-8")
        else:
            vals = int(part).to_bytes(8, "little", signed=False)
        for b in vals:
            acc ^= b
            acc = (acc * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return acc & _SEED_MASK


# ---- pixel <-> byte mapping --------------------------------------------------


def image_to_png_bytes(image: torch.Tensor) -> bytes:
    """Encode a (3,H,W) image in [-1,1] as 8-bit RGB PNG."""
    arr = image.detach().cpu().numpy()
    arr = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    pil = Image.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    import io
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> torch.Tensor:
    import io
    pil = Image.open(io.BytesIO(data)).convert("RGB")
    arr = np.asarray(pil, dtype=np.float32).transpose(2, 0, 1)
    return torch.from_numpy(arr / 127.5 - 1.0)


def save_image(image: torch.Tensor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(image_to_png_bytes(image))
    return path


def load_image(path) -> torch.Tensor:
    return png_bytes_to_image(Path(path).read_bytes())


# ---- procedural renderer -----------------------------------------------------


@dataclass(frozen=True)
class ProceduralAttributes:
    """Exact labels for one rendered image."""

    hue: float        # [0, 1)
    radius: float     # horizontal semi-axis as a fraction of width
    cx: float         # [0.2, 0.8]
    cy: float         # [0.2, 0.8]
    bg_level: float   # [-0.5, 0.5]

    def to_dict(self) -> dict:
        return {"hue": self.hue, "radius": self.radius, "cx": self.cx,
                "cy": self.cy, "bg_level": self.bg_level}

    @classmethod
    def from_dict(cls, d: dict) -> "ProceduralAttributes":
        return cls(**d)


ASPECT = 0.75  # vertical semi-axis relative to the horizontal one


def sample_attributes(rng: np.random.Generator) -> ProceduralAttributes:
    return ProceduralAttributes(
        hue=float(rng.uniform(0.0, 1.0)),
        radius=float(rng.uniform(0.08, 0.30)),
        cx=float(rng.uniform(0.2, 0.8)),
        cy=float(rng.uniform(0.2, 0.8)),
        bg_level=float(rng.uniform(-0.5, 0.5)),
    )


def render_procedural(attrs: ProceduralAttributes, resolution: int) -> torch.Tensor:
    """Anti-aliased filled ellipse on a uniform background, in [-1,1]."""
    r, g, b = colorsys.hsv_to_rgb(attrs.hue % 1.0, 0.85, 0.9)
    fg = np.array([r, g, b], dtype=np.float64) * 2.0 - 1.0
    bg = np.full(3, attrs.bg_level, dtype=np.float64)

    coords = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution
    xx, yy = np.meshgrid(coords, coords)
    rx = max(attrs.radius, 1e-9)
    ry = rx * ASPECT
    dist = np.sqrt(((xx - attrs.cx) / rx) ** 2 + ((yy - attrs.cy) / ry) ** 2)
    edge = 1.0 / (resolution * ry)  # ~one pixel of smoothing along the minor axis
    alpha = np.clip((1.0 - dist) / edge + 0.5, 0.0, 1.0)
    if attrs.radius <= 0:
        alpha = np.zeros_like(alpha)
    img = bg[:, None, None] * (1.0 - alpha) + fg[:, None, None] * alpha
    return torch.from_numpy(img.astype(np.float32))


# ---- dataset on disk ---------------------------------------------------------


def make_dataset(out_dir, n: int, resolution: int, seed: int) -> Path:
    """Render ``n`` samples into ``out_dir`` with a JSON-lines manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        attrs = sample_attributes(rng)
        image = render_procedural(attrs, resolution)
        name = f"{i:05d}"
        save_image(image, out_dir / f"{name}.png")
        lines.append(json.dumps({"id": name, "attributes": attrs.to_dict()},
                                sort_keys=True))
    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    (out_dir / "meta.json").write_text(json.dumps(
        {"n": n, "resolution": resolution, "seed": seed}, sort_keys=True))
    return out_dir


class DatasetHandle:
    """Read access to a rendered dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = self.root / "manifest.jsonl"
        if not manifest.exists():
            raise FileNotFoundError(f"no manifest.jsonl under {self.root}")
        self.records = [json.loads(line) for line in
                        manifest.read_text().splitlines() if line.strip()]
        meta_path = self.root / "meta.json"
        if meta_path.exists():
            self.resolution = json.loads(meta_path.read_text())["resolution"]
        else:
            self.resolution = self.load_image(0).shape[-1]

    def __len__(self) -> int:
        return len(self.records)

    def load_image(self, index: int) -> torch.Tensor:
        return load_image(self.root / f"{self.records[index]['id']}.png")

    def attributes(self, index: int) -> ProceduralAttributes:
        return ProceduralAttributes.from_dict(self.records[index]["attributes"])

    def attribute_values(self, name: str) -> np.ndarray:
        return np.array([rec["attributes"][name] for rec in self.records])

    def split(self, holdout: int) -> tuple[list[int], list[int]]:
        """Deterministic split: the last ``holdout`` ids are the eval set."""
        if not 0 < holdout < len(self):
            raise ValueError(f"holdout {holdout} out of range for {len(self)} samples")
        ids = list(range(len(self)))
        return ids[:-holdout], ids[-holdout:]


class RealStream:
    """Deterministic shuffled view of a subset of a dataset.

    The permutation is regenerated per epoch from (seed, epoch); a step
    reads a consecutive window so every batch is a pure function of
    (seed, epoch, step).
    """

    def __init__(self, dataset: DatasetHandle, ids: list[int], seed: int):
        if not ids:
            raise ValueError("empty id list")
        self.dataset = dataset
        self.ids = list(ids)
        self.seed = seed

    def take(self, epoch: int, step: int, count: int) -> list[int]:
        rng = np.random.default_rng(mix_seed(self.seed, "perm", epoch))
        perm = rng.permutation(len(self.ids))
        start = step * count
        return [self.ids[perm[(start + j) % len(self.ids)]] for j in range(count)]

    def load(self, epoch: int, step: int, count: int) -> list[torch.Tensor]:
        return [self.dataset.load_image(i) for i in self.take(epoch, step, count)]


# ---- synthetic samples and batch mixing --------------------------------------


@dataclass
class SyntheticSample:
    z: torch.Tensor
    noise: NoiseBundle
    image: torch.Tensor


def sample_synthetic(generator: Generator, seed: int) -> SyntheticSample:
    """Draw (z, noise), synthesize, and keep everything for exact replay."""
    gen = torch.Generator().manual_seed(seed & _SEED_MASK)
    z = torch.randn(generator.spec.z_dim, generator=gen)
    noise = NoiseBundle([torch.randn(generator.spec.noise_shape(l), generator=gen)
                         for l in range(1, generator.spec.n_layers + 1)])
    with torch.no_grad():
        w = generator.broadcast_w(generator.map_latent(z))
        image = generator.synthesize(w, noise)
    return SyntheticSample(z=z, noise=noise, image=image)


@dataclass
class BatchSample:
    image: torch.Tensor
    kind: str                      # "real" | "synthetic"
    gt_noise: NoiseBundle | None = None


@dataclass
class MixedBatch:
    samples: list[BatchSample]
    composition: tuple[int, int]


def next_batch(real_stream: RealStream | None, generator: Generator,
               composition: tuple[int, int], seed: int,
               epoch: int = 0, step: int = 0) -> MixedBatch:
    """Assemble an interleaved batch of reals and synthetics."""
    n_real, n_synth = composition
    if n_real < 0 or n_synth < 0 or n_real + n_synth == 0:
        raise ValueError(f"invalid composition {composition}")
    if n_real > 0 and real_stream is None:
        raise ValueError("composition requests real samples but no stream given")

    reals = real_stream.load(epoch, step, n_real) if n_real else []
    synths = [sample_synthetic(generator, mix_seed(seed, "synth", epoch, step, j))
              for j in range(n_synth)]

    samples: list[BatchSample] = []
    ri = si = 0
    for slot in range(n_real + n_synth):
        # round-robin interleave proportional to the composition
        take_real = ri * n_synth <= si * n_real if n_real else False
        if take_real and ri < n_real:
            samples.append(BatchSample(image=reals[ri], kind="real"))
            ri += 1
        elif si < n_synth:
            s = synths[si]
            samples.append(BatchSample(image=s.image, kind="synthetic",
                                       gt_noise=s.noise))
            si += 1
        else:
            samples.append(BatchSample(image=reals[ri], kind="real"))
            ri += 1
    return MixedBatch(samples=samples, composition=(n_real, n_synth))
