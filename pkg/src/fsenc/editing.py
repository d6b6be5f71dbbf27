"""Latent-space editing: direction discovery, feature-aware application,
and style mixing.

Editing a latent code alone cannot reach content held by the injected
feature tensor, so the feature code is shifted by the difference between
the generator features of the edited and original latents (computed with
one shared noise realization).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoder import InversionResult
from .generator import FeatureCode, Generator, LatentWPlus, NoiseBundle

__all__ = [
    "EditDirection",
    "apply_direction",
    "edit_feature",
    "edit_image",
    "closed_form_directions",
    "linear_boundary",
    "style_mix",
    "load_directions",
]

ALPHA_RANGE = (-5.0, 5.0)


@dataclass
class EditDirection:
    """Unit-norm per-block direction restricted to a 1-based block range."""

    name: str
    source: str                       # "closed_form" | "boundary" | "manual"
    block_range: tuple[int, int]
    per_block: torch.Tensor           # (n_layers, w_dim), zeros outside range
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.block_range
        n = self.per_block.shape[0]
        if not 1 <= lo <= hi <= n:
            raise ValueError(f"block range {self.block_range} invalid for {n} blocks")
        outside = torch.ones(n, dtype=torch.bool)
        outside[lo - 1:hi] = False
        if outside.any() and float(self.per_block[outside].abs().max()) != 0.0:
            raise ValueError("direction has mass outside its block range")
        norm = float(torch.linalg.vector_norm(self.per_block.double()))
        if norm == 0.0:
            raise ValueError("direction is all zeros")
        if abs(norm - 1.0) > 1e-5:
            self.per_block = (self.per_block.double() / norm).to(self.per_block.dtype)

    def to_json_dict(self) -> dict:
        arr = np.ascontiguousarray(
            self.per_block.detach().cpu().numpy(), dtype="<f4")
        d = {
            "name": self.name,
            "source": self.source,
            "block_range": list(self.block_range),
            "per_block": base64.b64encode(arr.tobytes()).decode("ascii"),
            "shape": list(arr.shape),
        }
        if self.metadata:
            d["metadata"] = self.metadata
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "EditDirection":
        raw = base64.b64decode(d["per_block"])
        arr = np.frombuffer(raw, dtype="<f4").reshape(d["shape"]).copy()
        return cls(name=d["name"], source=d["source"],
                   block_range=tuple(d["block_range"]),
                   per_block=torch.from_numpy(arr),
                   metadata=d.get("metadata", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=1))
        return path

    @classmethod
    def load(cls, path) -> "EditDirection":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def load_directions(directory) -> list[EditDirection]:
    directory = Path(directory)
    return [EditDirection.load(p) for p in sorted(directory.glob("*.json"))]


def apply_direction(w: LatentWPlus, direction: EditDirection,
                    alpha: float) -> LatentWPlus:
    """w + alpha * d on the direction's block range, other blocks untouched."""
    if direction.per_block.shape != w.blocks.shape:
        raise ValueError(f"direction shape {tuple(direction.per_block.shape)} does "
                         f"not match latent {tuple(w.blocks.shape)}")
    lo, hi = direction.block_range
    out = w.blocks.clone()
    step = direction.per_block[lo - 1:hi].to(w.blocks.dtype)
    out[lo - 1:hi] = out[lo - 1:hi] + alpha * step
    return LatentWPlus(out)


def edit_feature(feature: FeatureCode, w: LatentWPlus, w_edit: LatentWPlus,
                 noise: NoiseBundle | None, generator: Generator) -> FeatureCode:
    """Shift the feature code by the generator-feature difference of the
    edited vs original latent, evaluated with the same noise."""
    with torch.no_grad():
        base = generator.extract_features_at_k(w, noise)
        moved = generator.extract_features_at_k(w_edit, noise)
    if feature.tensor.shape != base.tensor.shape:
        raise ValueError(f"feature shape {tuple(feature.tensor.shape)} does not "
                         f"match layer-K input {tuple(base.tensor.shape)}")
    return FeatureCode(feature.tensor + (moved.tensor - base.tensor))


def edit_image(inversion: InversionResult, direction: EditDirection, alpha: float,
               noise: NoiseBundle | None, generator: Generator) -> torch.Tensor:
    """Full edit: move the latent, shift the feature code, resynthesize."""
    w_edit = apply_direction(inversion.w, direction, alpha)
    f_edit = edit_feature(inversion.feature, inversion.w, w_edit, noise, generator)
    with torch.no_grad():
        return generator.synthesize_with_feature(w_edit, f_edit, noise)


def closed_form_directions(generator: Generator, block_range: tuple[int, int],
                           top_k: int) -> list[EditDirection]:
    """Top eigenvectors of A^T A for the stacked style-affine weights."""
    spec = generator.spec
    lo, hi = block_range
    if not 1 <= lo <= hi <= spec.n_layers:
        raise ValueError(f"block range {block_range} invalid for {spec.n_layers} layers")
    if top_k > spec.w_dim:
        raise ValueError(f"top_k {top_k} exceeds style dimension {spec.w_dim}")

    weights = generator.style_affine_weights()[lo - 1:hi]
    a = np.concatenate([w.double().numpy() for w in weights], axis=0)
    if not np.any(a):
        raise ValueError("style affine weights are identically zero")
    gram = a.T @ a
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1][:top_k]

    n_blocks = hi - lo + 1
    directions = []
    for rank, idx in enumerate(order):
        vec = eigvecs[:, idx]
        per_block = np.zeros((spec.n_layers, spec.w_dim))
        per_block[lo - 1:hi] = vec / np.sqrt(n_blocks)
        # kept in float64 so eigenpair residuals survive; JSON casts to f32
        directions.append(EditDirection(
            name=f"sefa_{rank:02d}",
            source="closed_form",
            block_range=(lo, hi),
            per_block=torch.from_numpy(per_block),
            metadata={"eigenvalue": float(eigvals[idx]), "rank": rank}))
    return directions


def linear_boundary(latents: list[LatentWPlus], labels, name: str = "boundary",
                    ridge: float = 1e-6) -> EditDirection:
    """Least-squares direction regressing a scalar label on concatenated
    latent blocks (closed-form normal equations with a small ridge)."""
    y = np.asarray(labels, dtype=np.float64)
    if len(latents) != len(y):
        raise ValueError("latent / label count mismatch")
    if np.unique(y).size < 2:
        raise ValueError("labels are constant; no boundary exists")
    n_layers, w_dim = latents[0].blocks.shape
    x = np.stack([w.blocks.detach().double().numpy().reshape(-1) for w in latents])
    dim = n_layers * w_dim
    if len(latents) <= dim / 10:
        raise ValueError(f"need more than {dim // 10} samples for dimension {dim}")

    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    beta = np.linalg.solve(xc.T @ xc + ridge * np.eye(dim), xc.T @ yc)
    resid = yc - xc @ beta
    r2 = 1.0 - float(resid @ resid) / float(yc @ yc)

    per_block = torch.from_numpy(
        (beta / np.linalg.norm(beta)).reshape(n_layers, w_dim))
    return EditDirection(name=name, source="boundary",
                         block_range=(1, n_layers), per_block=per_block,
                         metadata={"r2": r2, "n_samples": len(latents)})


def style_mix(w_from: InversionResult, f_from: InversionResult,
              noise: NoiseBundle | None, generator: Generator) -> torch.Tensor:
    """Latent code of one inversion with the feature code of another."""
    with torch.no_grad():
        return generator.synthesize_with_feature(w_from.w, f_from.feature, noise)
