"""Training losses over pluggable multi-level image embedders.

All losses accept single images (3,H,W) or batches (B,3,H,W) and reduce to
a scalar tensor. Embedders return one L2-normalized vector per level and
are kept frozen; the bundled desk embedder is a fixed-seed random conv
net standing in for heavyweight perceptual / identity / parsing networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "Embedder",
    "DeskEmbedder",
    "IdentityEmbedder",
    "LossWeights",
    "LossReport",
    "BatchForward",
    "ConfigurationError",
    "desk_embedder",
    "mse_loss",
    "downsample",
    "multiscale_lpips",
    "feature_recon_loss",
    "multilayer_cosine_loss",
    "total_loss",
]


class ConfigurationError(ValueError):
    """Loss configuration is inconsistent (e.g. missing embedder)."""


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (3,H,W) or (B,3,H,W), got {tuple(x.shape)}")


class Embedder(nn.Module):
    """Interface: ``levels(image)`` -> list of unit-norm vectors per level."""

    level_count: int

    def levels(self, image: torch.Tensor) -> list[torch.Tensor]:
        raise NotImplementedError

    def concat(self, image: torch.Tensor) -> torch.Tensor:
        """All levels concatenated along the feature dimension."""
        return torch.cat(self.levels(image), dim=-1)


class DeskEmbedder(Embedder):
    """Frozen random strided conv net; smooth (tanh) so losses built on it
    are cleanly differentiable."""

    def __init__(self, seed: int, levels: int = 5, base_channels: int = 16):
        super().__init__()
        self.level_count = levels
        gen = torch.Generator().manual_seed(seed)
        chans = [3] + [min(base_channels * 2 ** i, 64) for i in range(levels)]
        self.convs = nn.ModuleList()
        for i in range(levels):
            conv = nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
            with torch.no_grad():
                fan_in = conv.weight[0].numel()
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * fan_in ** -0.5 * 2.0)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            self.convs.append(conv)
        self.requires_grad_(False)
        self.eval()

    def levels(self, image: torch.Tensor) -> list[torch.Tensor]:
        x, squeeze = _batched(image)
        x = x.to(self.convs[0].weight.dtype)
        outs = []
        for conv in self.convs:
            x = torch.tanh(conv(x))
            vec = x.mean(dim=(2, 3))
            vec = F.normalize(vec, dim=1, eps=1e-12)
            outs.append(vec[0] if squeeze else vec)
        return outs


class IdentityEmbedder(Embedder):
    """Single level: the normalized flattened image itself."""

    def __init__(self):
        super().__init__()
        self.level_count = 1

    def levels(self, image: torch.Tensor) -> list[torch.Tensor]:
        x, squeeze = _batched(image)
        vec = F.normalize(x.reshape(x.shape[0], -1), dim=1, eps=1e-12)
        return [vec[0] if squeeze else vec]


def desk_embedder(seed: int, levels: int = 5) -> DeskEmbedder:
    return DeskEmbedder(seed=seed, levels=levels)


# ---- loss weights / report -------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective (face terms optional)."""

    lambda1: float = 0.2
    lambda2: float = 0.01
    lambda3: float = 0.1
    lambda4: float = 0.1
    mse_on_real: bool = False
    face_mode: bool = False

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2,
                "lambda3": self.lambda3, "lambda4": self.lambda4,
                "mse_on_real": self.mse_on_real, "face_mode": self.face_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


@dataclass
class LossReport:
    """Itemized loss terms; ``total`` is their weighted sum. Values are
    scalar tensors during training, plain floats after ``detach()``."""

    mse: object = 0.0
    m_lpips_x1: object = 0.0
    m_lpips_x2: object = 0.0
    f_recon: object = 0.0
    id_x1: object = 0.0
    id_x2: object = 0.0
    parse_x1: object = 0.0
    parse_x2: object = 0.0
    total: object = 0.0

    FIELDS = ("mse", "m_lpips_x1", "m_lpips_x2", "f_recon",
              "id_x1", "id_x2", "parse_x1", "parse_x2", "total")

    def recompose(self, weights: LossWeights) -> float:
        """Recompute the weighted sum from the itemized terms."""
        val = self._value
        total = (val(self.mse)
                 + weights.lambda1 * (val(self.m_lpips_x1) + val(self.m_lpips_x2))
                 + weights.lambda2 * val(self.f_recon))
        if weights.face_mode:
            total += (weights.lambda3 * (val(self.id_x1) + val(self.id_x2))
                      + weights.lambda4 * (val(self.parse_x1) + val(self.parse_x2)))
        return total

    @staticmethod
    def _value(term) -> float:
        if isinstance(term, torch.Tensor):
            return float(term.detach())
        return float(term)

    def detach(self) -> "LossReport":
        return LossReport(**{f: self._value(getattr(self, f)) for f in self.FIELDS})

    def to_dict(self) -> dict:
        return {f: self._value(getattr(self, f)) for f in self.FIELDS}


# ---- individual losses ------------------------------------------------------


def mse_loss(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of the squared difference."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return (x_hat - x).square().mean()


def downsample(x: torch.Tensor, i: int) -> torch.Tensor:
    """``i`` applications of non-overlapping 2x2 average pooling."""
    if i < 0:
        raise ValueError("downsample count must be >= 0")
    xb, squeeze = _batched(x)
    for _ in range(i):
        if xb.shape[-1] % 2 or xb.shape[-2] % 2:
            raise ValueError(f"cannot halve odd size {tuple(xb.shape[-2:])}")
        xb = F.avg_pool2d(xb, 2)
    return xb[0] if squeeze else xb


def _embed_distance(a: torch.Tensor, b: torch.Tensor, embedder: Embedder) -> torch.Tensor:
    ea = embedder.concat(a)
    eb = embedder.concat(b)
    if ea.ndim == 1:
        return torch.linalg.vector_norm(ea - eb)
    return torch.linalg.vector_norm(ea - eb, dim=1).mean()


def multiscale_lpips(x_hat: torch.Tensor, x: torch.Tensor, embedder: Embedder,
                     scales: tuple[int, ...] = (0, 1, 2)) -> torch.Tensor:
    """Sum over scales of the embedding distance between pooled images."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    total = None
    for i in scales:
        d = _embed_distance(downsample(x_hat, i), downsample(x, i), embedder)
        total = d if total is None else total + d
    return total


def feature_recon_loss(feature: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between the feature code and its target."""
    if feature.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(feature.shape)} vs {tuple(target.shape)}")
    return (feature - target).square().mean()


def multilayer_cosine_loss(x_hat: torch.Tensor, x: torch.Tensor,
                           embedder: Embedder) -> torch.Tensor:
    """Sum over five levels of (1 - cosine similarity)."""
    if embedder.level_count != 5:
        raise ConfigurationError(
            f"multi-layer cosine loss needs a 5-level embedder, "
            f"got {embedder.level_count}")
    levels_hat = embedder.levels(x_hat)
    levels_ref = embedder.levels(x)
    total = None
    for eh, er in zip(levels_hat, levels_ref):
        # for unit vectors 1 - <a,b> == |a-b|^2 / 2; this form is exact at a == b
        term = (eh - er).square().sum(dim=-1).div(2.0).mean()
        total = term if total is None else total + term
    return total


# ---- combined objective ------------------------------------------------------


@dataclass
class BatchForward:
    """Everything the combined objective needs from one forward pass."""

    images: torch.Tensor                    # (B,3,H,W) inputs
    is_synthetic: torch.Tensor              # (B,) bool
    x1: torch.Tensor                        # latent-only inversions
    x2: torch.Tensor | None = None          # latent+feature inversions
    feature: torch.Tensor | None = None     # predicted feature codes
    feature_target: torch.Tensor | None = None  # features entering layer K for x1
    scales: tuple[int, ...] = (0, 1, 2)


def total_loss(fwd: BatchForward, weights: LossWeights, perceptual: Embedder,
               identity: Embedder | None = None,
               parsing: Embedder | None = None) -> LossReport:
    """Combine all enabled terms; disabled terms stay 0 in the report."""
    if weights.face_mode and (identity is None or parsing is None):
        raise ConfigurationError("face_mode requires identity and parsing embedders")

    zero = fwd.x1.new_zeros(())
    if weights.mse_on_real:
        mse = mse_loss(fwd.x1, fwd.images)
    else:
        mask = fwd.is_synthetic
        if bool(mask.any()):
            mse = mse_loss(fwd.x1[mask], fwd.images[mask])
        else:
            mse = zero

    lp1 = multiscale_lpips(fwd.x1, fwd.images, perceptual, fwd.scales)
    have_x2 = fwd.x2 is not None
    lp2 = multiscale_lpips(fwd.x2, fwd.images, perceptual, fwd.scales) if have_x2 else zero
    frec = (feature_recon_loss(fwd.feature, fwd.feature_target)
            if fwd.feature is not None and fwd.feature_target is not None else zero)

    # weighted sum in float64 so the itemized report recomposes exactly
    total = (mse.double() + weights.lambda1 * (lp1.double() + lp2.double())
             + weights.lambda2 * frec.double())
    report = LossReport(mse=mse, m_lpips_x1=lp1, m_lpips_x2=lp2, f_recon=frec)

    if weights.face_mode:
        report.id_x1 = multilayer_cosine_loss(fwd.x1, fwd.images, identity)
        report.id_x2 = (multilayer_cosine_loss(fwd.x2, fwd.images, identity)
                        if have_x2 else zero)
        report.parse_x1 = multilayer_cosine_loss(fwd.x1, fwd.images, parsing)
        report.parse_x2 = (multilayer_cosine_loss(fwd.x2, fwd.images, parsing)
                           if have_x2 else zero)
        total = (total
                 + weights.lambda3 * (report.id_x1.double() + report.id_x2.double())
                 + weights.lambda4 * (report.parse_x1.double() + report.parse_x2.double()))

    report.total = total
    return report
