"""Two-branch inversion encoder.

A small residual backbone downsamples the input through four stages; the
latent branch pools every stage into one vector and maps it through one
fully connected head per style block, while the feature branch turns the
penultimate stage into the feature code injected into the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import FeatureCode, Generator, GeneratorSpec, LatentWPlus, NoiseBundle

__all__ = ["EncoderSpec", "BackboneFeatures", "Encoder", "InversionResult", "invert"]


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of the encoder, tied to a generator's shapes."""

    input_resolution: int
    w_dim: int
    n_layers: int
    k_inject: int
    feature_channels: int
    feature_resolution: int
    stem_channels: int = 32
    block_channels: tuple[int, int, int, int] = (64, 128, 256, 256)
    feature_branch_convs: int = 2
    feature_branch_enabled: bool = True

    def __post_init__(self):
        if len(self.block_channels) != 4:
            raise ValueError("exactly 4 backbone blocks are required")
        if self.input_resolution % 16 != 0:
            raise ValueError("input resolution must be divisible by 16 "
                             "(four halving stages)")
        if self.feature_branch_convs < 1:
            raise ValueError("feature branch needs at least one conv")

    @classmethod
    def from_generator(cls, gspec: GeneratorSpec, **overrides) -> "EncoderSpec":
        c, h, _ = gspec.feature_shape()
        return cls(input_resolution=gspec.output_resolution, w_dim=gspec.w_dim,
                   n_layers=gspec.n_layers, k_inject=gspec.k_inject,
                   feature_channels=c, feature_resolution=h, **overrides)

    def stage_resolution(self, stage: int) -> int:
        """Spatial size after backbone stage ``stage`` (1-based)."""
        return self.input_resolution // 2 ** stage

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in (
            "input_resolution", "w_dim", "n_layers", "k_inject",
            "feature_channels", "feature_resolution", "stem_channels",
            "feature_branch_convs", "feature_branch_enabled")}
        d["block_channels"] = list(self.block_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        d = dict(d)
        d["block_channels"] = tuple(d["block_channels"])
        return cls(**d)


@dataclass
class BackboneFeatures:
    """The four stage outputs, stage i at input_resolution / 2^i."""

    stages: list[torch.Tensor]


def _norm(channels: int) -> nn.GroupNorm:
    # group norm stays well defined on 1x1 maps, unlike instance norm
    return nn.GroupNorm(8 if channels % 8 == 0 else 1, channels)


class ResBlock(nn.Module):
    """Two 3x3 convs with group norm plus a strided 1x1 skip."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1, bias=False)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm1 = _norm(out_channels)
        self.norm2 = _norm(out_channels)
        self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=2, bias=False)

    def forward(self, x):
        y = F.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        y = self.norm2(self.conv2(y))
        return F.leaky_relu(y + self.skip(x), 0.2)


class Encoder(nn.Module):
    """Backbone + latent heads + optional feature branch."""

    def __init__(self, spec: EncoderSpec, seed: int = 0,
                 w_mean: torch.Tensor | None = None):
        super().__init__()
        self.spec = spec
        self.stem = nn.Conv2d(3, spec.stem_channels, 3, padding=1)
        chans = [spec.stem_channels, *spec.block_channels]
        self.blocks = nn.ModuleList(
            ResBlock(chans[i], chans[i + 1]) for i in range(4))
        pooled = sum(spec.block_channels)
        self.heads = nn.ModuleList(
            nn.Linear(pooled, spec.w_dim) for _ in range(spec.n_layers))
        if spec.feature_branch_enabled:
            convs = []
            c_in = spec.block_channels[2]
            for i in range(spec.feature_branch_convs):
                convs.append(nn.Conv2d(c_in, spec.feature_channels, 3, padding=1))
                c_in = spec.feature_channels
            self.feature_convs = nn.ModuleList(convs)
        else:
            self.feature_convs = None
        self.reset_parameters(seed, w_mean)

    def reset_parameters(self, seed: int, w_mean: torch.Tensor | None = None) -> None:
        gen = torch.Generator().manual_seed(seed)

        def init_conv(conv, gain=1.0):
            fan_in = conv.weight[0].numel()
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * gain * fan_in ** -0.5)
                if conv.bias is not None:
                    conv.bias.zero_()

        init_conv(self.stem)
        for block in self.blocks:
            init_conv(block.conv1)
            init_conv(block.conv2)
            init_conv(block.skip)
            with torch.no_grad():
                for norm in (block.norm1, block.norm2):
                    norm.weight.fill_(1.0)
                    norm.bias.zero_()
        with torch.no_grad():
            for head in self.heads:
                head.weight.copy_(torch.randn(head.weight.shape, generator=gen) * 0.01)
                if w_mean is not None:
                    head.bias.copy_(w_mean.detach())
                else:
                    head.bias.zero_()
        if self.feature_convs is not None:
            for conv in self.feature_convs:
                init_conv(conv)

    # ---- branches ----------------------------------------------------------

    def _check_input(self, image: torch.Tensor) -> tuple[torch.Tensor, bool]:
        if image.ndim == 3:
            batched, squeeze = image.unsqueeze(0), True
        elif image.ndim == 4:
            batched, squeeze = image, False
        else:
            raise ValueError(f"expected (3,H,W) or (B,3,H,W), got {tuple(image.shape)}")
        want = (3, self.spec.input_resolution, self.spec.input_resolution)
        if tuple(batched.shape[1:]) != want:
            raise ValueError(f"input has shape {tuple(batched.shape[1:])}, expected {want}")
        return batched, squeeze

    def backbone_batch(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = F.leaky_relu(self.stem(images), 0.2)
        stages = []
        for block in self.blocks:
            x = block(x)
            stages.append(x)
        return stages

    def backbone(self, image: torch.Tensor) -> BackboneFeatures:
        batched, squeeze = self._check_input(image)
        stages = self.backbone_batch(batched)
        return BackboneFeatures([s[0] if squeeze else s for s in stages])

    def latent_batch(self, stages: list[torch.Tensor]) -> torch.Tensor:
        pooled = torch.cat([s.mean(dim=(2, 3)) for s in stages], dim=1)
        return torch.stack([head(pooled) for head in self.heads], dim=1)

    def latent_branch(self, feats: BackboneFeatures) -> LatentWPlus:
        stages = [s.unsqueeze(0) if s.ndim == 3 else s for s in feats.stages]
        return LatentWPlus(self.latent_batch(stages)[0])

    def feature_batch(self, stages: list[torch.Tensor]) -> torch.Tensor:
        if self.feature_convs is None:
            raise RuntimeError("feature branch is disabled for this encoder")
        x = stages[2]
        for i, conv in enumerate(self.feature_convs):
            x = conv(x)
            if i + 1 < len(self.feature_convs):
                x = F.leaky_relu(x, 0.2)
        size = self.spec.feature_resolution
        if x.shape[-1] != size:
            x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
        return x

    def feature_branch(self, feats: BackboneFeatures) -> FeatureCode:
        stages = [s.unsqueeze(0) if s.ndim == 3 else s for s in feats.stages]
        return FeatureCode(self.feature_batch(stages)[0])

    # ---- full encode -------------------------------------------------------

    def encode_batch(self, images: torch.Tensor):
        stages = self.backbone_batch(images)
        ws = self.latent_batch(stages)
        feats = self.feature_batch(stages) if self.feature_convs is not None else None
        return ws, feats

    def encode(self, image: torch.Tensor) -> tuple[LatentWPlus, FeatureCode | None]:
        batched, _ = self._check_input(image)
        ws, feats = self.encode_batch(batched)
        return (LatentWPlus(ws[0]),
                FeatureCode(feats[0]) if feats is not None else None)


@dataclass
class InversionResult:
    """Latent code, feature code, and both reconstructions of one image."""

    w: LatentWPlus
    feature: FeatureCode | None
    x1: torch.Tensor
    x2: torch.Tensor | None
    source: torch.Tensor | None = None


def invert(encoder: Encoder, generator: Generator, image: torch.Tensor,
           noise: NoiseBundle) -> InversionResult:
    """Encode an image and reconstruct it from w alone and from (w, F)."""
    with torch.no_grad():
        w, feature = encoder.encode(image)
        x1 = generator.synthesize(w, noise)
        x2 = (generator.synthesize_with_feature(w, feature, noise)
              if feature is not None else None)
    return InversionResult(w=w, feature=feature, x1=x1, x2=x2, source=image)
