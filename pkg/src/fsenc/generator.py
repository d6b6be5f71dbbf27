"""Miniature style-based generator.

A mapping network turns a latent ``z`` into a style vector ``w``; the
synthesis network starts from a learned constant and applies N modulated
conv layers (instance-norm + per-channel scale/bias from a per-layer
affine of the style block, plus scaled single-channel noise). Synthesis
can be traced, and can start mid-network from an externally supplied
feature tensor injected at conv layer K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "GeneratorSpec",
    "LatentWPlus",
    "NoiseBundle",
    "FeatureCode",
    "SynthesisTrace",
    "Generator",
    "SynthesisError",
]


class SynthesisError(RuntimeError):
    """Shape or numeric failure inside the synthesis network."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GeneratorSpec:
    """Static architecture description; all layer shapes derive from it."""

    z_dim: int = 64
    w_dim: int = 64
    base_resolution: int = 4
    output_resolution: int = 32
    base_channels: int = 128
    channel_floor: int = 32
    k_inject: int = 5
    noise_enabled: bool = True
    mapping_layers: int = 2

    def __post_init__(self):
        if not _is_pow2(self.output_resolution) or self.output_resolution < 8:
            raise ValueError(f"output_resolution must be a power of two >= 8, "
                             f"got {self.output_resolution}")
        if not _is_pow2(self.base_resolution):
            raise ValueError("base_resolution must be a power of two")
        if not 2 <= self.k_inject <= self.n_layers:
            raise ValueError(f"k_inject must be in [2, {self.n_layers}], "
                             f"got {self.k_inject}")
        if min(self.z_dim, self.w_dim, self.base_channels,
               self.channel_floor, self.mapping_layers) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def n_layers(self) -> int:
        return 1 + 2 * int(math.log2(self.output_resolution // self.base_resolution))

    def layer_resolution(self, layer: int) -> int:
        """Operating (output) resolution of 1-based conv layer ``layer``."""
        if not 1 <= layer <= self.n_layers:
            raise ValueError(f"layer {layer} out of range 1..{self.n_layers}")
        if layer == 1:
            return self.base_resolution
        return self.base_resolution * 2 ** (layer // 2)

    def layer_upsamples(self, layer: int) -> bool:
        return layer >= 2 and layer % 2 == 0

    def channels_at(self, resolution: int) -> int:
        halvings = int(math.log2(resolution // self.base_resolution))
        return max(self.base_channels >> halvings, self.channel_floor)

    def layer_out_channels(self, layer: int) -> int:
        return self.channels_at(self.layer_resolution(layer))

    def layer_in_channels(self, layer: int) -> int:
        if layer == 1:
            return self.channels_at(self.base_resolution)
        return self.layer_out_channels(layer - 1)

    def layer_input_resolution(self, layer: int) -> int:
        """Resolution of the tensor handed to ``layer``, before its upsample."""
        if layer == 1:
            return self.base_resolution
        return self.layer_resolution(layer - 1)

    def feature_shape(self, k: int | None = None) -> tuple[int, int, int]:
        """Shape of the feature code injected at layer ``k`` (default K)."""
        k = self.k_inject if k is None else k
        if not 2 <= k <= self.n_layers:
            raise ValueError(f"injection layer {k} out of range 2..{self.n_layers}")
        res = self.layer_resolution(k - 1)
        return (self.layer_out_channels(k - 1), res, res)

    def noise_shape(self, layer: int) -> tuple[int, int, int]:
        res = self.layer_resolution(layer)
        return (1, res, res)

    def with_k(self, k: int) -> "GeneratorSpec":
        return replace(self, k_inject=k)

    def to_dict(self) -> dict:
        return {
            "z_dim": self.z_dim, "w_dim": self.w_dim,
            "base_resolution": self.base_resolution,
            "output_resolution": self.output_resolution,
            "base_channels": self.base_channels,
            "channel_floor": self.channel_floor,
            "k_inject": self.k_inject,
            "noise_enabled": self.noise_enabled,
            "mapping_layers": self.mapping_layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(**d)


@dataclass
class LatentWPlus:
    """Extended latent code: one style vector per conv layer, shape (N, w_dim)."""

    blocks: torch.Tensor

    def __post_init__(self):
        if self.blocks.ndim != 2:
            raise ValueError(f"blocks must be (n_layers, w_dim), got {tuple(self.blocks.shape)}")

    @property
    def n_layers(self) -> int:
        return self.blocks.shape[0]

    def block(self, layer: int) -> torch.Tensor:
        """1-based access to a single style block."""
        return self.blocks[layer - 1]

    def clone(self) -> "LatentWPlus":
        return LatentWPlus(self.blocks.clone())


@dataclass
class NoiseBundle:
    """Per-layer single-channel noise maps, each (1, res_l, res_l)."""

    maps: list[torch.Tensor]

    def clone(self) -> "NoiseBundle":
        return NoiseBundle([m.clone() for m in self.maps])


@dataclass
class FeatureCode:
    """Replacement tensor for the input of conv layer K, shape (C, h, w)."""

    tensor: torch.Tensor

    def clone(self) -> "FeatureCode":
        return FeatureCode(self.tensor.clone())


@dataclass
class SynthesisTrace:
    """Per-layer conv inputs (pre-upsample), the noise consumed, and the image."""

    layer_inputs: list[torch.Tensor] = field(default_factory=list)
    noise_used: NoiseBundle | None = None
    image: torch.Tensor | None = None


class MappingNetwork(nn.Module):
    """Fully connected z -> w map; no activation after the last layer."""

    def __init__(self, z_dim: int, w_dim: int, n_layers: int):
        super().__init__()
        dims = [z_dim] + [w_dim] * n_layers
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers))

    def forward(self, z):
        x = z
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = F.leaky_relu(x, 0.2)
        return x


class StyleLayer(nn.Module):
    """One modulated conv: optional x2 upsample, 3x3 conv, instance norm,
    per-channel scale/bias from the style block, scaled noise, leaky relu."""

    def __init__(self, in_channels: int, out_channels: int, w_dim: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.out_channels = out_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False)
        self.affine = nn.Linear(w_dim, 2 * out_channels)
        self.noise_scale = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x, w_block, noise):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.conv(x)
        x = F.instance_norm(x)
        style = self.affine(w_block)
        gamma, beta = style.chunk(2, dim=1)
        x = gamma[:, :, None, None] * x + beta[:, :, None, None]
        if noise is not None:
            x = x + self.noise_scale[None, :, None, None] * noise
        return F.leaky_relu(x, 0.2)


class Generator(nn.Module):
    """Mapping network plus traced synthesis network."""

    def __init__(self, spec: GeneratorSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.mapping = MappingNetwork(spec.z_dim, spec.w_dim, spec.mapping_layers)
        self.const = nn.Parameter(torch.empty(
            spec.channels_at(spec.base_resolution),
            spec.base_resolution, spec.base_resolution))
        self.layers = nn.ModuleList(
            StyleLayer(spec.layer_in_channels(l), spec.layer_out_channels(l),
                       spec.w_dim, spec.layer_upsamples(l))
            for l in range(1, spec.n_layers + 1))
        self.to_rgb = nn.Conv2d(spec.layer_out_channels(spec.n_layers), 3, 1)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)

        def randn_like(t, std):
            return torch.randn(t.shape, generator=gen) * std

        with torch.no_grad():
            self.const.copy_(randn_like(self.const, 1.0))
            for lin in self.mapping.layers:
                lin.weight.copy_(randn_like(lin.weight, lin.in_features ** -0.5))
                lin.bias.zero_()
            for layer in self.layers:
                fan_in = layer.conv.weight[0].numel()
                layer.conv.weight.copy_(randn_like(layer.conv.weight, fan_in ** -0.5))
                layer.affine.weight.copy_(randn_like(layer.affine.weight, 0.05))
                layer.affine.bias.zero_()
                layer.affine.bias[:layer.out_channels] = 1.0  # scale part starts at 1
                layer.noise_scale.zero_()
            self.to_rgb.weight.copy_(randn_like(
                self.to_rgb.weight, self.to_rgb.weight[0].numel() ** -0.5))
            self.to_rgb.bias.zero_()

    # ---- latent plumbing -------------------------------------------------

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.spec.z_dim:
            raise ValueError(f"z has length {z.shape[-1]}, expected {self.spec.z_dim}")
        if not torch.isfinite(z).all():
            raise ValueError("z contains non-finite entries")
        return self.mapping(z)

    def broadcast_w(self, w: torch.Tensor) -> LatentWPlus:
        if w.shape != (self.spec.w_dim,):
            raise ValueError(f"w has shape {tuple(w.shape)}, expected ({self.spec.w_dim},)")
        return LatentWPlus(w.unsqueeze(0).repeat(self.spec.n_layers, 1))

    def mean_w(self, n_samples: int = 10_000, seed: int = 0) -> torch.Tensor:
        """Average mapped style over seeded Gaussian draws."""
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(n_samples, self.spec.z_dim, generator=gen)
        with torch.no_grad():
            return self.mapping(z).mean(dim=0)

    # ---- noise -----------------------------------------------------------

    def sample_noise(self, seed: int, batch: int = 1) -> list[torch.Tensor]:
        gen = torch.Generator().manual_seed(seed)
        return [torch.randn(batch, *self.spec.noise_shape(l), generator=gen)
                for l in range(1, self.spec.n_layers + 1)]

    def noise_bundle(self, seed: int) -> NoiseBundle:
        return NoiseBundle([m[0] for m in self.sample_noise(seed, batch=1)])

    def zero_noise(self) -> NoiseBundle:
        return NoiseBundle([torch.zeros(self.spec.noise_shape(l))
                            for l in range(1, self.spec.n_layers + 1)])

    def _check_noise_batch(self, noise_maps):
        if len(noise_maps) != self.spec.n_layers:
            raise SynthesisError(f"expected {self.spec.n_layers} noise maps, "
                                 f"got {len(noise_maps)}")
        for l, m in enumerate(noise_maps, start=1):
            if tuple(m.shape[1:]) != self.spec.noise_shape(l):
                raise SynthesisError(
                    f"noise map {l} has shape {tuple(m.shape[1:])}, "
                    f"expected {self.spec.noise_shape(l)}")

    # ---- batched synthesis core -------------------------------------------

    def run_layers(self, ws, noise_maps, start_layer: int = 1,
                   x0: torch.Tensor | None = None, want_trace: bool = False):
        """Run conv layers ``start_layer..N`` on batched inputs.

        ws: (B, N, w_dim); noise_maps: list of N tensors (B, 1, r, r) or None
        when noise is disabled; x0: starting tensor, defaults to the learned
        constant. Returns (image, list of recorded pre-upsample layer inputs).
        """
        spec = self.spec
        batch = ws.shape[0]
        if ws.shape[1] != spec.n_layers or ws.shape[2] != spec.w_dim:
            raise SynthesisError(f"latents must be (B, {spec.n_layers}, {spec.w_dim}), "
                                 f"got {tuple(ws.shape)}")
        use_noise = spec.noise_enabled and noise_maps is not None
        if use_noise:
            self._check_noise_batch(noise_maps)
        if x0 is None:
            x = self.const.unsqueeze(0).expand(batch, -1, -1, -1)
        else:
            x = x0
        inputs = []
        for l in range(start_layer, spec.n_layers + 1):
            expect = (spec.layer_in_channels(l), spec.layer_input_resolution(l),
                      spec.layer_input_resolution(l))
            if tuple(x.shape[1:]) != expect:
                raise SynthesisError(f"layer {l} input has shape {tuple(x.shape[1:])}, "
                                     f"expected {expect}")
            if want_trace:
                inputs.append(x)
            x = self.layers[l - 1](x, ws[:, l - 1], noise_maps[l - 1] if use_noise else None)
            if not torch.isfinite(x).all():
                raise SynthesisError(f"non-finite activations after layer {l}")
        image = torch.tanh(self.to_rgb(x))
        return image, inputs

    def features_to_k(self, ws, noise_maps, k: int | None = None) -> torch.Tensor:
        """Batched feature maps entering conv layer k (pre-upsample)."""
        spec = self.spec
        k = spec.k_inject if k is None else k
        use_noise = spec.noise_enabled and noise_maps is not None
        if use_noise:
            self._check_noise_batch(noise_maps)
        x = self.const.unsqueeze(0).expand(ws.shape[0], -1, -1, -1)
        for l in range(1, k):
            x = self.layers[l - 1](x, ws[:, l - 1], noise_maps[l - 1] if use_noise else None)
            if not torch.isfinite(x).all():
                raise SynthesisError(f"non-finite activations after layer {l}")
        return x

    # ---- spec-level single-sample operations -------------------------------

    def _batch_w(self, w: LatentWPlus) -> torch.Tensor:
        if w.blocks.shape != (self.spec.n_layers, self.spec.w_dim):
            raise SynthesisError(
                f"latent blocks have shape {tuple(w.blocks.shape)}, expected "
                f"({self.spec.n_layers}, {self.spec.w_dim})")
        return w.blocks.unsqueeze(0)

    def _batch_noise(self, noise: NoiseBundle | None):
        if noise is None:
            return None
        return [m.unsqueeze(0) for m in noise.maps]

    @torch.no_grad()
    def synthesize(self, w: LatentWPlus, noise: NoiseBundle | None = None,
                   trace: bool = False):
        """Generate an image from a latent code; optionally record the trace.

        Inference-only; training goes through the batched ``run_layers``.
        """
        image, inputs = self.run_layers(self._batch_w(w), self._batch_noise(noise),
                                        want_trace=trace)
        if not trace:
            return image[0]
        rec = SynthesisTrace(layer_inputs=[t[0] for t in inputs],
                             noise_used=noise, image=image[0])
        return image[0], rec

    @torch.no_grad()
    def extract_features_at_k(self, w: LatentWPlus, noise: NoiseBundle | None = None,
                              k: int | None = None) -> FeatureCode:
        feats = self.features_to_k(self._batch_w(w), self._batch_noise(noise), k=k)
        return FeatureCode(feats[0])

    @torch.no_grad()
    def synthesize_with_feature(self, w: LatentWPlus, feature: FeatureCode,
                                noise: NoiseBundle | None = None) -> torch.Tensor:
        expect = self.spec.feature_shape()
        if tuple(feature.tensor.shape) != expect:
            raise SynthesisError(f"feature code has shape {tuple(feature.tensor.shape)}, "
                                 f"expected {expect}")
        image, _ = self.run_layers(self._batch_w(w), self._batch_noise(noise),
                                   start_layer=self.spec.k_inject,
                                   x0=feature.tensor.unsqueeze(0))
        return image[0]

    def synthesize_with_feature_batch(self, ws, features, noise_maps) -> torch.Tensor:
        image, _ = self.run_layers(ws, noise_maps, start_layer=self.spec.k_inject,
                                   x0=features)
        return image

    def style_affine_weights(self) -> list[torch.Tensor]:
        """Per-layer matrices mapping a style block to its channel scales."""
        return [layer.affine.weight[:layer.out_channels].detach()
                for layer in self.layers]
