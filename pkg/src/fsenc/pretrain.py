"""Adversarial pretraining of the miniature generator.

Non-saturating logistic loss with an R1 gradient penalty on a small conv
discriminator. The result is a frozen generator checkpoint that encoder
training builds on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import save_archive, state_dict_tensors
from .data import DatasetHandle, RealStream, mix_seed
from .generator import Generator, GeneratorSpec

__all__ = ["GanTrainConfig", "Discriminator", "pretrain_generator",
           "TrainingDiverged", "discriminator_real_accuracy"]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, diagnostics: dict):
        super().__init__(f"non-finite loss at step {step}: {diagnostics}")
        self.step = step
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class GanTrainConfig:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.99
    r1_gamma: float = 1.0
    r1_interval: int = 4
    seed: int = 0
    log_every: int = 100
    holdout: int = 128

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in (
            "steps", "batch_size", "lr", "beta1", "beta2", "r1_gamma",
            "r1_interval", "seed", "log_every", "holdout")}

    @classmethod
    def from_dict(cls, d: dict) -> "GanTrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class Discriminator(nn.Module):
    """Three strided convs and a linear head on 4x4 features."""

    def __init__(self, resolution: int, base_channels: int = 32, seed: int = 0):
        super().__init__()
        chans = [3]
        res = resolution
        c = base_channels
        self.convs = nn.ModuleList()
        while res > 4:
            self.convs.append(nn.Conv2d(chans[-1], c, 3, stride=2, padding=1))
            chans.append(c)
            c = min(c * 2, 128)
            res //= 2
        self.head = nn.Linear(chans[-1] * res * res, 1)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.weight[0].numel()
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * fan_in ** -0.5)
                conv.bias.zero_()
            self.head.weight.copy_(torch.randn(self.head.weight.shape, generator=gen)
                                   * self.head.in_features ** -0.5)
            self.head.bias.zero_()

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x.flatten(1)).squeeze(1)


def _latents_for_step(generator: Generator, batch: int, seed: int):
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, generator.spec.z_dim, generator=gen)
    noise = [torch.randn(batch, *generator.spec.noise_shape(l), generator=gen)
             for l in range(1, generator.spec.n_layers + 1)]
    return z, noise


def _generate(generator: Generator, z, noise):
    w = generator.mapping(z)
    ws = w.unsqueeze(1).repeat(1, generator.spec.n_layers, 1)
    image, _ = generator.run_layers(ws, noise)
    return image


def discriminator_real_accuracy(disc: Discriminator, dataset: DatasetHandle,
                                ids: list[int]) -> float:
    """Fraction of held-out reals the discriminator classifies as real."""
    hits = 0
    with torch.no_grad():
        for start in range(0, len(ids), 32):
            chunk = torch.stack([dataset.load_image(i) for i in ids[start:start + 32]])
            hits += int((disc(chunk) > 0).sum())
    return hits / len(ids)


def pretrain_generator(config: GanTrainConfig, dataset: DatasetHandle,
                       out_path, spec: GeneratorSpec | None = None,
                       log_path=None) -> dict:
    """Train generator + discriminator; write a generator checkpoint.

    Returns a summary dict with the final discriminator accuracy on the
    held-out reals and the per-step loss log.
    """
    spec = spec or GeneratorSpec()
    if dataset.resolution != spec.output_resolution:
        raise ValueError(f"dataset resolution {dataset.resolution} != generator "
                         f"output {spec.output_resolution}")
    train_ids, held_ids = dataset.split(config.holdout)
    stream = RealStream(dataset, train_ids, seed=mix_seed(config.seed, "gan_reals"))

    generator = Generator(spec, seed=config.seed)
    disc = Discriminator(spec.output_resolution, seed=mix_seed(config.seed, "disc"))
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2))

    log: list[dict] = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(config.steps):
            reals = torch.stack(stream.load(0, step, config.batch_size))
            z, noise = _latents_for_step(generator, config.batch_size,
                                         mix_seed(config.seed, "gan_z", step))

            # discriminator update
            with torch.no_grad():
                fakes = _generate(generator, z, noise)
            do_r1 = config.r1_gamma > 0 and step % config.r1_interval == 0
            reals_d = reals.requires_grad_(True) if do_r1 else reals
            real_logits = disc(reals_d)
            fake_logits = disc(fakes)
            loss_d = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
            if do_r1:
                grad = torch.autograd.grad(real_logits.sum(), reals_d,
                                           create_graph=True)[0]
                r1 = grad.square().sum(dim=(1, 2, 3)).mean()
                loss_d = loss_d + (config.r1_gamma * config.r1_interval / 2) * r1
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()

            # generator update
            fakes = _generate(generator, z, noise)
            loss_g = F.softplus(-disc(fakes)).mean()
            opt_g.zero_grad(set_to_none=True)
            loss_g.backward()
            opt_g.step()

            entry = {"step": step, "loss_d": float(loss_d.detach()),
                     "loss_g": float(loss_g.detach())}
            if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
                raise TrainingDiverged(step, entry)
            if step % config.log_every == 0 or step == config.steps - 1:
                log.append(entry)
                if log_file:
                    log_file.write(json.dumps(entry) + "\n")
    finally:
        if log_file:
            log_file.close()

    acc = discriminator_real_accuracy(disc, dataset, held_ids)
    with torch.no_grad():
        z, noise = _latents_for_step(generator, 64, mix_seed(config.seed, "probe"))
        probe = _generate(generator, z, noise)
    summary = {
        "disc_real_accuracy": acc,
        "sample_pixel_std": float(probe.std()),
        "steps": config.steps,
        "log": log,
    }

    tensors = state_dict_tensors(generator, "generator")
    specs = {
        "kind": "generator",
        "generator_spec": spec.to_dict(),
        "gan_config": config.to_dict(),
        "summary": {k: summary[k] for k in
                    ("disc_real_accuracy", "sample_pixel_std", "steps")},
    }
    save_archive(out_path, tensors, specs)
    summary["checkpoint"] = str(out_path)
    return summary


def load_generator(path, k_override: int | None = None) -> Generator:
    from .checkpoint import load_archive, load_state_dict_tensors
    tensors, specs = load_archive(path)
    spec = GeneratorSpec.from_dict(specs["generator_spec"])
    if k_override is not None:
        spec = replace(spec, k_inject=k_override)
    generator = Generator(spec, seed=0)
    load_state_dict_tensors(generator, tensors, "generator")
    generator.requires_grad_(False)
    return generator
