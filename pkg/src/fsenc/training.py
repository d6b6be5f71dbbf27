"""Encoder training: dual-inversion forward pass, noise protocol, loss
composition, schedule, checkpointing, and the ablation suite.

The generator stays frozen; gradients flow through it into the encoder
only. Synthetic samples replay their stored noise while real samples get
a fresh seeded draw, so every run is bitwise reproducible and resumable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from .checkpoint import (load_archive, load_state_dict_tensors, parameter_hash,
                         save_archive, state_dict_tensors)
from .data import DatasetHandle, MixedBatch, RealStream, mix_seed, next_batch
from .encoder import Encoder, EncoderSpec
from .generator import Generator, NoiseBundle
from .metrics import KahanMean, evaluate, psnr
from .objectives import (BatchForward, ConfigurationError, Embedder, LossReport,
                         LossWeights, desk_embedder, multiscale_lpips, total_loss)
from .pretrain import TrainingDiverged

__all__ = ["AblationFlags", "TrainConfig", "TrainResult", "train", "train_step",
           "run_ablation_suite", "load_bundle", "ModelBundle",
           "PERCEPTUAL_SEED", "IDENTITY_SEED", "PARSING_SEED"]

# fixed seeds for the frozen stand-in embedders, shared project-wide
PERCEPTUAL_SEED = 101
IDENTITY_SEED = 202
PARSING_SEED = 303

EVAL_NOISE_SEED = 0


@dataclass(frozen=True)
class AblationFlags:
    multiscale: bool = True
    feature_branch: bool = True
    synthetic_data: bool = True

    def to_dict(self) -> dict:
        return {"multiscale": self.multiscale, "feature_branch": self.feature_branch,
                "synthetic_data": self.synthetic_data}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationFlags":
        return cls(**d)

    @classmethod
    def named(cls, name: str) -> "AblationFlags":
        """The four published configurations A..D."""
        table = {
            "A": cls(multiscale=False),
            "B": cls(feature_branch=False),
            "C": cls(synthetic_data=False),
            "D": cls(),
        }
        if name not in table:
            raise ValueError(f"unknown ablation {name!r}; choose from A, B, C, D")
        return table[name]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    composition: tuple[int, int] = (2, 2)
    epochs: int = 12
    iters_per_epoch: int = 10_000
    lr: float = 1e-4
    lr_drop_factor: float = 10.0
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    k_inject: int | None = None
    val_every: int = 500
    val_count: int = 128
    block_channels: tuple[int, int, int, int] = (64, 128, 256, 256)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.iters_per_epoch < 1:
            raise ValueError("counts must be positive")
        if sum(self.composition) != self.batch_size:
            raise ValueError(f"composition {self.composition} does not sum to "
                             f"batch_size {self.batch_size}")

    @classmethod
    def desk(cls, seed: int = 0, **overrides) -> "TrainConfig":
        """Desk-scale preset: 6 epochs x 500 iters, last epoch at lr/10."""
        return cls(epochs=6, iters_per_epoch=500, seed=seed, **overrides)

    @property
    def drop_epochs(self) -> int:
        return max(1, self.epochs // 6)

    def lr_at(self, epoch: int) -> float:
        if epoch >= self.epochs - self.drop_epochs:
            return self.lr / self.lr_drop_factor
        return self.lr

    def effective_composition(self) -> tuple[int, int]:
        if not self.ablation.synthetic_data:
            return (self.batch_size, 0)
        return self.composition

    def scales(self) -> tuple[int, ...]:
        return (0, 1, 2) if self.ablation.multiscale else (0,)

    def effective_weights(self) -> LossWeights:
        if self.ablation.multiscale:
            return self.weights
        # single-scale perceptual term is rescaled to a comparable magnitude
        return replace(self.weights, lambda1=self.weights.lambda1 * 3.0)

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "composition": list(self.composition),
            "epochs": self.epochs,
            "iters_per_epoch": self.iters_per_epoch,
            "lr": self.lr,
            "lr_drop_factor": self.lr_drop_factor,
            "seed": self.seed,
            "weights": self.weights.to_dict(),
            "ablation": self.ablation.to_dict(),
            "k_inject": self.k_inject,
            "val_every": self.val_every,
            "val_count": self.val_count,
            "block_channels": list(self.block_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "composition" in d:
            d["composition"] = tuple(d["composition"])
        if "block_channels" in d:
            d["block_channels"] = tuple(d["block_channels"])
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        if "ablation" in d:
            d["ablation"] = AblationFlags.from_dict(d["ablation"])
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ModelBundle:
    """Everything needed for inference, as loaded from a checkpoint."""

    generator: Generator
    encoder: Encoder
    eval_noise: NoiseBundle
    train_config: TrainConfig | None = None
    checkpoint_path: Path | None = None


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path | None
    epochs: int
    steps: int
    history: list[dict]
    validations: list[dict]
    final_report: LossReport


def _batch_noise_maps(generator: Generator, batch: MixedBatch, seed: int,
                      epoch: int, step: int) -> list[torch.Tensor]:
    """Per-sample noise: stored ground truth for synthetics, seeded fresh
    draws for reals; stacked per layer."""
    per_sample = []
    for j, sample in enumerate(batch.samples):
        if sample.gt_noise is not None:
            per_sample.append(sample.gt_noise.maps)
        else:
            fresh = generator.noise_bundle(mix_seed(seed, "real_noise", epoch, step, j))
            per_sample.append(fresh.maps)
    return [torch.stack([maps[l] for maps in per_sample])
            for l in range(generator.spec.n_layers)]


def train_step(generator: Generator, encoder: Encoder, optimizer, batch: MixedBatch,
               config: TrainConfig, perceptual: Embedder,
               identity: Embedder | None = None, parsing: Embedder | None = None,
               epoch: int = 0, step: int = 0) -> LossReport:
    """One optimizer update on the encoder; returns the itemized losses."""
    images = torch.stack([s.image for s in batch.samples])
    is_synth = torch.tensor([s.kind == "synthetic" for s in batch.samples])
    noise_maps = _batch_noise_maps(generator, batch, config.seed, epoch, step)

    use_feature = config.ablation.feature_branch
    ws, feats = encoder.encode_batch(images)
    x1, inputs = generator.run_layers(ws, noise_maps, want_trace=use_feature)
    if use_feature:
        feature_target = inputs[generator.spec.k_inject - 1]
        x2 = generator.synthesize_with_feature_batch(ws, feats, noise_maps)
    else:
        feats, feature_target, x2 = None, None, None

    fwd = BatchForward(images=images, is_synthetic=is_synth, x1=x1, x2=x2,
                       feature=feats, feature_target=feature_target,
                       scales=config.scales())
    report = total_loss(fwd, config.effective_weights(), perceptual,
                        identity=identity, parsing=parsing)
    if not torch.isfinite(report.total):
        raise TrainingDiverged(step, report.detach().to_dict())

    optimizer.zero_grad(set_to_none=True)
    report.total.backward()
    optimizer.step()
    return report


def _validate(generator: Generator, encoder: Encoder, dataset: DatasetHandle,
              val_ids: list[int], eval_noise: NoiseBundle,
              perceptual: Embedder) -> dict:
    """Mean PSNR of both variants plus the multi-scale perceptual distance
    of the delivered inversion, on the held-out split with pinned noise."""
    has_x2 = encoder.spec.feature_branch_enabled
    noise_maps = [m.unsqueeze(0) for m in eval_noise.maps]
    psnr1, psnr2, mlp = KahanMean(), KahanMean(), KahanMean()
    with torch.no_grad():
        for start in range(0, len(val_ids), 16):
            chunk = val_ids[start:start + 16]
            images = torch.stack([dataset.load_image(i) for i in chunk])
            nmaps = [m.expand(len(chunk), -1, -1, -1) for m in noise_maps]
            ws, feats = encoder.encode_batch(images)
            x1, _ = generator.run_layers(ws, nmaps)
            x2 = (generator.synthesize_with_feature_batch(ws, feats, nmaps)
                  if has_x2 else None)
            for j in range(len(chunk)):
                psnr1.add(psnr(x1[j], images[j]))
                delivered = x2[j] if has_x2 else x1[j]
                if has_x2:
                    psnr2.add(psnr(x2[j], images[j]))
                mlp.add(float(multiscale_lpips(delivered, images[j], perceptual)))
    out = {"psnr_x1": psnr1.mean, "m_lpips": mlp.mean}
    if has_x2:
        out["psnr_x2"] = psnr2.mean
    return out


def _save_train_checkpoint(path, generator: Generator, encoder: Encoder,
                           optimizer, config: TrainConfig, eval_noise: NoiseBundle,
                           epoch: int, step: int) -> Path:
    tensors = {}
    tensors.update(state_dict_tensors(generator, "generator"))
    tensors.update(state_dict_tensors(encoder, "encoder"))
    for l, m in enumerate(eval_noise.maps):
        tensors[f"eval_noise/{l}"] = m
    for i, p in enumerate(encoder.parameters()):
        state = optimizer.state.get(p, {})
        if "exp_avg" in state:
            tensors[f"optim/{i}/exp_avg"] = state["exp_avg"]
            tensors[f"optim/{i}/exp_avg_sq"] = state["exp_avg_sq"]
            tensors[f"optim/{i}/step"] = state["step"]
    specs = {
        "kind": "encoder",
        "generator_spec": generator.spec.to_dict(),
        "encoder_spec": encoder.spec.to_dict(),
        "train_config": config.to_dict(),
        "progress": {"epoch": epoch, "step": step},
        "eval_noise_seed": EVAL_NOISE_SEED,
    }
    return save_archive(path, tensors, specs)


def _restore_optimizer(optimizer, encoder: Encoder, tensors: dict) -> None:
    for i, p in enumerate(encoder.parameters()):
        key = f"optim/{i}/exp_avg"
        if key in tensors:
            optimizer.state[p] = {
                "step": torch.from_numpy(tensors[f"optim/{i}/step"]).clone(),
                "exp_avg": torch.from_numpy(tensors[key]).clone(),
                "exp_avg_sq": torch.from_numpy(tensors[f"optim/{i}/exp_avg_sq"]).clone(),
            }


def default_embedders() -> tuple[Embedder, Embedder, Embedder]:
    return (desk_embedder(PERCEPTUAL_SEED), desk_embedder(IDENTITY_SEED),
            desk_embedder(PARSING_SEED))


def train(generator: Generator, dataset: DatasetHandle, config: TrainConfig,
          out_path, resume_from=None, quiet: bool = True) -> TrainResult:
    """Full encoder training; writes per-epoch checkpoints, a JSON-lines log
    and the final checkpoint at ``out_path``."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    log_path = out_path.with_suffix(".log.jsonl")

    if config.k_inject is not None and config.k_inject != generator.spec.k_inject:
        generator = _with_k(generator, config.k_inject)
    generator.requires_grad_(False)
    generator.eval()

    perceptual, identity, parsing = default_embedders()
    if config.weights.face_mode and (identity is None or parsing is None):
        raise ConfigurationError("face_mode requires identity and parsing embedders")

    espec = EncoderSpec.from_generator(
        generator.spec, block_channels=config.block_channels,
        feature_branch_enabled=config.ablation.feature_branch)
    encoder = Encoder(espec, seed=mix_seed(config.seed, "encoder_init"),
                      w_mean=generator.mean_w())
    optimizer = torch.optim.Adam(encoder.parameters(), lr=config.lr,
                                 betas=(0.9, 0.999), eps=1e-8)

    start_epoch = 0
    if resume_from is not None:
        tensors, specs = load_archive(resume_from)
        load_state_dict_tensors(encoder, tensors, "encoder")
        _restore_optimizer(optimizer, encoder, tensors)
        start_epoch = specs["progress"]["epoch"] + 1

    n_real, _ = config.effective_composition()
    stream = None
    val_ids: list[int]
    if len(dataset) <= config.val_count:
        raise ValueError(f"dataset of {len(dataset)} images cannot hold out "
                         f"{config.val_count} for validation")
    train_ids, val_ids = dataset.split(config.val_count)
    if n_real > 0:
        stream = RealStream(dataset, train_ids, seed=mix_seed(config.seed, "reals"))

    eval_noise = generator.noise_bundle(EVAL_NOISE_SEED)
    frozen_hash = parameter_hash(generator)

    history: list[dict] = []
    validations: list[dict] = []
    report = LossReport()
    global_step = start_epoch * config.iters_per_epoch

    with open(log_path, "a" if resume_from else "w") as log_file:
        def log(entry: dict):
            log_file.write(json.dumps(entry) + "\n")

        def run_validation(step):
            val = _validate(generator, encoder, dataset, val_ids, eval_noise,
                            perceptual)
            val.update({"type": "validation", "step": step})
            validations.append(val)
            log(val)
            if not quiet:
                print(f"  val @ {step}: " + ", ".join(
                    f"{k}={v:.4f}" for k, v in val.items()
                    if isinstance(v, float)))

        for epoch in range(start_epoch, config.epochs):
            lr = config.lr_at(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            for it in range(config.iters_per_epoch):
                if global_step % config.val_every == 0:
                    run_validation(global_step)
                batch = next_batch(stream, generator, config.effective_composition(),
                                   seed=config.seed, epoch=epoch, step=it)
                report = train_step(generator, encoder, optimizer, batch, config,
                                    perceptual,
                                    identity if config.weights.face_mode else None,
                                    parsing if config.weights.face_mode else None,
                                    epoch=epoch, step=it)
                entry = report.detach().to_dict()
                entry.update({"type": "loss", "step": global_step,
                              "epoch": epoch, "lr": lr})
                history.append(entry)
                log(entry)
                global_step += 1
            _save_train_checkpoint(
                out_path.with_name(f"{out_path.stem}.epoch{epoch:02d}{out_path.suffix}"),
                generator, encoder, optimizer, config, eval_noise, epoch, global_step)
        run_validation(global_step)

    if parameter_hash(generator) != frozen_hash:
        raise RuntimeError("generator parameters changed during encoder training")

    _save_train_checkpoint(out_path, generator, encoder, optimizer, config,
                           eval_noise, config.epochs - 1, global_step)
    return TrainResult(checkpoint_path=out_path, log_path=log_path,
                       epochs=config.epochs, steps=global_step, history=history,
                       validations=validations, final_report=report.detach())


def _with_k(generator: Generator, k: int) -> Generator:
    """Same weights, different injection layer."""
    moved = Generator(generator.spec.with_k(k), seed=0)
    moved.load_state_dict(generator.state_dict())
    moved.requires_grad_(False)
    return moved


def load_bundle(path) -> ModelBundle:
    """Load an encoder checkpoint back into ready-to-use modules."""
    tensors, specs = load_archive(path)
    from .generator import GeneratorSpec
    gspec = GeneratorSpec.from_dict(specs["generator_spec"])
    espec = EncoderSpec.from_dict(specs["encoder_spec"])
    generator = Generator(gspec, seed=0)
    load_state_dict_tensors(generator, tensors, "generator")
    generator.requires_grad_(False)
    generator.eval()
    encoder = Encoder(espec, seed=0)
    load_state_dict_tensors(encoder, tensors, "encoder")
    encoder.requires_grad_(False)
    encoder.eval()
    maps = []
    for l in range(gspec.n_layers):
        maps.append(torch.from_numpy(tensors[f"eval_noise/{l}"]))
    cfg = TrainConfig.from_dict(specs["train_config"]) if "train_config" in specs else None
    return ModelBundle(generator=generator, encoder=encoder,
                       eval_noise=NoiseBundle(maps), train_config=cfg,
                       checkpoint_path=Path(path))


def run_ablation_suite(generator: Generator, dataset: DatasetHandle,
                       base_config: TrainConfig, out_dir,
                       configs: tuple[str, ...] = ("A", "B", "C", "D"),
                       k_sweep: tuple[int, ...] = (4, 5, 6, 7)) -> list[dict]:
    """Train every requested configuration and tabulate evaluation metrics.

    Rows carry the delivered-inversion metrics (x2, or x1 when the feature
    branch is off). Writes ``ablation.csv`` under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    perceptual, identity, _ = default_embedders()
    rows = []

    def run_one(label: str, config: TrainConfig) -> dict:
        result = train(generator, dataset, config, out_dir / f"{label}.fse")
        bundle = load_bundle(result.checkpoint_path)
        _, val_ids = dataset.split(config.val_count)
        reports = evaluate(bundle.encoder, bundle.generator, dataset, val_ids,
                           identity, perceptual, bundle.eval_noise)
        delivered = reports.get("x2", reports["x1"])
        row = {"config": label,
               "k_inject": bundle.generator.spec.k_inject,
               "delivered": "x2" if "x2" in reports else "x1",
               **{f"x1_{k}": v for k, v in reports["x1"].to_dict().items()},
               **{f"delivered_{k}": v for k, v in delivered.to_dict().items()}}
        rows.append(row)
        return row

    for name in configs:
        run_one(name, replace(base_config, ablation=AblationFlags.named(name)))
    for k in k_sweep:
        run_one(f"K{k}", replace(base_config, k_inject=k))

    if rows:
        import csv
        with open(out_dir / "ablation.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows
