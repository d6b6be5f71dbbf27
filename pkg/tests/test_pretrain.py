import pytest
import torch

from fsenc.data import DatasetHandle, make_dataset
from fsenc.generator import GeneratorSpec
from fsenc.pretrain import (Discriminator, GanTrainConfig,
                            discriminator_real_accuracy, load_generator,
                            pretrain_generator)

MICRO_GSPEC = GeneratorSpec(z_dim=16, w_dim=16, output_resolution=16,
                            base_channels=32, channel_floor=8, k_inject=3)


@pytest.fixture(scope="module")
def gan_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("gan_data")
    return DatasetHandle(make_dataset(root / "d", n=30, resolution=16, seed=7))


def micro_gan_config(**overrides):
    defaults = dict(steps=2, batch_size=4, holdout=8, seed=0, log_every=1)
    defaults.update(overrides)
    return GanTrainConfig(**defaults)


def test_one_step_checkpoint_loads_and_synthesizes(gan_dataset, tmp_path):
    summary = pretrain_generator(micro_gan_config(steps=1), gan_dataset,
                                 tmp_path / "gan.fse", spec=MICRO_GSPEC)
    g = load_generator(summary["checkpoint"])
    assert g.spec == MICRO_GSPEC
    w = g.broadcast_w(g.map_latent(torch.zeros(16)).detach())
    img = g.synthesize(w, g.noise_bundle(0))
    assert img.shape == (3, 16, 16)
    assert all(not p.requires_grad for p in g.parameters())


def test_fixed_seed_identical_first_step_loss(gan_dataset, tmp_path):
    a = pretrain_generator(micro_gan_config(steps=1), gan_dataset,
                           tmp_path / "a.fse", spec=MICRO_GSPEC)
    b = pretrain_generator(micro_gan_config(steps=1), gan_dataset,
                           tmp_path / "b.fse", spec=MICRO_GSPEC)
    assert a["log"][0]["loss_d"] == b["log"][0]["loss_d"]
    assert a["log"][0]["loss_g"] == b["log"][0]["loss_g"]
    assert (tmp_path / "a.fse").read_bytes() == (tmp_path / "b.fse").read_bytes()


def test_resolution_mismatch_rejected(gan_dataset, tmp_path):
    with pytest.raises(ValueError):
        pretrain_generator(micro_gan_config(), gan_dataset, tmp_path / "g.fse",
                           spec=GeneratorSpec())  # 32x32 spec vs 16x16 data


def test_k_override_on_load(gan_dataset, tmp_path):
    summary = pretrain_generator(micro_gan_config(steps=1), gan_dataset,
                                 tmp_path / "gan.fse", spec=MICRO_GSPEC)
    g4 = load_generator(summary["checkpoint"], k_override=4)
    assert g4.spec.k_inject == 4


def test_discriminator_accuracy_bounded(gan_dataset):
    disc = Discriminator(16, seed=0)
    acc = discriminator_real_accuracy(disc, gan_dataset, list(range(10)))
    assert 0.0 <= acc <= 1.0


def test_log_written(gan_dataset, tmp_path):
    log_path = tmp_path / "gan.log.jsonl"
    pretrain_generator(micro_gan_config(steps=3), gan_dataset,
                       tmp_path / "gan.fse", spec=MICRO_GSPEC, log_path=log_path)
    lines = log_path.read_text().splitlines()
    assert len(lines) == 3
