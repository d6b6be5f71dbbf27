import numpy as np
import pytest
import torch

from fsenc.generator import Generator, GeneratorSpec

torch.manual_seed(0)


@pytest.fixture(scope="session")
def default_spec():
    return GeneratorSpec()


@pytest.fixture(scope="session")
def default_generator(default_spec):
    return Generator(default_spec, seed=42)


@pytest.fixture(scope="session")
def tiny_spec():
    # 16x16 output, 5 conv layers, cheap enough for property tests
    return GeneratorSpec(z_dim=16, w_dim=16, output_resolution=16,
                         base_channels=32, channel_floor=8, k_inject=3)


@pytest.fixture(scope="session")
def tiny_generator(tiny_spec):
    return Generator(tiny_spec, seed=7)


def random_wplus(spec, seed, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    from fsenc.generator import LatentWPlus
    return LatentWPlus(torch.randn(spec.n_layers, spec.w_dim,
                                   generator=gen).to(dtype))


def random_spec(rng: np.random.Generator) -> GeneratorSpec:
    out_res = int(rng.choice([8, 16, 32]))
    n_layers = 1 + 2 * int(np.log2(out_res // 4))
    return GeneratorSpec(
        z_dim=int(rng.choice([4, 8, 16])),
        w_dim=int(rng.choice([4, 8, 16])),
        output_resolution=out_res,
        base_channels=int(rng.choice([8, 16, 32])),
        channel_floor=int(rng.choice([4, 8])),
        k_inject=int(rng.integers(2, n_layers + 1)),
        noise_enabled=bool(rng.integers(0, 2)),
        mapping_layers=int(rng.integers(1, 3)),
    )
