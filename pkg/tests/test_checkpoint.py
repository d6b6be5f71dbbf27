import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fsenc.checkpoint import (MAGIC, ArchiveError, file_sha256, load_archive,
                              load_state_dict_tensors, parameter_hash,
                              save_archive, state_dict_tensors)


def test_round_trip_bit_exact(tmp_path):
    gen = torch.Generator().manual_seed(0)
    tensors = {
        "a/weight": torch.randn(4, 7, generator=gen),
        "a/bias": torch.randn(7, generator=gen),
        "scalar": torch.tensor(3.5),
    }
    specs = {"alpha": 1, "nested": {"x": [1, 2, 3]}}
    path = save_archive(tmp_path / "t.fse", tensors, specs)

    loaded, got_specs = load_archive(path)
    assert got_specs == specs
    for name, t in tensors.items():
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], t.numpy())

    # save the loaded contents again: identical bytes
    path2 = save_archive(tmp_path / "t2.fse", loaded, got_specs)
    assert path.read_bytes() == path2.read_bytes()
    assert file_sha256(path) == file_sha256(path2)


def test_magic_and_version_checked(tmp_path):
    path = tmp_path / "bad.fse"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ArchiveError):
        load_archive(path)
    good = save_archive(tmp_path / "ok.fse", {"t": torch.zeros(2)}, {})
    assert good.read_bytes()[:8] == MAGIC


def test_deterministic_regardless_of_dict_order(tmp_path):
    a = {"x": torch.ones(3), "y": torch.zeros(2)}
    b = {"y": torch.zeros(2), "x": torch.ones(3)}
    pa = save_archive(tmp_path / "a.fse", a, {"k": 1})
    pb = save_archive(tmp_path / "b.fse", b, {"k": 1})
    assert pa.read_bytes() == pb.read_bytes()


def test_module_state_round_trip(tmp_path):
    torch.manual_seed(1)
    module = torch.nn.Sequential(torch.nn.Linear(5, 3), torch.nn.Linear(3, 2))
    path = save_archive(tmp_path / "m.fse", state_dict_tensors(module, "net"), {})
    tensors, _ = load_archive(path)

    torch.manual_seed(2)
    other = torch.nn.Sequential(torch.nn.Linear(5, 3), torch.nn.Linear(3, 2))
    assert parameter_hash(other) != parameter_hash(module)
    load_state_dict_tensors(other, tensors, "net")
    assert parameter_hash(other) == parameter_hash(module)


def test_missing_tensors_rejected(tmp_path):
    module = torch.nn.Linear(4, 4)
    path = save_archive(tmp_path / "m.fse", {"net/weight": module.weight}, {})
    tensors, _ = load_archive(path)
    with pytest.raises(ArchiveError):
        load_state_dict_tensors(torch.nn.Linear(4, 4), tensors, "net")


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(1, 6)),
                min_size=1, max_size=5), st.integers(0, 2 ** 31 - 1))
def test_round_trip_random_shapes(shapes, seed):
    import tempfile
    gen = torch.Generator().manual_seed(seed)
    tensors = {}
    for i, (extra_dim, size) in enumerate(shapes):
        shape = (size,) if extra_dim == 0 else (extra_dim, size)
        tensors[f"t{i}"] = torch.randn(shape, generator=gen)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_archive(f"{tmp}/r.fse", tensors, {"seed": seed})
        loaded, specs = load_archive(path)
    assert specs["seed"] == seed
    for name, t in tensors.items():
        assert np.array_equal(loaded[name], t.numpy())
