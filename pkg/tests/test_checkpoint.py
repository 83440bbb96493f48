import json

import numpy as np
import pytest

from diffusion_pinn import neural_core as nc
from diffusion_pinn.checkpoint import END, MAGIC, load_checkpoint, read_header, save_checkpoint
from diffusion_pinn.errors import CheckpointError


@pytest.fixture
def saved(tmp_path):
    params = nc.init_network(3, 4)
    path = save_checkpoint(tmp_path / "a.dpc", params, seed=4, iteration=123, metadata={"target": {"name": "x"}})
    return path, params


def test_round_trip_is_bit_exact(saved):
    path, params = saved
    loaded, header = load_checkpoint(path)
    assert sorted(loaded) == sorted(params)
    for k in params:
        assert np.asarray(loaded[k]).tobytes() == np.asarray(params[k]).tobytes()
    assert header["d"] == 3 and header["seed"] == 4 and header["iteration"] == 123
    assert header["widths"] == nc.layer_widths(3)


def test_header_is_human_readable(saved):
    path, _ = saved
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    text = raw[len(MAGIC) : raw.index(END)].decode()
    assert json.loads(text)["metadata"]["target"]["name"] == "x"
    assert read_header(path)["dtype"] == "<f8"


def test_no_temp_file_left(saved):
    path, _ = saved
    assert not any(p.suffix == ".tmp" for p in path.parent.iterdir())


@pytest.mark.parametrize(
    "mangle",
    [
        lambda raw: b"garbage" + raw,
        lambda raw: raw[:-8],
        lambda raw: raw.replace(b'"d": 3', b'"d": 4'),
        lambda raw: raw.replace(END, b"\n"),
        lambda raw: raw.replace(b'"format": 1', b'"format": 9'),
        lambda raw: raw[: len(MAGIC) + 5] + b"}" + raw[len(MAGIC) + 6 :],
    ],
)
def test_defects_raise(saved, mangle):
    path, _ = saved
    path.write_bytes(mangle(path.read_bytes()))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_non_finite_refused(tmp_path):
    params = nc.init_network(2, 0)
    params["dec.2.bias"] = params["dec.2.bias"] * np.nan
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "bad.dpc", params, seed=0, iteration=0)
    assert not (tmp_path / "bad.dpc").exists()
