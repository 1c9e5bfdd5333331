import struct

import numpy as np
import pytest

from painvit import vit as V
from painvit.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from painvit.errors import DimensionError, FormatError, TruncatedFileError
from painvit.optim import Adam
from painvit.pnm import read_image, read_pnm, write_image, write_pnm
from painvit.tensor import cross_entropy


# -- PGM / PPM ------------------------------------------------------------------------
def test_pnm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    gray = rng.integers(0, 256, (5, 7), dtype=np.uint8)
    color = rng.integers(0, 256, (4, 3, 3), dtype=np.uint8)
    write_pnm(tmp_path / "g.pgm", gray)
    write_pnm(tmp_path / "c.ppm", color)
    assert np.array_equal(read_pnm(tmp_path / "g.pgm"), gray)
    assert np.array_equal(read_pnm(tmp_path / "c.ppm"), color)
    img = read_image(tmp_path / "c.ppm")
    assert img.shape == (3, 4, 3) and img.max() <= 1.0
    write_image(tmp_path / "again.ppm", img)
    assert np.array_equal(read_pnm(tmp_path / "again.ppm"), color)


def test_pnm_comments_and_maxval(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n# made by hand\n2 1\n# depth\n15\n" + bytes([0, 15]))
    assert read_pnm(tmp_path / "a.pgm").tolist() == [[0, 255]]


def test_pnm_errors(tmp_path):
    (tmp_path / "text.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FormatError):
        read_pnm(tmp_path / "text.pgm")
    (tmp_path / "deep.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(FormatError):
        read_pnm(tmp_path / "deep.pgm")
    (tmp_path / "short.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(TruncatedFileError):
        read_pnm(tmp_path / "short.ppm")
    with pytest.raises(OSError):
        read_pnm(tmp_path / "absent.pgm")


# -- checkpoints --------------------------------------------------------------------
@pytest.fixture
def trained(tmp_path):
    model = V.set_trainable(V.init_parameters(V.preset("tiny", num_layers=2), 4), 1)
    opt = Adam(model.params, lr=1e-3)
    x = np.random.default_rng(0).random((2, 1, 32, 32))
    cross_entropy(model.forward(x).logits, np.array([0, 1])).backward()
    opt.step()
    path = tmp_path / "m.pvtc"
    save_checkpoint(model, path, opt)
    return model, opt, path


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_round_trip_is_bitwise(tmp_path, dtype):
    model = V.init_parameters(V.preset("tiny", num_layers=1), 2, dtype=dtype)
    save_checkpoint(model, tmp_path / "a.pvtc")
    back = load_checkpoint(tmp_path / "a.pvtc")
    assert back.config == model.config
    for name, p in model.named_parameters():
        assert back.params[name].dtype == dtype
        assert back.params[name].data.tobytes() == p.data.tobytes()


def test_checkpoint_keeps_flags_and_optimizer(trained):
    model, opt, path = trained
    back, back_opt = load_checkpoint(path, with_optimizer=True)
    assert back.trainable_flags() == model.trainable_flags()
    assert back_opt.step_count == 1 and back_opt.lr == opt.lr
    for name in opt.m:
        assert np.array_equal(back_opt.m[name], opt.m[name])
        assert np.array_equal(back_opt.v[name], opt.v[name])


def test_checkpoint_layout(trained):
    _, _, path = trained
    raw = path.read_bytes()
    assert raw[:4] == b"PVTC"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    header, tensors = read_checkpoint(path)
    assert list(tensors)[0] == "patch_embed.weight"
    assert header["model_config"]["num_layers"] == 2


def test_checkpoint_bad_magic_and_version(tmp_path, trained):
    _, _, path = trained
    raw = path.read_bytes()
    (tmp_path / "magic.pvtc").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "magic.pvtc")
    (tmp_path / "ver.pvtc").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(FormatError, match="version 9"):
        load_checkpoint(tmp_path / "ver.pvtc")


def test_checkpoint_truncated(tmp_path, trained):
    _, _, path = trained
    raw = path.read_bytes()
    for cut in (2, 10, len(raw) // 2, len(raw) - 1):
        (tmp_path / "cut.pvtc").write_bytes(raw[:cut])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(tmp_path / "cut.pvtc")


def test_checkpoint_shape_mismatch_names_tensor(trained):
    _, _, path = trained
    with pytest.raises(DimensionError, match="patch_embed.weight"):
        load_checkpoint(path, config=V.preset("paper"))
