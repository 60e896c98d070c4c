import struct

import numpy as np
import pytest

from mhelab.checkpoint import MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from mhelab.errors import (CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError,
                           CheckpointVersionError)
from mhelab.model import ModelConfig, build_model
from mhelab.train import CopyTask, TrainConfig, train


@pytest.fixture(params=["fp32", "fp64"])
def trained(request):
    m = build_model(ModelConfig(variant="mhe_add", precision=request.param, seed=1))
    train(m, CopyTask(seed=1), TrainConfig(steps=3, batch_size=4))
    return m


def test_save_load_save_is_byte_identical(trained, tmp_path):
    a = save_checkpoint(trained, tmp_path / "a.ckpt")
    b = save_checkpoint(load_checkpoint(a), tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_forward_is_bit_exact_after_reload(trained):
    toks = np.random.default_rng(0).integers(0, 16, size=(3, 32))
    again = from_bytes(to_bytes(trained))
    assert again.cfg == trained.cfg
    assert np.array_equal(trained.logits(toks), again.logits(toks))


def test_layout(trained):
    blob = to_bytes(trained)
    assert blob[:8] == b"MHELAB01"
    (hlen,) = struct.unpack_from("<I", blob, 8)
    header = blob[12:12 + hlen].decode()
    assert "config.variant=MHE_ADD" in header
    assert "param=layers.0.attn.eq 4,8 " in header
    assert f"dtype=f{4 if trained.cfg.precision == 'fp32' else 8}" in header
    itemsize = 4 if trained.cfg.precision == "fp32" else 8
    assert len(blob) - 12 - hlen == itemsize * sum(p.data.size for p in trained.parameters())


def test_bad_magic_is_format_error():
    blob = to_bytes(build_model(ModelConfig()))
    with pytest.raises(CheckpointFormatError):
        from_bytes(b"NOTMINE!" + blob[8:])
    with pytest.raises(CheckpointFormatError):
        from_bytes(b"")


def test_other_version_is_version_error():
    blob = to_bytes(build_model(ModelConfig()))
    with pytest.raises(CheckpointVersionError):
        from_bytes(b"MHELAB02" + blob[8:])


@pytest.mark.parametrize("cut", [5, 10, 20, -1])
def test_truncation(cut):
    blob = to_bytes(build_model(ModelConfig()))
    with pytest.raises(CheckpointTruncatedError):
        from_bytes(blob[:cut])


def test_shape_mismatch():
    blob = to_bytes(build_model(ModelConfig(vocab_size=16)))
    (hlen,) = struct.unpack_from("<I", blob, 8)
    header = blob[12:12 + hlen].replace(b"config.vocab_size=16", b"config.vocab_size=15")
    with pytest.raises(CheckpointShapeError):
        from_bytes(MAGIC + struct.pack("<I", len(header)) + header + blob[12 + hlen:])


def test_garbage_header_is_format_error():
    header = b"this is not a header\n"
    with pytest.raises(CheckpointFormatError):
        from_bytes(MAGIC + struct.pack("<I", len(header)) + header)
