import json
import struct

import numpy as np
import pytest

from pedfusion import checkpoint
from pedfusion.checkpoint import CheckpointError
from pedfusion.fusion import TINY, build


@pytest.fixture
def model():
    m = build("BLGPM", TINY, seed=4)
    rng = np.random.default_rng(0)
    for p in m.parameters():
        p.data[...] = rng.normal(size=p.shape)
    return m


def test_round_trip_bit_exact(model):
    buf = checkpoint.dumps(model, epoch=3, seed=4, metrics={"loss": 0.5})
    back, header = checkpoint.loads(buf)
    assert header["epoch"] == 3 and header["variant"] == "BLGPM" and header["dims"] == [2, 8, 8]
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    assert checkpoint.dumps(back, epoch=3, seed=4, metrics={"loss": 0.5}) == buf


def test_layout(model):
    buf = checkpoint.dumps(model)
    assert buf[:8] == b"PIPCKPT1"
    (hlen,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12 : 12 + hlen])
    assert set(header) == {"variant", "dims", "dtype", "epoch", "seed", "metrics"}
    (count,) = struct.unpack_from("<I", buf, 12 + hlen)
    assert count == len(list(model.named_parameters()))


def test_file_round_trip(tmp_path, model):
    path = checkpoint.save_checkpoint(model, tmp_path / "sub" / "m.ckpt")
    back, _ = checkpoint.load_checkpoint(path)
    assert path.read_bytes() == checkpoint.dumps(back)


@pytest.mark.parametrize(
    "mutate,match",
    [
        (lambda b: b"X" + b[1:], "magic"),
        (lambda b: b[:-1], "checksum"),
        (lambda b: b[: len(b) // 2], "checksum"),
        (lambda b: b[:100] + bytes([b[100] ^ 1]) + b[101:], "checksum"),
        (lambda b: b[:5], "truncated"),
    ],
)
def test_corruption_rejected(model, mutate, match):
    with pytest.raises(CheckpointError, match=match):
        checkpoint.loads(mutate(checkpoint.dumps(model)))


def test_no_partial_model_on_error(tmp_path, model, monkeypatch):
    built = []
    real = checkpoint.FusionModel

    def spy(*a, **k):
        built.append(1)
        return real(*a, **k)

    monkeypatch.setattr(checkpoint, "FusionModel", spy)
    with pytest.raises(CheckpointError):
        checkpoint.loads(checkpoint.dumps(model)[:-3])
    assert built == []


def test_variant_mismatch(model):
    buf = checkpoint.dumps(build("B", TINY))
    with pytest.raises(CheckpointError, match="variant mismatch"):
        checkpoint.loads(buf, variant="BL")
    checkpoint.loads(buf, variant="B")
