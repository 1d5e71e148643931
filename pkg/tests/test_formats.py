import numpy as np
import pytest

from latentvideo import formats
from latentvideo.errors import DataError, ShapeError


def test_video_round_trip(tmp_path, rng):
    frames = rng.random((5, 8, 6, 3)).astype(np.float32)
    formats.write_video(tmp_path / "v.hvid", frames)
    back = formats.read_video(tmp_path / "v.hvid")
    np.testing.assert_array_equal(back, frames)


def test_video_header_layout(tmp_path, rng):
    frames = rng.random((2, 4, 4, 3)).astype(np.float32)
    formats.write_video(tmp_path / "v.hvid", frames)
    raw = (tmp_path / "v.hvid").read_bytes()
    assert raw[:4] == b"HVID"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 4
    assert int.from_bytes(raw[12:16], "little") == 4
    assert len(raw) == 16 + 2 * 4 * 4 * 3 * 4


def test_video_shape_rejected(tmp_path):
    with pytest.raises(ShapeError):
        formats.write_video(tmp_path / "v.hvid", np.zeros((2, 4, 4, 1)))


def test_video_bad_magic(tmp_path):
    (tmp_path / "bad.hvid").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(DataError):
        formats.read_video(tmp_path / "bad.hvid")


def test_video_truncation_detected(tmp_path, rng):
    frames = rng.random((2, 4, 4, 3)).astype(np.float32)
    formats.write_video(tmp_path / "v.hvid", frames)
    raw = (tmp_path / "v.hvid").read_bytes()
    (tmp_path / "t.hvid").write_bytes(raw[:-8])
    with pytest.raises(DataError, match="truncated"):
        formats.read_video(tmp_path / "t.hvid")


def test_latent_round_trip_and_header(tmp_path, rng):
    seq = rng.normal(size=(7, 11)).astype(np.float32)
    formats.write_latents(tmp_path / "l.hlat", seq)
    raw = (tmp_path / "l.hlat").read_bytes()
    assert raw[:4] == b"HLAT"
    assert int.from_bytes(raw[4:8], "little") == 7
    assert int.from_bytes(raw[8:12], "little") == 11
    assert int.from_bytes(raw[12:16], "little") == 0
    np.testing.assert_array_equal(formats.read_latents(tmp_path / "l.hlat"), seq)


def test_access_log_records_reads(tmp_path, rng):
    formats.write_video(tmp_path / "v.hvid", rng.random((2, 4, 4, 3)).astype(np.float32))
    formats.write_latents(tmp_path / "l.hlat", rng.normal(size=(2, 3)).astype(np.float32))
    formats.reset_access_log()
    formats.read_video(tmp_path / "v.hvid")
    formats.read_latents(tmp_path / "l.hlat")
    kinds = [kind for kind, _ in formats.access_log]
    assert kinds == ["video", "latent"]


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"b.weight": rng.normal(size=(3, 4)).astype(np.float32),
              "a.bias": rng.normal(size=(5,)).astype(np.float32)}
    formats.save_checkpoint(tmp_path / "c.ckpt", "recon", {"k": 1}, 7, params)
    stage, config, epoch, loaded = formats.load_checkpoint(tmp_path / "c.ckpt")
    assert (stage, config, epoch) == ("recon", {"k": 1}, 7)
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])


def test_checkpoint_header_is_json_with_registry(tmp_path, rng):
    import json
    import struct
    params = {"w": rng.normal(size=(2, 2)).astype(np.float32),
              "v": rng.normal(size=(3,)).astype(np.float32)}
    formats.save_checkpoint(tmp_path / "c.ckpt", "predictor", {}, 1, params)
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:4] == b"HCKP"
    (hlen,) = struct.unpack("<I", raw[4:8])
    meta = json.loads(raw[8:8 + hlen].decode())
    assert meta["stage"] == "predictor"
    assert meta["params"]["v"]["shape"] == [3]
    # offsets are element offsets into the float32 blob, sorted by name
    assert meta["params"]["v"]["offset"] == 0
    assert meta["params"]["w"]["offset"] == 3
    blob = np.frombuffer(raw[8 + hlen:], dtype="<f4")
    np.testing.assert_array_equal(blob[3:7].reshape(2, 2), params["w"])


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(DataError, match="missing checkpoint"):
        formats.load_checkpoint(tmp_path / "nope.ckpt")


def test_training_log_round_trip(tmp_path):
    with formats.TrainingLog(tmp_path / "log.jsonl") as log:
        log.write({"epoch": 1, "loss": 0.5})
        log.write({"epoch": 2, "loss": 0.25})
    records = formats.read_training_log(tmp_path / "log.jsonl")
    assert records == [{"epoch": 1, "loss": 0.5}, {"epoch": 2, "loss": 0.25}]
