import os

import pytest
import torch

from mugan.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from mugan.errors import CheckpointCorruptError, CheckpointVersionError


def sample_payload():
    return {
        "kind": "test",
        "step": 17,
        "nested": {
            "weights": torch.randn(3, 4),
            "bias": torch.randn(4, dtype=torch.float64),
            "counts": torch.arange(5),
            "mask": torch.tensor([True, False, True]),
            "bytes": torch.randint(0, 255, (8,), dtype=torch.uint8),
        },
        "listy": [torch.ones(2), {"x": torch.zeros(1)}, 3.5, "txt", None],
        "tup": (1, torch.full((2, 2), 2.0)),
    }


def assert_equal_payload(a, b):
    assert set(a) == set(b)
    assert a["kind"] == b["kind"] and a["step"] == b["step"]
    for key in a["nested"]:
        ta, tb = a["nested"][key], b["nested"][key]
        assert ta.dtype == tb.dtype
        assert torch.equal(ta, tb)
    assert torch.equal(a["listy"][0], b["listy"][0])
    assert torch.equal(a["listy"][1]["x"], b["listy"][1]["x"])
    assert a["listy"][2:] == b["listy"][2:]
    assert a["tup"][0] == b["tup"][0]
    assert torch.equal(a["tup"][1], b["tup"][1])


class TestRoundTrip:
    def test_nested_payload_survives(self, tmp_path):
        torch.manual_seed(0)
        payload = sample_payload()
        path = tmp_path / "c.ckpt"
        save_checkpoint(payload, path)
        assert_equal_payload(payload, load_checkpoint(path))

    def test_bytes_stable_across_saves(self, tmp_path):
        torch.manual_seed(1)
        payload = sample_payload()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(payload, p1)
        save_checkpoint(payload, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bytes_stable_through_reload(self, tmp_path):
        torch.manual_seed(2)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(sample_payload(), p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_no_temp_file_left(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint({"x": torch.ones(1)}, path)
        leftovers = [f for f in os.listdir(tmp_path) if f != "c.ckpt"]
        assert leftovers == []

    def test_state_dict_round_trip(self, tmp_path):
        torch.manual_seed(3)
        net = torch.nn.Sequential(torch.nn.Conv2d(3, 8, 3), torch.nn.InstanceNorm2d(8, affine=True))
        path = tmp_path / "net.ckpt"
        save_checkpoint({"model": net.state_dict()}, path)
        restored = load_checkpoint(path)["model"]
        net2 = torch.nn.Sequential(
            torch.nn.Conv2d(3, 8, 3), torch.nn.InstanceNorm2d(8, affine=True)
        )
        net2.load_state_dict(restored)
        for p, q in zip(net.parameters(), net2.parameters()):
            assert torch.equal(p, q)


class TestFailureModes:
    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)

    def test_flipped_payload_byte(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(sample_payload(), path)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(sample_payload(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        import hashlib
        import pickle

        blob = pickle.dumps({"version": FORMAT_VERSION + 1, "payload": {}}, protocol=4)
        path = tmp_path / "future.ckpt"
        path.write_bytes(MAGIC + hashlib.sha256(blob).digest() + blob)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)
