import io
import os

import numpy as np
import pytest

from fmca.cache import (RunManifest, atomic_path, atomic_write, fingerprint, load_cache,
                        read_block, read_skipped, write_block, write_cache)
from fmca.engine import FrameDataset
from fmca.evaluation import SkipRecord
from fmca.exceptions import DataError


def test_block_roundtrip_and_layout():
    frames = np.arange(6, dtype=float).reshape(2, 3) / 7
    buf = io.BytesIO()
    write_block(buf, frames)
    raw = buf.getvalue()
    assert raw[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(raw) == 8 + 6 * 8
    np.testing.assert_array_equal(read_block(io.BytesIO(raw)), frames)
    with pytest.raises(DataError):
        read_block(io.BytesIO(raw[:-1]))


def test_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ds = FrameDataset.from_list([rng.standard_normal((n, 4)) for n in (3, 5, 2)],
                                np.array(["a", "b", "a"]), ["u0", "u1", "u2"], ["s0", "s1", "s0"])
    skipped = [SkipRecord("bad", "SilentSignal", "all zero")]
    write_cache(tmp_path / "c", ds, skipped, {"config": {"frame_len": 8}})
    back, meta = load_cache(tmp_path / "c")
    np.testing.assert_array_equal(back.frames, ds.frames)
    assert list(back.labels) == ["a", "b", "a"] and back.utt_ids == ds.utt_ids
    assert meta["config"]["frame_len"] == 8
    assert read_skipped(tmp_path / "c") == [{"utterance": "bad", "reason": "SilentSignal",
                                             "detail": "all zero"}]
    first = fingerprint([p for p in (tmp_path / "c").rglob("*") if p.is_file()], tmp_path / "c")
    write_cache(tmp_path / "c", ds, skipped, {"config": {"frame_len": 8}})
    second = fingerprint([p for p in (tmp_path / "c").rglob("*") if p.is_file()], tmp_path / "c")
    assert first == second
    assert sorted(os.listdir(tmp_path)) == ["c"]


def test_not_a_cache(tmp_path):
    with pytest.raises(DataError):
        load_cache(tmp_path)


def test_atomic_write_leaves_old_file_on_failure(tmp_path):
    path = tmp_path / "out.txt"
    path.write_text("old")
    with pytest.raises(RuntimeError):
        with atomic_write(path) as fh:
            fh.write("new")
            raise RuntimeError("boom")
    assert path.read_text() == "old"
    assert os.listdir(tmp_path) == ["out.txt"]
    with atomic_path(path) as tmp:
        open(tmp, "w").write("new")
    assert path.read_text() == "new"


def test_manifest(tmp_path):
    RunManifest("train", {"seed": 1}, {"files": 2, "sha256": "ab"}, 1, "0.1").write(tmp_path / "m.json")
    assert '"command": "train"' in (tmp_path / "m.json").read_text()
