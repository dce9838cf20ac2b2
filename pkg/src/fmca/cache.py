"""On-disk frame cache, atomic file writes and run manifests.

Cache layout::

    cache.json          signal settings and source directory
    index.tsv           file, utterance, label, speaker, frames, width
    skipped.tsv         utterance, reason, detail
    frames/00000.bin    one block per utterance

Each block is a ``<II`` (rows, cols) header followed by little-endian
float64 values in row-major order. Nothing time-dependent is written, so
rebuilding from the same inputs gives byte-identical files.
"""

import contextlib
import csv
import hashlib
import json
import os
import shutil
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import FrameDataset
from .exceptions import DataError

BLOCK_HEADER = struct.Struct("<II")
INDEX_COLUMNS = ["file", "utterance", "label", "speaker", "frames", "width"]
SKIP_COLUMNS = ["utterance", "reason", "detail"]
CACHE_VERSION = 1


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _publish(tmp, path, mode=0o666):
    # mkstemp/mkdtemp create private entries; give the result normal permissions
    os.chmod(tmp, mode & ~_umask())
    os.replace(tmp, path)


@contextlib.contextmanager
def atomic_write(path, mode="w", **kw):
    """Write to a temporary sibling and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        _publish(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling path for writers that open files themselves."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        _publish(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_block(fh, frames):
    frames = np.ascontiguousarray(frames, dtype="<f8")
    fh.write(BLOCK_HEADER.pack(*frames.shape))
    fh.write(frames.tobytes())


def read_block(fh):
    head = fh.read(BLOCK_HEADER.size)
    if len(head) != BLOCK_HEADER.size:
        raise DataError("truncated frame block header")
    rows, cols = BLOCK_HEADER.unpack(head)
    raw = fh.read(8 * rows * cols)
    if len(raw) != 8 * rows * cols:
        raise DataError("truncated frame block")
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)


def fingerprint(paths, root=None):
    """``(count, sha256)`` over the names and contents of ``paths`` in sorted order."""
    digest = hashlib.sha256()
    paths = sorted(Path(p) for p in paths)
    for p in paths:
        name = str(p.relative_to(root)) if root else p.name
        digest.update(name.encode("utf-8") + b"\0")
        digest.update(p.read_bytes())
    return len(paths), digest.hexdigest()


def write_cache(out_dir, dataset, skipped, meta):
    """Write the whole cache into a temporary directory, then swap it into place."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        (tmp / "frames").mkdir()
        rows = []
        for i in range(len(dataset)):
            name = f"frames/{i:05d}.bin"
            frames = dataset.utterance(i)
            with open(tmp / name, "wb") as fh:
                write_block(fh, frames)
            rows.append([name, dataset.utt_ids[i], dataset.labels[i], dataset.speakers[i],
                         frames.shape[0], frames.shape[1]])
        _write_tsv(tmp / "index.tsv", INDEX_COLUMNS, rows)
        _write_tsv(tmp / "skipped.tsv", SKIP_COLUMNS,
                   [[s.utterance_id, s.reason, s.detail] for s in skipped])
        with open(tmp / "cache.json", "w", encoding="utf-8") as fh:
            json.dump(dict(meta, version=CACHE_VERSION), fh, sort_keys=True, indent=1)
            fh.write("\n")
        if out_dir.exists():
            old = out_dir.with_name(f".{out_dir.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(out_dir, old)
            _publish(tmp, out_dir, 0o777)
            shutil.rmtree(old, ignore_errors=True)
        else:
            _publish(tmp, out_dir, 0o777)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def _write_tsv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_tsv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def read_cache_meta(cache_dir):
    path = Path(cache_dir) / "cache.json"
    if not path.is_file():
        raise DataError(f"{cache_dir}: not a frame cache (missing cache.json)")
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("version") != CACHE_VERSION:
        raise DataError(f"{cache_dir}: unsupported cache version {meta.get('version')}")
    return meta


def read_skipped(cache_dir):
    return _read_tsv(Path(cache_dir) / "skipped.tsv")


def load_cache(cache_dir):
    """Return ``(FrameDataset, meta)`` for a cache written by :func:`write_cache`."""
    cache_dir = Path(cache_dir)
    meta = read_cache_meta(cache_dir)
    rows = _read_tsv(cache_dir / "index.tsv")
    if not rows:
        raise DataError(f"{cache_dir}: cache index is empty")
    arrays = []
    for row in rows:
        with open(cache_dir / row["file"], "rb") as fh:
            block = read_block(fh)
        if block.shape != (int(row["frames"]), int(row["width"])):
            raise DataError(f"{row['file']}: block shape {block.shape} disagrees with the index")
        arrays.append(block)
    dataset = FrameDataset.from_list(arrays, np.array([r["label"] for r in rows]),
                                     [r["utterance"] for r in rows], [r["speaker"] for r in rows])
    return dataset, meta


def cache_files(cache_dir):
    cache_dir = Path(cache_dir)
    return [p for p in cache_dir.rglob("*") if p.is_file()]


@dataclass
class RunManifest:
    command: str
    config: dict
    dataset: dict
    seed: int
    version: str
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def write(self, path):
        with atomic_write(path, encoding="utf-8") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=1)
            fh.write("\n")
