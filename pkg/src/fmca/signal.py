"""Audio ingestion, endpoint trimming and framing.

The preprocessing chain is ``normalize -> trim_silence -> frame`` followed
optionally by :func:`to_spectral`. Frames are rectangular (no taper) and
nothing is zero-padded: a signal shorter than one frame is rejected.
"""

import csv
import logging
import re
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import (AllSilent, DataError, OddFrameLength, SignalTooShort,
                         SilentSignal)

logger = logging.getLogger(__name__)

TEMPORAL = "temporal"
SPECTRAL = "spectral"

DEFAULT_PATTERN = r"^(?P<label>\d+)_(?P<speaker>[^_]+)_(?P<index>[^_.]+)\.wav$"


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int
    utterance_id: str = ""
    label: Optional[int] = None
    speaker_id: Optional[str] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError(f"{self.utterance_id or 'signal'}: samples must be a non-empty 1-D array")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples):
        return replace(self, samples=samples)


@dataclass
class FrameBatch:
    """Frames of one utterance (or a concatenation of several).

    Attributes
    ----------
    frames : ndarray, shape (W, D)
        ``D == frame_len`` for temporal frames, ``frame_len // 2`` for spectral.
    utt_index : ndarray of int, shape (W,)
        Utterance each frame came from.
    frame_idx : ndarray of int, shape (W,)
        Position of the frame within its utterance.
    """

    frames: np.ndarray
    frame_len: int
    stride: int
    domain: str = TEMPORAL
    utt_index: np.ndarray = field(default=None)
    frame_idx: np.ndarray = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        n = self.frames.shape[0]
        if self.utt_index is None:
            self.utt_index = np.zeros(n, dtype=np.int64)
        if self.frame_idx is None:
            self.frame_idx = np.arange(n, dtype=np.int64)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def width(self):
        return self.frames.shape[1]


def normalize(signal):
    """Scale samples so that ``max(|x|) == 1``."""
    peak = float(np.max(np.abs(signal.samples)))
    if peak == 0.0:
        raise SilentSignal(f"{signal.utterance_id or 'signal'}: all samples are zero")
    out = signal.samples / peak
    # division can land a hair off 1.0; pin the peak exactly
    idx = int(np.argmax(np.abs(signal.samples)))
    out[idx] = np.sign(signal.samples[idx])
    return signal.with_samples(out)


def trim_silence(signal, threshold_ratio=0.02, window=128):
    """Cut leading and trailing silence with a short-time energy detector.

    The signal is split into non-overlapping windows of ``window`` samples
    (the last one may be partial). Windows whose mean square exceeds
    ``threshold_ratio**2`` are active; the result spans from the first to
    the last active window, snapped to the window grid.
    """
    if not 0.0 < threshold_ratio < 1.0:
        raise ValueError(f"threshold_ratio must lie in (0, 1), got {threshold_ratio}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = signal.samples
    n = x.size
    n_win = -(-n // window)
    padded = np.zeros(n_win * window)
    padded[:n] = x**2
    sums = padded.reshape(n_win, window).sum(axis=1)
    counts = np.full(n_win, window, dtype=np.float64)
    counts[-1] = n - (n_win - 1) * window
    active = np.flatnonzero(sums / counts > threshold_ratio**2)
    if active.size == 0:
        raise AllSilent(f"{signal.utterance_id or 'signal'}: no window above threshold")
    start = active[0] * window
    stop = min((active[-1] + 1) * window, n)
    return signal.with_samples(x[start:stop].copy())


def frame(signal, frame_len, stride):
    """Cut a signal into ``W = (N - L) // S + 1`` rectangular frames."""
    if frame_len < 2:
        raise ValueError(f"frame_len must be >= 2, got {frame_len}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal, dtype=np.float64)
    if x.size < frame_len:
        uid = getattr(signal, "utterance_id", "") or "signal"
        raise SignalTooShort(f"{uid}: {x.size} samples < frame length {frame_len}")
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::stride]
    return FrameBatch(np.ascontiguousarray(view), frame_len, stride, TEMPORAL)


def to_spectral(batch):
    """Replace each temporal frame by DFT magnitudes of bins ``0 .. L/2 - 1``.

    DC is kept and the Nyquist bin dropped so that the width is exactly ``L/2``.
    """
    if batch.domain != TEMPORAL:
        raise ValueError(f"expected temporal frames, got {batch.domain}")
    if batch.frame_len % 2:
        raise OddFrameLength(f"spectral frames need an even frame length, got {batch.frame_len}")
    mags = np.abs(np.fft.rfft(batch.frames, axis=1))[:, : batch.frame_len // 2]
    return replace(batch, frames=mags, domain=SPECTRAL)


def spectral_frames(frames):
    """Array-level counterpart of :func:`to_spectral` for temporal frames of shape (W, L)."""
    frames = np.asarray(frames, dtype=np.float64)
    return np.abs(np.fft.rfft(frames, axis=1))[:, : frames.shape[1] // 2]


def preprocess(signal, frame_len, stride, domain=SPECTRAL, threshold_ratio=0.02, window=128):
    """Run the full chain on one signal and return its :class:`FrameBatch`."""
    sig = trim_silence(normalize(signal), threshold_ratio, window)
    batch = frame(sig, frame_len, stride)
    if domain == SPECTRAL:
        batch = to_spectral(batch)
    elif domain != TEMPORAL:
        raise ValueError(f"unknown domain {domain!r}")
    return batch


def read_wav(path, label=None, speaker_id=None):
    """Read a mono 16-bit PCM WAV file, mapping samples to [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataError(f"{path.name}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise DataError(f"{path.name}: expected 16-bit samples, got {8 * fh.getsampwidth()}-bit")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path.name}: unreadable WAV ({exc})") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise DataError(f"{path.name}: no samples")
    return AudioSignal(samples, rate, path.stem, label, speaker_id)


def write_wav(path, samples, sample_rate):
    """Write float samples in [-1, 1] as mono 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(pcm.tobytes())


def parse_filename(name, pattern=DEFAULT_PATTERN):
    """Return ``(label, speaker)`` from a file name, or ``None`` if it does not match."""
    m = re.match(pattern, name)
    if m is None:
        return None
    groups = m.groupdict()
    return int(groups["label"]), groups.get("speaker")


def scan_dataset(directory, pattern=DEFAULT_PATTERN):
    """List ``(path, label, speaker)`` for matching WAV files, sorted by name."""
    entries = []
    for path in sorted(Path(directory).iterdir()):
        if not path.is_file():
            continue
        parsed = parse_filename(path.name, pattern)
        if parsed is None:
            logger.debug("ignoring %s: name does not match pattern", path.name)
            continue
        entries.append((path, parsed[0], parsed[1]))
    return entries


def export_frames_csv(path, batches, utt_ids):
    """Debug dump: one frame per row, ``utt,frame_idx,v0..v{D-1}``."""
    batches = list(batches)
    width = batches[0].width if batches else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utt", "frame_idx"] + [f"v{i}" for i in range(width)])
        for uid, batch in zip(utt_ids, batches):
            for idx, row in zip(batch.frame_idx, batch.frames):
                writer.writerow([uid, int(idx)] + [repr(float(v)) for v in row])
