"""Synthetic utterance corpora for tests and desk-scale experiments.

The chirp corpus mimics the structure that matters for spoken digits:
each class is a fixed sequence of frequency regimes (tones and sweeps)
whose order, not just content, distinguishes it. Durations, pitch
(per "speaker"), amplitude and background noise vary per utterance.
"""

from pathlib import Path

import numpy as np

from .signal import AudioSignal, write_wav

# (start_hz, end_hz) per regime
CHIRP_CLASSES = (
    ((500, 500), (1500, 2500)),
    ((1500, 2500), (500, 500)),
    ((2500, 1000), (2000, 2000)),
    ((800, 1800), (1800, 800)),
)


def _regime(f0, f1, n, rate, phase):
    inst = np.linspace(f0, f1, n)
    ph = phase + 2 * np.pi * np.cumsum(inst) / rate
    return np.sin(ph), ph[-1]


def chirp_utterance(pattern, rng, rate=8000, pitch=1.0, regime_len=(300, 500), silence=200,
                    noise=0.01):
    parts = [noise * rng.standard_normal(int(rng.integers(silence // 2, silence + 1)))]
    phase = rng.uniform(0, 2 * np.pi)
    for f0, f1 in pattern:
        n = int(rng.integers(regime_len[0], regime_len[1] + 1))
        seg, phase = _regime(f0 * pitch, f1 * pitch, n, rate, phase)
        parts.append(rng.uniform(0.5, 1.0) * seg + noise * rng.standard_normal(n))
    parts.append(noise * rng.standard_normal(int(rng.integers(silence // 2, silence + 1))))
    return np.concatenate(parts)


def chirp_corpus(n_per_class=200, n_classes=4, n_speakers=8, rate=8000, seed=0, **kw):
    """Labelled :class:`AudioSignal` list in class-major order."""
    if not 2 <= n_classes <= len(CHIRP_CLASSES):
        raise ValueError(f"n_classes must be in [2, {len(CHIRP_CLASSES)}]")
    rng = np.random.default_rng(seed)
    pitches = np.linspace(0.9, 1.1, n_speakers)
    signals = []
    for label in range(n_classes):
        for i in range(n_per_class):
            spk = i % n_speakers
            x = chirp_utterance(CHIRP_CLASSES[label], rng, rate, pitches[spk], **kw)
            signals.append(AudioSignal(x, rate, f"{label}_s{spk}_{i}", label, f"s{spk}"))
    return signals


def tone_corpus(freqs=(400, 2000), n_per_class=20, length=800, rate=8000, seed=0, noise=0.01):
    """Pure tones, one frequency per class, with random phase and amplitude."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / rate
    signals = []
    for label, f in enumerate(freqs):
        for i in range(n_per_class):
            x = rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
            x = x + noise * rng.standard_normal(length)
            signals.append(AudioSignal(x, rate, f"{label}_s{i % 4}_{i}", label, f"s{i % 4}"))
    return signals


def write_corpus(signals, directory):
    """Write signals as ``<label>_<speaker>_<index>.wav`` files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in signals:
        peak = np.max(np.abs(s.samples))
        write_wav(directory / f"{s.label}_{s.speaker_id}_{s.utterance_id.split('_')[-1]}.wav",
                  0.9 * s.samples / peak, s.sample_rate)
