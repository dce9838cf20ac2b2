import csv

import numpy as np
import pytest

from fmca.config import PipelineConfig
from fmca.evaluation import (cross_validate, frames_from_signals, resolve_param, sweep,
                             write_cv_csv, write_sweep_csv)
from fmca.exceptions import ConfigError, InsufficientData
from fmca.signal import AudioSignal
from fmca.synthetic import tone_corpus

FAST = PipelineConfig(n_components=3, hidden_units=8, n_layers=1, n_iter=60, batch_size=64,
                      clf_epochs=60, folds=4, stride=2)


@pytest.fixture(scope="module")
def signals():
    return tone_corpus(freqs=(300, 900, 1800, 3000), n_per_class=4)


@pytest.fixture(scope="module")
def dataset(signals):
    return frames_from_signals(signals, FAST)[0]


def test_skips_bad_signals(signals):
    rng = np.random.default_rng(0)
    bad = [AudioSignal(np.zeros(800), 8000, "silent", 0, "s0"),
           AudioSignal(rng.standard_normal(30), 8000, "short", 0, "s0")]
    ds, skipped = frames_from_signals(list(signals) + bad, FAST)
    assert len(ds) == len(signals)
    assert {s.utterance_id: s.reason for s in skipped} == {"silent": "SilentSignal",
                                                           "short": "SignalTooShort"}
    with pytest.raises(InsufficientData):
        frames_from_signals(bad, FAST)


def test_cross_validate_shape_and_determinism(dataset):
    a = cross_validate(dataset, FAST)
    assert len(a.fold_accuracies) == 4 and all(0 <= x <= 1 for x in a.fold_accuracies)
    assert sum(a.fold_sizes) == len(dataset)
    b = cross_validate(dataset, FAST)
    assert a.fold_accuracies == b.fold_accuracies
    assert a.mean == pytest.approx(np.mean(a.fold_accuracies))


def test_too_many_folds(dataset):
    with pytest.raises(InsufficientData):
        cross_validate(dataset, FAST.replace(folds=5))


def test_sweep_rows_and_base_equivalence(signals, dataset, tmp_path):
    rows = sweep("T", [1, 2, 4], FAST, dataset)
    assert [r[1] for r in rows] == [1, 2, 4]
    direct = cross_validate(dataset, FAST.replace(n_intervals=2))
    assert rows[1][2].fold_accuracies == direct.fold_accuracies
    write_sweep_csv(tmp_path / "s.csv", rows)
    out = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert sum(r["fold"] == "mean" for r in out) == 3
    assert sum(r["fold"] == "std" for r in out) == 3
    write_cv_csv(tmp_path / "cv.csv", rows[0][2])
    assert len(list(csv.DictReader(open(tmp_path / "cv.csv")))) == 4


def test_sweep_framing_needs_signals(signals, dataset):
    with pytest.raises(ConfigError):
        sweep("S", [1], FAST, dataset)
    rows = sweep("S", [4], FAST, signals)
    assert rows[0][1] == 4


def test_resolve_param():
    assert resolve_param("K") == "n_components" and resolve_param("n_intervals") == "n_intervals"
    with pytest.raises(ConfigError):
        resolve_param("lr")
    with pytest.raises(ConfigError):
        sweep("K", [], FAST, None)
