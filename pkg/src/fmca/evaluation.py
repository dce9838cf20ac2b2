"""Cross-validation and hyperparameter sweeps over the full pipeline."""

import csv
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .config import SWEEP_ALIASES, PipelineConfig
from .engine import FrameDataset
from .estimators import make_pipeline
from .exceptions import ConfigError, DataError, InsufficientData
from .features import make_fold_plan
from .signal import preprocess

logger = logging.getLogger(__name__)

SIGNAL_KEYS = ("frame_len", "stride", "domain", "trim_threshold", "trim_window")


@dataclass
class SkipRecord:
    utterance_id: str
    reason: str
    detail: str


def frames_from_signals(signals, config):
    """Preprocess every signal; utterances that fail are skipped and reported, not fatal."""
    arrays, labels, ids, speakers, skipped = [], [], [], [], []
    for s in signals:
        try:
            batch = preprocess(s, config.frame_len, config.stride, config.domain,
                               config.trim_threshold, config.trim_window)
        except DataError as exc:
            logger.warning("skipping %s: %s", s.utterance_id, exc)
            skipped.append(SkipRecord(s.utterance_id, type(exc).__name__, str(exc)))
            continue
        arrays.append(batch.frames)
        labels.append(s.label)
        ids.append(s.utterance_id)
        speakers.append(s.speaker_id or "")
    if not arrays:
        raise InsufficientData("no utterance survived preprocessing")
    return FrameDataset.from_list(arrays, np.asarray(labels), ids, speakers), skipped


@dataclass
class CVResult:
    fold_accuracies: List[float]
    fold_sizes: List[int] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self):
        return float(np.std(self.fold_accuracies))


def cross_validate(dataset, config, folds=None):
    """Stratified k-fold evaluation: each fold trains its own FMCA, head and classifier.

    Fold ``i`` uses seed ``config.seed + i``; aggregation is in fold order.
    """
    folds = folds or config.folds
    plan = make_fold_plan(dataset.labels, dataset.speakers, folds, config.seed)
    accuracies, sizes, skipped = [], [], []
    for i, (train_idx, test_idx) in enumerate(plan.splits()):
        fold_cfg = config.replace(seed=config.seed + i)
        # utterances too short for the interval split cannot be featurized
        keep_train = [j for j in train_idx if dataset.lengths[j] >= config.n_intervals]
        keep_test = [j for j in test_idx if dataset.lengths[j] >= config.n_intervals]
        skipped += [dataset.utt_ids[j] for j in sorted(set(train_idx) | set(test_idx))
                    if dataset.lengths[j] < config.n_intervals]
        train = dataset.subset(keep_train)
        pipe = make_pipeline(fold_cfg)
        pipe.fit(train, train.labels)
        test = [dataset.utterance(j) for j in keep_test]
        acc = float(np.mean(pipe.predict(test) == dataset.labels[keep_test]))
        logger.info("fold %d/%d accuracy %.4f", i + 1, folds, acc)
        accuracies.append(acc)
        sizes.append(len(keep_test))
    return CVResult(accuracies, sizes, skipped)


def resolve_param(name):
    key = SWEEP_ALIASES.get(name, name)
    if key not in SWEEP_ALIASES.values():
        raise ConfigError(f"cannot sweep {name!r}; choose from L, S, K, T")
    return key


def sweep(param, values, base_config, source):
    """Cross-validate once per value of ``param`` with everything else from ``base_config``.

    ``source`` is either a list of :class:`AudioSignal` (required when the
    parameter changes framing) or a prepared :class:`FrameDataset`.
    Returns rows ``(param, value, CVResult)``.
    """
    key = resolve_param(param)
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    cached = None
    for value in values:
        cfg = base_config.replace(**{key: type(getattr(base_config, key))(value)})
        if isinstance(source, FrameDataset):
            if key in SIGNAL_KEYS:
                raise ConfigError(f"sweeping {key} needs raw signals, not a frame dataset")
            dataset = source
        elif key in SIGNAL_KEYS or cached is None:
            dataset, _ = frames_from_signals(source, cfg)
            if key not in SIGNAL_KEYS:
                cached = dataset
        else:
            dataset = cached
        rows.append((param, getattr(cfg, key), cross_validate(dataset, cfg)))
    return rows


def write_sweep_csv(path, rows):
    """``param,value,fold,accuracy`` per fold plus ``mean`` and ``std`` aggregate rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", "fold", "accuracy"])
        for param, value, result in rows:
            for i, acc in enumerate(result.fold_accuracies):
                writer.writerow([param, value, i, repr(acc)])
            writer.writerow([param, value, "mean", repr(result.mean)])
            writer.writerow([param, value, "std", repr(result.std)])


def write_cv_csv(path, result):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "n_test", "accuracy"])
        for i, (acc, n) in enumerate(zip(result.fold_accuracies, result.fold_sizes)):
            writer.writerow([i, n, repr(acc)])
