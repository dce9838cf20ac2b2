"""Input checks shared by the estimators."""

import numpy as np

from .engine import FrameDataset
from .exceptions import ShapeMismatch


def check_frame_list(X, width=None, allow_single=True):
    """Normalize frame input to a list of float64 (W, D) arrays.

    Accepts a :class:`FrameDataset`, a sequence of 2-D arrays, or (when
    ``allow_single``) one 2-D array for a single utterance. Returns the list
    and whether a single array was passed.
    """
    if isinstance(X, FrameDataset):
        arrays = [X.utterance(i) for i in range(len(X))]
        single = False
    elif allow_single and isinstance(X, np.ndarray) and X.ndim == 2:
        arrays = [np.asarray(X, dtype=np.float64)]
        single = True
    else:
        arrays = [np.asarray(a, dtype=np.float64) for a in X]
        single = False
    if not arrays:
        raise ValueError("no utterances given")
    for a in arrays:
        if a.ndim != 2 or a.shape[0] < 1:
            raise ShapeMismatch(f"each utterance must be a non-empty (W, D) array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("frames contain NaN or infinite values")
    widths = {a.shape[1] for a in arrays}
    if len(widths) != 1:
        raise ShapeMismatch(f"utterances have differing frame widths {sorted(widths)}")
    if width is not None and arrays[0].shape[1] != width:
        raise ShapeMismatch(f"frames have width {arrays[0].shape[1]}, expected {width}")
    return arrays, single


def check_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or y.size != n:
        raise ShapeMismatch(f"expected {n} labels, got shape {y.shape}")
    return y
