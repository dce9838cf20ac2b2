"""Log-determinant dependence objective, twin-network training and the projection head.

Network outputs are handled row-wise (N x K) internally; the correlation
helpers take the column layout (K x N) so they read like the algebra:
``R_F = F F^T / N + eps I``.
"""

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import linalg
from .exceptions import (DataError, DegenerateClass, NonFiniteGradient, NumericalError,
                         ShapeMismatch)
from .nn import AdamState, adam_step, backward, forward, init_params, load_params, dump_params

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"FMCAMODL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class CorrelationSet:
    R_F: np.ndarray
    R_G: np.ndarray
    P_FG: np.ndarray
    R_FG: np.ndarray
    epsilon: float
    n_samples: int


def _check_pair(F, G):
    F = np.asarray(F, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if F.ndim != 2 or G.ndim != 2 or F.shape[1] != G.shape[1] or F.shape[1] < 1:
        raise ShapeMismatch(f"F and G must be (K, N) with the same N >= 1, got {F.shape} and {G.shape}")
    return F, G


def assemble(R_F, R_G, P_FG):
    """Joint block matrix ``[[R_F, P_FG], [P_FG^T, R_G]]``.

    The diagonal blocks already carry the regularizer, so the joint matrix
    gets exactly one ``epsilon`` on its diagonal.
    """
    top = np.hstack([R_F, P_FG])
    bottom = np.hstack([P_FG.T, R_G])
    return np.vstack([top, bottom])


def estimate_correlations(F, G, epsilon=1e-4):
    """Second-moment matrices of two (K, N) output batches."""
    F, G = _check_pair(F, G)
    n = F.shape[1]
    R_F = F @ F.T / n
    R_G = G @ G.T / n
    R_F = 0.5 * (R_F + R_F.T) + epsilon * np.eye(F.shape[0])
    R_G = 0.5 * (R_G + R_G.T) + epsilon * np.eye(G.shape[0])
    P_FG = F @ G.T / n
    return CorrelationSet(R_F, R_G, P_FG, assemble(R_F, R_G, P_FG), float(epsilon), n)


def fmca_cost(corr):
    """``log det R_FG - log det R_F - log det R_G``; non-positive at ``epsilon = 0``."""
    return (linalg.cholesky_logdet(corr.R_FG)
            - linalg.cholesky_logdet(corr.R_F)
            - linalg.cholesky_logdet(corr.R_G))


def _spd_solve(m, rhs):
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise linalg.NotPositiveDefinite("correlation matrix is not positive definite") from None
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def fmca_cost_and_grad(F, G, epsilon=1e-4):
    """Cost plus its gradients with respect to F and G (both K x N)."""
    F, G = _check_pair(F, G)
    corr = estimate_correlations(F, G, epsilon)
    cost = fmca_cost(corr)
    k, n = F.shape
    Z = np.vstack([F, G])
    joint = _spd_solve(corr.R_FG, Z)
    dF = (2.0 / n) * (joint[:k] - _spd_solve(corr.R_F, F))
    dG = (2.0 / n) * (joint[k:] - _spd_solve(corr.R_G, G))
    return cost, dF, dG


def fmca_cost_grad(F, G, epsilon=1e-4):
    """Gradients ``(dCost/dF, dCost/dG)``, each K x N."""
    _, dF, dG = fmca_cost_and_grad(F, G, epsilon)
    return dF, dG


@dataclass(frozen=True)
class ProjectionHead:
    """Whitening matrices, aligning rotations and the dependence spectrum."""

    W_F: np.ndarray
    W_G: np.ndarray
    Q_F: np.ndarray
    Q_G: np.ndarray
    sigma: np.ndarray

    @property
    def n_components(self):
        return self.sigma.size

    def transform_f(self, outputs):
        """Row-wise ``Q_F^T W_F f`` for outputs of shape (W, K)."""
        return outputs @ self.W_F @ self.Q_F

    def transform_g(self, outputs):
        return outputs @ self.W_G @ self.Q_G

    @classmethod
    def identity(cls, k):
        eye = np.eye(k)
        return cls(eye, eye, eye, eye, np.ones(k))


def head_from_moments(R_F, R_G, P_FG):
    """Whiten both sides and align them with one SVD of the whitened cross moment.

    Each singular pair is sign-fixed so the largest-magnitude entry of the
    ``Q_F`` column is positive.
    """
    W_F = linalg.inv_sqrt(R_F)
    W_G = linalg.inv_sqrt(R_G)
    dec = linalg.svd(W_F @ P_FG @ W_G)
    Q_F = dec.left.copy()
    Q_G = dec.right.copy()
    for j in range(Q_F.shape[1]):
        if Q_F[np.argmax(np.abs(Q_F[:, j])), j] < 0:
            Q_F[:, j] *= -1
            Q_G[:, j] *= -1
    return ProjectionHead(W_F, W_G, Q_F, Q_G, dec.values.copy())


@dataclass
class FrameDataset:
    """Frames of many utterances stored back to back.

    ``frames[offsets[u]:offsets[u + 1]]`` belong to utterance ``u``.
    """

    frames: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    utt_ids: List[str] = field(default_factory=list)
    speakers: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.labels = np.asarray(self.labels)
        n_utt = self.labels.size
        if self.offsets.size != n_utt + 1 or self.offsets[0] != 0 or self.offsets[-1] != self.frames.shape[0]:
            raise ShapeMismatch("offsets do not match frames/labels")
        if np.any(np.diff(self.offsets) < 1):
            raise DataError("every utterance needs at least one frame")
        if not self.utt_ids:
            self.utt_ids = [f"utt{i}" for i in range(n_utt)]
        if not self.speakers:
            self.speakers = ["" for _ in range(n_utt)]

    @classmethod
    def from_list(cls, frame_arrays, labels, utt_ids=None, speakers=None):
        arrays = [np.asarray(a, dtype=np.float64) for a in frame_arrays]
        if not arrays:
            raise DataError("empty dataset")
        widths = {a.shape[1] for a in arrays}
        if len(widths) != 1:
            raise ShapeMismatch(f"utterances have differing frame widths {sorted(widths)}")
        offsets = np.concatenate([[0], np.cumsum([a.shape[0] for a in arrays])])
        return cls(np.concatenate(arrays, axis=0), offsets, np.asarray(labels),
                   list(utt_ids or []), list(speakers or []))

    def __len__(self):
        return self.labels.size

    @property
    def width(self):
        return self.frames.shape[1]

    @property
    def lengths(self):
        return np.diff(self.offsets)

    def utterance(self, i):
        return self.frames[self.offsets[i]:self.offsets[i + 1]]

    def subset(self, indices):
        indices = list(indices)
        return FrameDataset.from_list([self.utterance(i) for i in indices], self.labels[indices],
                                      [self.utt_ids[i] for i in indices],
                                      [self.speakers[i] for i in indices])


class PairSampler:
    """Draws (x-frame, u-frame) pairs that share a class label.

    The x frame is uniform over all frames. The u frame is uniform over the
    frames of the same class that lie in a different utterance, i.e. the
    partner utterance is chosen with probability proportional to its length.
    """

    def __init__(self, dataset, seed=0):
        self.dataset = dataset
        self.rng = np.random.default_rng(seed)
        lengths = dataset.lengths
        utt_of_frame = np.repeat(np.arange(len(dataset)), lengths)
        self._utt_of_frame = utt_of_frame
        self._class_frames = {}
        self._utt_start_in_class = np.zeros(len(dataset), dtype=np.int64)
        self._class_size = np.zeros(len(dataset), dtype=np.int64)
        for label in np.unique(dataset.labels):
            utts = np.flatnonzero(dataset.labels == label)
            if utts.size < 2:
                raise DegenerateClass(f"class {label!r} has only {utts.size} utterance(s); need >= 2")
            frames = np.concatenate([np.arange(dataset.offsets[u], dataset.offsets[u + 1]) for u in utts])
            self._class_frames[label] = frames
            starts = np.concatenate([[0], np.cumsum(lengths[utts])[:-1]])
            self._utt_start_in_class[utts] = starts
            self._class_size[utts] = frames.size
        self._label_of_utt = dataset.labels

    def draw(self, n, rng=None):
        """Return ``(x, u)`` frame arrays of shape (n, D) plus the x-frame indices."""
        rng = self.rng if rng is None else rng
        ds = self.dataset
        xi = rng.integers(0, ds.frames.shape[0], size=n)
        utt = self._utt_of_frame[xi]
        length = ds.lengths[utt]
        r = (rng.random(n) * (self._class_size[utt] - length)).astype(np.int64)
        r = np.where(r >= self._utt_start_in_class[utt], r + length, r)
        ui = np.empty(n, dtype=np.int64)
        labels = self._label_of_utt[utt]
        for label, frames in self._class_frames.items():
            mask = labels == label
            ui[mask] = frames[r[mask]]
        return ds.frames[xi], ds.frames[ui]


@dataclass
class FmcaModel:
    params_f: object
    params_g: object
    head: ProjectionHead
    config: dict = field(default_factory=dict)
    cost_history: list = field(default_factory=list)

    @property
    def n_components(self):
        return self.params_f.output_dim

    @property
    def input_dim(self):
        return self.params_f.input_dim

    @property
    def spectrum(self):
        return self.head.sigma

    def to_bytes(self):
        buf = io.BytesIO()
        save_model(self, buf)
        return buf.getvalue()


def _outputs(params, frames, chunk=65536):
    out = np.empty((frames.shape[0], params.output_dim))
    for start in range(0, frames.shape[0], chunk):
        out[start:start + chunk] = forward(params, frames[start:start + chunk])[0]
    return out


def class_pair_moments(params_f, params_g, dataset, epsilon):
    """Exact full-set moments under the :class:`PairSampler` pairing distribution."""
    F = _outputs(params_f, dataset.frames)
    G = _outputs(params_g, dataset.frames)
    n = F.shape[0]
    k = F.shape[1]
    R_F = F.T @ F / n
    R_G = G.T @ G / n
    sum_f = np.add.reduceat(F, dataset.offsets[:-1], axis=0)
    sum_g = np.add.reduceat(G, dataset.offsets[:-1], axis=0)
    lengths = dataset.lengths.astype(np.float64)
    P = np.zeros((k, k))
    for label in np.unique(dataset.labels):
        utts = np.flatnonzero(dataset.labels == label)
        class_g = sum_g[utts].sum(axis=0)
        class_n = lengths[utts].sum()
        partner_mean = (class_g[None, :] - sum_g[utts]) / (class_n - lengths[utts])[:, None]
        P += sum_f[utts].T @ partner_mean
    P /= n
    eye = np.eye(k)
    return 0.5 * (R_F + R_F.T) + epsilon * eye, 0.5 * (R_G + R_G.T) + epsilon * eye, P


def build_head(params_f, params_g, dataset, epsilon=0.0):
    """Projection head from full-training-set statistics of both networks.

    ``epsilon`` regularizes the head's moment matrices only. The default of
    zero whitens the realized outputs exactly: training with a diagonal
    regularizer shrinks uninformative output directions to the scale of that
    regularizer, and whitening with it left in would not reach unit variance
    along them.
    """
    R_F, R_G, P = class_pair_moments(params_f, params_g, dataset, epsilon)
    return head_from_moments(R_F, R_G, P)


def build_head_from_pairs(params_f, params_g, X, U, epsilon=0.0):
    """Projection head from explicitly paired samples (rows of ``X`` and ``U``)."""
    F = _outputs(params_f, np.asarray(X, dtype=np.float64))
    G = _outputs(params_g, np.asarray(U, dtype=np.float64))
    corr = estimate_correlations(F.T, G.T, epsilon)
    return head_from_moments(corr.R_F, corr.R_G, corr.P_FG)


class TrainingDiverged(NonFiniteGradient):
    """Raised with the last finite parameters attached as ``checkpoint``."""

    def __init__(self, message, checkpoint=None, iteration=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.iteration = iteration


def optimize(params_f, params_g, draw: Callable, n_iter, lr=1e-3, epsilon=1e-4,
             batch_size=512, rng=None, log_every=50, callback=None):
    """Minimize the log-det cost over minibatches from ``draw(rng, n) -> (x, u)``.

    Parameters are updated in place. Returns the cost trajectory as a list of
    ``(iteration, cost)``: the initial cost, every ``log_every`` iterations,
    and the final iteration.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    state_f = AdamState.for_params(params_f, lr)
    state_g = AdamState.for_params(params_g, lr)
    history = []
    checkpoint = (params_f.copy(), params_g.copy())
    for it in range(n_iter + 1):
        x, u = draw(rng, batch_size)
        out_f, tape_f = forward(params_f, x)
        out_g, tape_g = forward(params_g, u)
        try:
            cost, dF, dG = fmca_cost_and_grad(out_f.T, out_g.T, epsilon)
        except NumericalError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", checkpoint, it) from None
        if not np.isfinite(cost):
            raise TrainingDiverged(f"iteration {it}: non-finite cost", checkpoint, it)
        if it == 0 or it % log_every == 0 or it == n_iter:
            history.append((it, cost))
            checkpoint = (params_f.copy(), params_g.copy())
            if callback is not None:
                callback(it, cost)
            logger.debug("iter %d cost %.6f", it, cost)
        if it == n_iter:
            break
        grads_f, _ = backward(params_f, tape_f, dF.T)
        grads_g, _ = backward(params_g, tape_g, dG.T)
        try:
            adam_step(params_f, grads_f, state_f)
            adam_step(params_g, grads_g, state_g)
        except NonFiniteGradient as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", checkpoint, it) from None
    return history


def _init_pair(input_dim_f, input_dim_g, n_components, hidden_units, n_layers, rng,
               activation, head):
    pf = init_params(input_dim_f, n_components, hidden_units, n_layers, rng, activation, head)
    pg = init_params(input_dim_g, n_components, hidden_units, n_layers, rng, activation, head)
    return pf, pg


def train_fmca(dataset, n_components=8, hidden_units=200, n_layers=3, lr=1e-3, epsilon=1e-4,
               n_iter=7000, batch_size=512, seed=0, activation="tanh", head="linear",
               head_epsilon=0.0, log_every=50, config=None, callback=None):
    """Train both projector networks on same-class frame pairs and fit the head.

    ``config`` is stored verbatim in the returned model (merged with the
    training arguments).
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    rng = np.random.default_rng(seed)
    sampler = PairSampler(dataset, seed)
    params_f, params_g = _init_pair(dataset.width, dataset.width, n_components, hidden_units,
                                    n_layers, rng, activation, head)
    history = optimize(params_f, params_g, lambda r, n: sampler.draw(n, r), n_iter, lr, epsilon,
                       batch_size, rng, log_every, callback)
    proj = build_head(params_f, params_g, dataset, head_epsilon)
    snapshot = dict(config or {})
    snapshot.update(n_components=n_components, hidden_units=hidden_units, n_layers=n_layers,
                    lr=lr, epsilon=epsilon, n_iter=n_iter, batch_size=batch_size, seed=seed,
                    activation=activation, head=head, head_epsilon=head_epsilon)
    return FmcaModel(params_f, params_g, proj, snapshot, history)


def train_fmca_pairs(X, U, n_components=8, hidden_units=200, n_layers=3, lr=1e-3, epsilon=1e-4,
                     n_iter=7000, batch_size=512, seed=0, activation="tanh", head="linear",
                     head_epsilon=0.0, log_every=50, config=None):
    """Train on explicit joint samples: row ``i`` of ``X`` is paired with row ``i`` of ``U``."""
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if U.ndim == 1:
        U = U[:, None]
    if X.shape[0] != U.shape[0] or X.shape[0] < 1:
        raise ShapeMismatch(f"X and U must have the same number of rows, got {X.shape[0]} and {U.shape[0]}")
    rng = np.random.default_rng(seed)
    params_f, params_g = _init_pair(X.shape[1], U.shape[1], n_components, hidden_units, n_layers,
                                    rng, activation, head)

    def draw(r, n):
        idx = r.integers(0, X.shape[0], size=n)
        return X[idx], U[idx]

    history = optimize(params_f, params_g, draw, n_iter, lr, epsilon, batch_size, rng, log_every)
    proj = build_head_from_pairs(params_f, params_g, X, U, head_epsilon)
    snapshot = dict(config or {})
    snapshot.update(n_components=n_components, hidden_units=hidden_units, n_layers=n_layers,
                    lr=lr, epsilon=epsilon, n_iter=n_iter, batch_size=batch_size, seed=seed,
                    activation=activation, head=head, head_epsilon=head_epsilon)
    return FmcaModel(params_f, params_g, proj, snapshot, history)


def project(model, frames):
    """Eigenfunction trace (W x K) of one utterance's frames, in frame order."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.input_dim:
        raise ShapeMismatch(f"frames have width {frames.shape[-1] if frames.ndim else 0}, "
                            f"model expects {model.input_dim}")
    return model.head.transform_f(_outputs(model.params_f, frames))


def save_model(model, fh):
    """Binary container: magic, version, JSON header, then the two parameter blobs and head arrays."""
    blob_f = io.BytesIO()
    dump_params(model.params_f, blob_f)
    blob_g = io.BytesIO()
    dump_params(model.params_g, blob_g)
    header = {
        "config": model.config,
        "cost_history": [[int(i), float(c)] for i, c in model.cost_history],
        "k": int(model.head.n_components),
        "sizes": [len(blob_f.getvalue()), len(blob_g.getvalue())],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(MODEL_MAGIC)
    fh.write(struct.pack("<HI", MODEL_VERSION, len(raw)))
    fh.write(raw)
    fh.write(blob_f.getvalue())
    fh.write(blob_g.getvalue())
    h = model.head
    for a in (h.W_F, h.W_G, h.Q_F, h.Q_G, h.sigma):
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(fh):
    if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise DataError("not an FMCA model file")
    version, hlen = struct.unpack("<HI", fh.read(6))
    if version != MODEL_VERSION:
        raise DataError(f"unsupported model version {version}")
    header = json.loads(fh.read(hlen).decode("utf-8"))
    size_f, size_g = header["sizes"]
    params_f = load_params(io.BytesIO(fh.read(size_f)))
    params_g = load_params(io.BytesIO(fh.read(size_g)))
    k = header["k"]
    arrays = []
    for shape in [(k, k)] * 4 + [(k,)]:
        n = int(np.prod(shape))
        buf = fh.read(8 * n)
        if len(buf) != 8 * n:
            raise DataError("truncated model file")
        arrays.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
    return FmcaModel(params_f, params_g, ProjectionHead(*arrays), header["config"],
                     [tuple(x) for x in header["cost_history"]])


def model_from_bytes(data):
    return load_model(io.BytesIO(data))
