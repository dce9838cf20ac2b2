"""Fully connected networks with layer normalization, written out by hand.

Hidden layers compute ``act(layernorm(x @ W.T + b))``; the output layer is
affine followed by either a softmax or the identity. Gradients are exact
reverse mode over this fixed architecture, which is all the projector
networks and the classifier need.
"""

import io
import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import DataError, NonFiniteGradient, ShapeMismatch

LN_EPS = 1e-5
MAGIC = b"FMCA"
FORMAT_VERSION = 1

ACTIVATIONS = ("tanh", "relu")
HEADS = ("softmax", "linear")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    gain: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None

    @property
    def normalized(self):
        return self.gain is not None

    def arrays(self):
        out = [self.weight, self.bias]
        if self.normalized:
            out += [self.gain, self.shift]
        return out


@dataclass
class NetworkParams:
    """Parameters of one network; ``layers[-1]`` is the output layer."""

    layers: List[Layer]
    activation: str = "tanh"
    head: str = "softmax"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ShapeMismatch(f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}")

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def n_hidden(self):
        return len(self.layers) - 1

    @property
    def dims(self):
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    def arrays(self):
        """Flat list of parameter arrays in serialization order (views, not copies)."""
        return [a for layer in self.layers for a in layer.arrays()]

    def copy(self):
        return NetworkParams(
            [Layer(*(None if a is None else a.copy() for a in (l.weight, l.bias, l.gain, l.shift)))
             for l in self.layers],
            self.activation, self.head)

    def n_parameters(self):
        return sum(a.size for a in self.arrays())


def init_params(input_dim, output_dim, hidden_units, n_hidden, rng,
                activation="tanh", head="softmax"):
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    dims = [input_dim] + [hidden_units] * n_hidden + [output_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        hidden = i < n_hidden
        layers.append(Layer(w, np.zeros(fan_out),
                            np.ones(fan_out) if hidden else None,
                            np.zeros(fan_out) if hidden else None))
    return NetworkParams(layers, activation, head)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardTape:
    inputs: list = field(default_factory=list)   # input to each layer
    xhat: list = field(default_factory=list)     # normalized pre-activations (hidden only)
    inv_std: list = field(default_factory=list)
    act: list = field(default_factory=list)      # hidden activations
    logits: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None


def forward(params, x, head=None):
    """Run a batch of shape (N, D) through the network.

    Returns the (N, K) output and the tape needed by :func:`backward`.
    ``head`` overrides ``params.head`` when given.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim or x.shape[0] < 1:
        raise ShapeMismatch(f"expected input of shape (N>=1, {params.input_dim}), got {x.shape}")
    head = head or params.head
    tape = ForwardTape()
    h = x
    for layer in params.layers[:-1]:
        tape.inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        mu = z.mean(axis=1, keepdims=True)
        zc = z - mu
        inv_std = 1.0 / np.sqrt((zc * zc).mean(axis=1, keepdims=True) + LN_EPS)
        xhat = zc * inv_std
        y = xhat * layer.gain + layer.shift
        h = np.tanh(y) if params.activation == "tanh" else np.maximum(y, 0.0)
        tape.xhat.append(xhat)
        tape.inv_std.append(inv_std)
        tape.act.append(h)
    out_layer = params.layers[-1]
    tape.inputs.append(h)
    logits = h @ out_layer.weight.T + out_layer.bias
    out = softmax(logits) if head == "softmax" else logits
    tape.logits = logits
    tape.output = out
    return out, tape


def backward(params, tape, upstream, wrt="output"):
    """Reverse-mode gradients for a scalar loss with ``dLoss/d(output) = upstream``.

    With ``wrt="logits"`` the upstream gradient is taken with respect to the
    pre-head logits instead (used for softmax + cross-entropy).

    Returns
    -------
    grads : list of ndarray
        Same order as ``params.arrays()``.
    dx : ndarray
        Gradient with respect to the network input.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != tape.output.shape:
        raise ShapeMismatch(f"upstream gradient shape {upstream.shape} != output shape {tape.output.shape}")
    if wrt == "output" and params.head == "softmax":
        s = tape.output
        g = s * (upstream - np.sum(upstream * s, axis=1, keepdims=True))
    else:
        g = upstream
    per_layer = []
    out_layer = params.layers[-1]
    per_layer.append([g.T @ tape.inputs[-1], g.sum(axis=0)])
    dh = g @ out_layer.weight
    for i in range(len(params.layers) - 2, -1, -1):
        layer = params.layers[i]
        h = tape.act[i]
        if params.activation == "tanh":
            dy = dh * (1.0 - h * h)
        else:
            dy = dh * (h > 0)
        xhat = tape.xhat[i]
        d_gain = np.sum(dy * xhat, axis=0)
        d_shift = dy.sum(axis=0)
        dxhat = dy * layer.gain
        dz = tape.inv_std[i] * (dxhat - dxhat.mean(axis=1, keepdims=True)
                                - xhat * np.mean(dxhat * xhat, axis=1, keepdims=True))
        per_layer.append([dz.T @ tape.inputs[i], dz.sum(axis=0), d_gain, d_shift])
        dh = dz @ layer.weight
    grads = [a for grads_i in reversed(per_layer) for a in grads_i]
    return grads, dh


@dataclass
class AdamState:
    lr: float
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr, **kw):
        arrays = params.arrays()
        return cls(lr, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(params, grads, state):
    """In-place Adam update of ``params`` with bias-corrected moments.

    Raises :class:`NonFiniteGradient` before touching anything if a gradient
    entry is NaN or infinite.
    """
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ShapeMismatch("gradient list does not match parameter layout")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _header(params):
    return {
        "dims": params.dims,
        "activation": params.activation,
        "head": params.head,
        "normalized": [layer.normalized for layer in params.layers],
    }


def dump_params(params, fh):
    """Write ``FMCA`` magic, format version, a JSON header and little-endian float64 data."""
    header = json.dumps(_header(params), sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
    fh.write(header)
    for a in params.arrays():
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, hlen = struct.unpack("<HI", fh.read(6))
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported parameter format version {version}")
    header = json.loads(fh.read(hlen).decode("utf-8"))
    dims = header["dims"]
    layers = []

    def take(shape):
        n = int(np.prod(shape))
        buf = fh.read(8 * n)
        if len(buf) != 8 * n:
            raise DataError("truncated parameter blob")
        return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)

    for fan_in, fan_out, normed in zip(dims[:-1], dims[1:], header["normalized"]):
        w = take((fan_out, fan_in))
        b = take((fan_out,))
        gain = take((fan_out,)) if normed else None
        shift = take((fan_out,)) if normed else None
        layers.append(Layer(w, b, gain, shift))
    return NetworkParams(layers, header["activation"], header["head"])


def params_to_bytes(params):
    buf = io.BytesIO()
    dump_params(params, buf)
    return buf.getvalue()


def params_from_bytes(data):
    return load_params(io.BytesIO(data))
