"""Plain-numpy MLPs, their explicit backward pass, and Adam.

The control networks are two-hidden-layer perceptrons with Leaky ReLU
activations (identity output layer).  Gradients are accumulated by hand:
mlp_backward consumes the cache of a forward call and a cotangent on the
output and returns parameter gradients summed over the batch.  Nothing here
differentiates through inputs on purpose; the training scheme treats the
state path as constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

LEAKY_SLOPE = 0.01


@dataclass
class MlpParams:
    """Dense layers: weights[l] has shape (fan_in, fan_out).

    Leaky ReLU (negative slope `slope`, positive branch at exactly 0) is
    applied after every layer except the last.
    """

    weights: list
    biases: list
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and parallel")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("layer shape mismatch")

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @property
    def hidden_widths(self):
        return [w.shape[1] for w in self.weights[:-1]]

    def copy(self):
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            slope=self.slope,
        )


def _leaky(z: Array, slope: float) -> Array:
    return np.where(z >= 0.0, z, slope * z)


def _leaky_grad(z: Array, slope: float) -> Array:
    return np.where(z >= 0.0, 1.0, slope)


def mlp_forward(params: MlpParams, x: Array):
    """Evaluate the network on (..., in_dim) inputs.

    Returns (output, cache); the cache holds the flattened input and every
    pre-activation, as needed by mlp_backward.
    """
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    a = x.reshape(-1, x.shape[-1])
    if a.shape[1] != params.in_dim:
        raise ValueError(f"expected input dim {params.in_dim}, got {a.shape[1]}")
    pre = []
    acts = [a]
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pre.append(z)
        a = _leaky(z, params.slope) if l < n_layers - 1 else z
        acts.append(a)
    out = a.reshape(lead + (params.out_dim,))
    return out, (acts, pre)


@dataclass
class MlpGrads:
    weights: list
    biases: list

    def add_(self, other):
        for w, ow in zip(self.weights, other.weights):
            w += ow
        for b, ob in zip(self.biases, other.biases):
            b += ob
        return self

    @classmethod
    def zeros_like(cls, params: MlpParams):
        return cls(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
        )


def mlp_backward(params: MlpParams, cache, cotangent: Array) -> MlpGrads:
    """Parameter gradients for sum(cotangent * output), summed over batch."""
    acts, pre = cache
    cot = np.asarray(cotangent, dtype=float).reshape(-1, params.out_dim)
    if cot.shape[0] != acts[0].shape[0]:
        raise ValueError("cotangent batch size does not match cache")
    n_layers = len(params.weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers
    delta = cot
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1:
            delta = delta * _leaky_grad(pre[l], params.slope)
        d_w[l] = acts[l].T @ delta
        d_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ params.weights[l].T
    return MlpGrads(weights=d_w, biases=d_b)


# ---- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates for a flat list of parameter arrays."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def create(cls, params: list, learning_rate: float, **kw):
        return cls(
            learning_rate=learning_rate,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kw,
        )


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """One Adam update; mutates the state, returns new parameter arrays.

    The update is elementwise, so any consistent partitioning of the same
    parameters into arrays produces the same numeric trajectory.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient lists do not match the state")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        out.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# ---- control networks -----------------------------------------------------


def default_width(dim: int, scale: int = 10, offset: int = 10) -> int:
    return scale * dim + offset


@dataclass
class ControlNetworks:
    """The pair (N0, N): initial value head and control field.

    N0 maps (x, y) to a scalar approximating the initial value -log h;
    N maps (x, y, t / horizon) to R^d approximating sigma^T grad v, so the
    propagation control is c = -N.
    """

    n0: MlpParams
    n: MlpParams
    dim: int
    obs_dim: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.n0.in_dim != self.dim + self.obs_dim or self.n0.out_dim != 1:
            raise ValueError("n0 must map dim + obs_dim inputs to one output")
        if self.n.in_dim != self.dim + self.obs_dim + 1 or self.n.out_dim != self.dim:
            raise ValueError("n must map dim + obs_dim + 1 inputs to dim outputs")

    def _features0(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape[:-1] + (self.obs_dim,))
        return np.concatenate([x, y], axis=-1)

    def _features(self, x, y, t: float):
        x = np.asarray(x, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape[:-1] + (self.obs_dim,))
        tcol = np.full(x.shape[:-1] + (1,), t / self.horizon)
        return np.concatenate([x, y, tcol], axis=-1)

    def initial_value(self, x, y) -> Array:
        out, _ = mlp_forward(self.n0, self._features0(x, y))
        return out[..., 0]

    def n_eval(self, x, y, t: float) -> Array:
        out, _ = mlp_forward(self.n, self._features(x, y, t))
        return out

    def control(self, x, y, t: float) -> Array:
        """Propagation policy c = -N(x, y, t)."""
        return -self.n_eval(x, y, t)

    def parameters(self) -> list:
        return list(self.n0.weights) + list(self.n0.biases) + list(self.n.weights) + list(self.n.biases)

    def with_parameters(self, flat: list) -> "ControlNetworks":
        k0 = len(self.n0.weights)
        k0b = 2 * k0
        kn = k0b + len(self.n.weights)
        n0 = MlpParams(weights=list(flat[:k0]), biases=list(flat[k0:k0b]), slope=self.n0.slope)
        n = MlpParams(weights=list(flat[k0b:kn]), biases=list(flat[kn:]), slope=self.n.slope)
        return ControlNetworks(n0=n0, n=n, dim=self.dim, obs_dim=self.obs_dim, horizon=self.horizon)

    def copy(self) -> "ControlNetworks":
        return ControlNetworks(
            n0=self.n0.copy(), n=self.n.copy(), dim=self.dim, obs_dim=self.obs_dim, horizon=self.horizon
        )


def _init_mlp(dims: list, slope: float, rng) -> MlpParams:
    # fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases, slope=slope)


def init_networks(
    dim: int,
    obs_dim: int,
    rng,
    horizon: float = 1.0,
    hidden_width: Optional[int] = None,
    n_hidden: int = 2,
    slope: float = LEAKY_SLOPE,
) -> ControlNetworks:
    """Fresh (N0, N) pair; hidden width defaults to 10 * dim + 10."""
    if hidden_width is None:
        hidden_width = default_width(dim)
    hidden = [hidden_width] * n_hidden
    n0 = _init_mlp([dim + obs_dim] + hidden + [1], slope, rng)
    n = _init_mlp([dim + obs_dim + 1] + hidden + [dim], slope, rng)
    return ControlNetworks(n0=n0, n=n, dim=dim, obs_dim=obs_dim, horizon=horizon)


# ---- checkpoint serialization ---------------------------------------------

CHECKPOINT_FORMAT = "cdtpf-checkpoint"
CHECKPOINT_VERSION = 1


def _mlp_to_json(params: MlpParams):
    return {
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def _mlp_from_json(obj, slope: float) -> MlpParams:
    return MlpParams(
        weights=[np.asarray(w, dtype=float) for w in obj["weights"]],
        biases=[np.asarray(b, dtype=float) for b in obj["biases"]],
        slope=slope,
    )


def checkpoint_text(nets: ControlNetworks, metadata: Optional[dict] = None) -> str:
    """Serialize to JSON: an architecture header plus row-major weight lists.

    Python's repr-based float encoding is shortest-round-trip, so the byte
    stream reproduces every float64 bit pattern exactly.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": nets.dim,
        "obs_dim": nets.obs_dim,
        "horizon": nets.horizon,
        "slope": nets.n.slope,
        "hidden_widths": nets.n.hidden_widths,
        "metadata": metadata or {},
        "n0": _mlp_to_json(nets.n0),
        "n": _mlp_to_json(nets.n),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(path, nets: ControlNetworks, metadata: Optional[dict] = None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_text(nets, metadata))


def load_checkpoint(path):
    """Returns (ControlNetworks, metadata dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a control-network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    slope = float(doc["slope"])
    nets = ControlNetworks(
        n0=_mlp_from_json(doc["n0"], slope),
        n=_mlp_from_json(doc["n"], slope),
        dim=int(doc["dim"]),
        obs_dim=int(doc["obs_dim"]),
        horizon=float(doc["horizon"]),
    )
    return nets, doc.get("metadata", {})
