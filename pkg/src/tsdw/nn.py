"""Minimal dense-network substrate for the confidence and gating heads.

Everything runs in float64: the fusion heads are tiny, so precision wins
over speed. Forward passes accept a single vector or a batch of row
vectors; the returned tape carries exactly what backward needs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError, FormatError, TapeError

ACTIVATIONS = ("relu", "sigmoid", "identity")

CKPT_MAGIC = b"TSDWCKPT"


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError("bias length does not match weight rows")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weights.shape[0] != nxt.weights.shape[1]:
                raise DimensionError("consecutive layer dims do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat view [W0, b0, W1, b1, ...]; arrays are the live storage."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


def dense_net(dims, rng: np.random.Generator, hidden_activation: str = "relu",
              output_activation: str = "identity") -> DenseNet:
    """Build a net with symmetric-uniform weights and zero biases."""
    if len(dims) < 2:
        raise ConfigError("dense_net needs at least input and output dims")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = output_activation if k == len(dims) - 2 else hidden_activation
        layers.append(Layer(weights, np.zeros(fan_out), act))
    return DenseNet(layers)


def _apply(act: str, z: np.ndarray) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return expit(z)
    return z


def _grad(act: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(z)


@dataclass
class Tape:
    inputs: list[np.ndarray] = field(default_factory=list)   # input to each layer
    preacts: list[np.ndarray] = field(default_factory=list)  # z of each layer
    outputs: list[np.ndarray] = field(default_factory=list)  # act(z) of each layer
    single: bool = False


def forward(net: DenseNet, x) -> tuple[np.ndarray, Tape]:
    """Run the net; x is (d,) or (n, d). Returns (output, tape)."""
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise DimensionError(f"input shape {np.shape(x)} incompatible with input_dim {net.input_dim}")
    tape = Tape(single=single)
    for layer in net.layers:
        tape.inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        a = _apply(layer.activation, z)
        tape.preacts.append(z)
        tape.outputs.append(a)
    out = a[0] if single else a
    return out, tape


def backward(net: DenseNet, tape: Tape, grad_out) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse pass. Returns ([(dW, db) per layer], grad wrt input)."""
    if len(tape.preacts) != len(net.layers):
        raise TapeError("tape layer count does not match network")
    g = np.asarray(grad_out, dtype=np.float64)
    if tape.single:
        if g.shape != (net.output_dim,):
            raise TapeError(f"grad_out shape {g.shape} does not match output dim {net.output_dim}")
        g = g[None, :]
    elif g.shape != tape.outputs[-1].shape:
        raise TapeError(f"grad_out shape {g.shape} does not match forward output {tape.outputs[-1].shape}")

    param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        z, out, a_in = tape.preacts[k], tape.outputs[k], tape.inputs[k]
        if z.shape[1] != layer.weights.shape[0] or a_in.shape[1] != layer.weights.shape[1]:
            raise TapeError(f"tape shapes stale at layer {k}")
        dz = g * _grad(layer.activation, z, out)
        param_grads[k] = (dz.T @ a_in, dz.sum(axis=0))
        g = dz @ layer.weights
    grad_in = g[0] if tape.single else g
    return param_grads, grad_in


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list[np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params],
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0,
              decay_mask: list[bool] | None = None) -> None:
    """One Adam update in place, with decoupled weight decay (lr*wd*param).

    decay_mask selects which parameter blocks get weight decay (all by default).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if weight_decay and (decay_mask is None or decay_mask[i]):
            p -= lr * weight_decay * p


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError("milestones must be strictly increasing")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must be in (0, 1]")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """base_lr decayed once per milestone already reached."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    n = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.base_lr * schedule.gamma**n


def save_checkpoint(path, blocks: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float64 parameter blocks plus a JSON manifest.

    Layout: magic, u32 manifest length, manifest JSON (block names/shapes in
    order, user metadata under "meta"), then the raw float64 LE data.
    Output bytes are deterministic for identical inputs.
    """
    entries = [{"name": name, "shape": list(arr.shape)} for name, arr in blocks.items()]
    manifest = json.dumps({"blocks": entries, "meta": meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for arr in blocks.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (mlen,) = struct.unpack_from("<I", data, len(CKPT_MAGIC))
    start = len(CKPT_MAGIC) + 4
    manifest = json.loads(data[start : start + mlen].decode("utf-8"))
    offset = start + mlen
    blocks: dict[str, np.ndarray] = {}
    for entry in manifest["blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated block {entry['name']!r}")
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f8").copy().reshape(shape)
        blocks[entry["name"]] = arr
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes after parameter blob")
    return blocks, manifest["meta"]
