"""Minimal reverse-mode autodiff over dense float64 arrays.

A ``Tape`` records every primitive applied to ``Value`` nodes during a forward
pass; ``backward`` replays the records in reverse to accumulate gradients.
The desk-scale operation registry (linear / identity / zero) and the SGD
optimizer with cosine annealing live here as well, since they operate on the
same tensors.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NoTape, ShapeMismatch


class Value:
    """A node in the computation tape: an array plus its gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape


class Tape:
    """Ordered record of primitive applications, sufficient for one reverse pass."""

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn)
        self._produced = set()

    def leaf(self, data) -> Value:
        return Value(data)

    def _push(self, out, inputs, backward):
        self._records.append((out, inputs, backward))
        self._produced.add(id(out))
        return out

    # --- primitives -------------------------------------------------------

    def dense(self, x: Value, w: Value) -> Value:
        """x @ w.T for x of shape (batch, in) and w of shape (out, in)."""
        if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
            raise ShapeMismatch(f"dense: {x.data.shape} vs {w.data.shape}")
        out = Value(x.data @ w.data.T)

        def backward(g):
            return [g @ w.data, g.T @ x.data]

        return self._push(out, [x, w], backward)

    def add(self, a: Value, b: Value) -> Value:
        if a.data.shape != b.data.shape:
            raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")
        out = Value(a.data + b.data)
        return self._push(out, [a, b], lambda g: [g, g])

    def add_bias(self, x: Value, b: Value) -> Value:
        if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
            raise ShapeMismatch(f"add_bias: {x.data.shape} vs {b.data.shape}")
        out = Value(x.data + b.data)
        return self._push(out, [x, b], lambda g: [g, g.sum(axis=0)])

    def sub(self, a: Value, b: Value) -> Value:
        if a.data.shape != b.data.shape:
            raise ShapeMismatch(f"sub: {a.data.shape} vs {b.data.shape}")
        out = Value(a.data - b.data)
        return self._push(out, [a, b], lambda g: [g, -g])

    def relu(self, x: Value) -> Value:
        mask = x.data > 0.0
        out = Value(np.where(mask, x.data, 0.0))
        return self._push(out, [x], lambda g: [g * mask])

    def zeros_like(self, x: Value) -> Value:
        out = Value(np.zeros_like(x.data))
        return self._push(out, [x], lambda g: [np.zeros_like(x.data)])

    def concat(self, parts, axis=1) -> Value:
        out = Value(np.concatenate([p.data for p in parts], axis=axis))
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def backward(g):
            return list(np.split(g, splits, axis=axis))

        return self._push(out, list(parts), backward)

    def mean_of(self, parts) -> Value:
        """Elementwise mean of same-shape arrays (fixed averaging projection)."""
        shape = parts[0].data.shape
        for p in parts:
            if p.data.shape != shape:
                raise ShapeMismatch("mean_of: mismatched part shapes")
        out = Value(sum(p.data for p in parts) / len(parts))
        inv = 1.0 / len(parts)
        return self._push(out, list(parts), lambda g: [g * inv] * len(parts))

    def scale(self, x: Value, s: float) -> Value:
        out = Value(x.data * s)
        return self._push(out, [x], lambda g: [g * s])

    def half_sum_sq(self, x: Value) -> Value:
        out = Value(0.5 * np.sum(x.data * x.data))
        return self._push(out, [x], lambda g: [g * x.data])

    def softmax_cross_entropy(self, logits: Value, labels) -> Value:
        """Mean cross-entropy of softmax(logits) against integer labels."""
        labels = np.asarray(labels)
        if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
            raise ShapeMismatch(f"xent: {logits.data.shape} vs labels {labels.shape}")
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - logsumexp
        n = labels.shape[0]
        out = Value(-logp[np.arange(n), labels].mean())
        probs = np.exp(logp)

        def backward(g):
            grad = probs.copy()
            grad[np.arange(n), labels] -= 1.0
            return [g * grad / n]

        return self._push(out, [logits], backward)


def backward(tape: Tape, loss: Value, seed_gradient=None):
    """Run the reverse pass from ``loss``, filling ``grad`` on every reachable Value."""
    if id(loss) not in tape._produced:
        raise NoTape("loss was not produced by this tape")
    for out, inputs, _ in tape._records:
        out.grad = None
        for v in inputs:
            v.grad = None
    if seed_gradient is None:
        seed_gradient = np.ones_like(loss.data)
    loss.grad = np.asarray(seed_gradient, dtype=np.float64)
    for out, inputs, bwd in reversed(tape._records):
        if out.grad is None:
            continue
        for v, g in zip(inputs, bwd(out.grad)):
            if v.grad is None:
                v.grad = np.array(g, dtype=np.float64)
            else:
                v.grad += g


# --- desk-scale operation registry ---------------------------------------


@dataclass(frozen=True)
class OpDef:
    kind: str
    has_params: bool

    def param_shape(self, dim):
        return (dim, dim) if self.has_params else None

    def apply(self, tape: Tape, x: Value, w: Value | None) -> Value:
        if self.kind == "linear":
            # pre-activation style: rectifier then dense map
            return tape.dense(tape.relu(x), w)
        if self.kind == "identity":
            return x
        if self.kind == "zero":
            return tape.zeros_like(x)
        raise AssertionError(self.kind)


REGISTRY = {
    "linear": OpDef("linear", has_params=True),
    "identity": OpDef("identity", has_params=False),
    "zero": OpDef("zero", has_params=False),
}

OPERATION_KINDS = frozenset(REGISTRY)


def glorot_init(shape, rng):
    """Uniform in +/- sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape if len(shape) == 2 else (shape[0], shape[0])
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# --- optimizer ------------------------------------------------------------


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 3e-4
    step: int = 0
    buffers: dict = field(default_factory=dict)


def sgd_step(params: dict, grads: dict, state: OptimizerState, lr: float):
    """v <- mu*v + (g + wd*w); w <- w - lr*v, applied in place per parameter."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {w.shape}")
        v = state.buffers.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = state.momentum * v + (g + state.weight_decay * w)
        state.buffers[name] = v
        params[name] = w - lr * v
    state.step += 1
    return params, state


def cosine_lr(epoch, total_epochs, base_lr):
    """Cosine annealing from base_lr at epoch 0 down to 0 at the final epoch."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


# --- checkpoint container -------------------------------------------------
#
# Layout: 4-byte little-endian header length, JSON header listing
# {name, shape, offset} per block, then contiguous little-endian float64 data.


def save_checkpoint(params: dict, path):
    names = sorted(params)
    header = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        header.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    params = {}
    for block in header:
        size = int(np.prod(block["shape"])) if block["shape"] else 1
        chunk = payload[block["offset"] : block["offset"] + size]
        params[block["name"]] = np.array(chunk, dtype=np.float64).reshape(block["shape"])
    return params
