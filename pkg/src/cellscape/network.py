"""Desk-scale networks built from a genotype: stem, L stacked cells, head.

Cell k receives the outputs of cells k-1 and k-2 (the stem output standing in
for missing predecessors) as its two input nodes.  Each intermediate node
sums its two transformed inputs; the cell output averages the concat nodes,
which keeps the feature dimension constant across cells and leaves identity
cells parameter-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import REGISTRY, Tape, Value, glorot_init
from .errors import UnknownOperationKind, UnsupportedInputCount
from .genotype import CellGenotype, validate_genotype


@dataclass(frozen=True)
class NetworkConfig:
    layers: int = 6
    dim: int = 16
    num_classes: int = 4
    input_dim: int = 16

    def __post_init__(self):
        if self.layers < 1 or self.dim < 2:
            raise ValueError("need layers >= 1 and dim >= 2")


class CellNetwork:
    """Parameter store plus the forward wiring defined by a genotype."""

    def __init__(self, genotype: CellGenotype, cfg: NetworkConfig, init_rng=None):
        if genotype.num_inputs != 2:
            raise UnsupportedInputCount(
                f"network building supports exactly 2 input nodes, got {genotype.num_inputs}"
            )
        self.genotype = genotype
        self.dag = validate_genotype(genotype)
        self.cfg = cfg
        self.params = {}
        if init_rng is not None:
            self.init_params(init_rng)

    def _param_shapes(self):
        d = self.cfg.dim
        shapes = {
            "stem.w": (d, self.cfg.input_dim),
            "stem.b": (d,),
            "head.w": (self.cfg.num_classes, d),
            "head.b": (self.cfg.num_classes,),
        }
        for layer in range(self.cfg.layers):
            for i, node in enumerate(self.genotype.nodes):
                for slot, op in enumerate(node.ops):
                    opdef = REGISTRY.get(op.kind)
                    if opdef is None:
                        raise UnknownOperationKind(op.kind)
                    shape = opdef.param_shape(d)
                    if shape is not None:
                        shapes[f"cell{layer}.node{i}.op{slot}.w"] = shape
        return shapes

    def init_params(self, rng):
        """Seeded symmetric-uniform initialization for every parameter block."""
        self.params = {}
        shapes = self._param_shapes()
        for name in sorted(shapes):
            shape = shapes[name]
            if len(shape) == 1:
                self.params[name] = np.zeros(shape)
            else:
                self.params[name] = glorot_init(shape, rng)
        return self.params

    def parameter_count(self):
        return sum(int(np.prod(s)) for s in self._param_shapes().values())

    def cell_parameter_count(self):
        return sum(
            int(np.prod(s))
            for name, s in self._param_shapes().items()
            if name.startswith("cell")
        )

    def forward(self, x, params=None):
        """Forward pass; returns (logits Value, tape, name -> leaf Value map)."""
        params = self.params if params is None else params
        tape = Tape()
        leaves = {name: tape.leaf(arr) for name, arr in params.items()}
        x_leaf = tape.leaf(np.asarray(x, dtype=np.float64))
        s = tape.add_bias(tape.dense(x_leaf, leaves["stem.w"]), leaves["stem.b"])
        prev2 = prev1 = s
        m = self.genotype.num_inputs
        for layer in range(self.cfg.layers):
            node_vals = [prev2, prev1]
            for i, node in enumerate(self.genotype.nodes):
                parts = []
                for slot, op in enumerate(node.ops):
                    src = node_vals[op.source]
                    w = leaves.get(f"cell{layer}.node{i}.op{slot}.w")
                    parts.append(REGISTRY[op.kind].apply(tape, src, w))
                acc = parts[0]
                for p in parts[1:]:
                    acc = tape.add(acc, p)
                node_vals.append(acc)
            out = tape.mean_of([node_vals[c] for c in self.genotype.concat])
            prev2, prev1 = prev1, out
        logits = tape.add_bias(tape.dense(prev1, leaves["head.w"]), leaves["head.b"])
        return logits, tape, leaves

    def loss_and_grads(self, x, y, params=None):
        logits, tape, leaves = self.forward(x, params)
        loss = tape.softmax_cross_entropy(logits, y)
        ad.backward(tape, loss)
        grads = {
            name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
            for name, leaf in leaves.items()
        }
        return float(loss.data), grads

    def evaluate(self, x, y, params=None):
        """(mean loss, accuracy) on a split, in a single forward pass."""
        logits, tape, _ = self.forward(x, params)
        loss = tape.softmax_cross_entropy(logits, y)
        acc = float(np.mean(np.argmax(logits.data, axis=1) == np.asarray(y)))
        return float(loss.data), acc


def build_network(genotype, cfg: NetworkConfig, init_rng=None) -> CellNetwork:
    return CellNetwork(genotype, cfg, init_rng=init_rng)


def parameter_count(genotype, cfg: NetworkConfig) -> int:
    """Total scalar parameter count of the network built from the genotype."""
    return CellNetwork(genotype, cfg).parameter_count()
