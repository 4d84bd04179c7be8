"""Cell genotypes, their validation, and the derived analysis DAG.

A genotype describes one cell: an ordered list of intermediate nodes, each
wired to exactly M preceding nodes through an operation.  Node indices share a
single space: 0..M-1 are the cell's input nodes, M+i is intermediate node i,
and the output node is implicit (it aggregates the ``concat`` nodes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .autodiff import OPERATION_KINDS
from .errors import (
    EmptyConcat,
    ForwardReference,
    InvalidArity,
    ParseError,
    UnknownOperationKind,
)

FIXTURE_NAMES = (
    "nasnet",
    "amoebanet",
    "enas",
    "darts",
    "snas",
    "darts_conn1",
    "darts_conn2",
    "darts_conn3",
    "darts_conn4",
)


@dataclass(frozen=True)
class OpSpec:
    """One (operation kind, source node) pair of an intermediate node."""

    kind: str
    source: int


@dataclass(frozen=True)
class NodeSpec:
    """An intermediate node: its M incoming (op, source) pairs, in slot order."""

    ops: tuple[OpSpec, ...]


@dataclass(frozen=True)
class CellGenotype:
    name: str
    num_inputs: int
    nodes: tuple[NodeSpec, ...]
    concat: tuple[int, ...] = ()  # global node indices; empty means "all"

    def __post_init__(self):
        if not self.concat:
            all_interm = tuple(range(self.num_inputs, self.num_inputs + len(self.nodes)))
            object.__setattr__(self, "concat", all_interm)

    @property
    def num_intermediate(self):
        return len(self.nodes)

    @property
    def total_nodes(self):
        """N = input nodes + intermediate nodes + the single output node."""
        return self.num_inputs + len(self.nodes) + 1


@dataclass(frozen=True)
class CellDag:
    """Validated edge view of a genotype.

    Edges run source -> intermediate; every concat node additionally has an
    implicit edge to the output node.  Topological order is declaration order.
    """

    num_inputs: int
    num_intermediate: int
    edges: tuple[tuple[int, int], ...]
    concat: tuple[int, ...]
    genotype: CellGenotype = field(repr=False)

    def sources_of(self, node):
        """Source indices of an intermediate node, in slot order."""
        return tuple(src for src, dst in self.edges if dst == node)


def validate_genotype(g: CellGenotype) -> CellDag:
    """Check all genotype invariants and return the analysis DAG.

    Raises InvalidArity, ForwardReference, EmptyConcat or
    UnknownOperationKind on the first violation found.
    """
    m = g.num_inputs
    if m < 1:
        raise InvalidArity(f"{g.name}: num_inputs must be >= 1, got {m}")
    edges = []
    for i, node in enumerate(g.nodes):
        node_idx = m + i
        if len(node.ops) != m:
            raise InvalidArity(
                f"{g.name}: node {node_idx} has {len(node.ops)} (op, source) pairs, expected {m}"
            )
        for op in node.ops:
            if op.kind not in OPERATION_KINDS:
                raise UnknownOperationKind(f"{g.name}: unknown operation kind {op.kind!r}")
            if not 0 <= op.source < node_idx:
                raise ForwardReference(
                    f"{g.name}: node {node_idx} sources node {op.source}, "
                    f"which does not precede it"
                )
            edges.append((op.source, node_idx))
    if not g.concat:
        raise EmptyConcat(f"{g.name}: concat is empty")
    for c in g.concat:
        if not m <= c < m + len(g.nodes):
            raise EmptyConcat(f"{g.name}: concat references invalid intermediate node {c}")
    return CellDag(
        num_inputs=m,
        num_intermediate=len(g.nodes),
        edges=tuple(edges),
        concat=tuple(g.concat),
        genotype=g,
    )


def genotype_to_dict(g: CellGenotype) -> dict:
    return {
        "name": g.name,
        "num_inputs": g.num_inputs,
        "nodes": [
            {"ops": [{"kind": op.kind, "source": op.source} for op in node.ops]}
            for node in g.nodes
        ],
        "concat": list(g.concat),
    }


def genotype_from_dict(d: dict) -> CellGenotype:
    try:
        nodes = tuple(
            NodeSpec(tuple(OpSpec(str(op["kind"]), int(op["source"])) for op in node["ops"]))
            for node in d["nodes"]
        )
        return CellGenotype(
            name=str(d["name"]),
            num_inputs=int(d["num_inputs"]),
            nodes=nodes,
            concat=tuple(int(c) for c in d.get("concat", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed genotype document: {exc}") from exc


def load_genotype(path) -> CellGenotype:
    """Load a genotype JSON file; raises ParseError on bad JSON or schema."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return genotype_from_dict(doc)


def save_genotype(g: CellGenotype, path):
    with open(path, "w") as fh:
        json.dump(genotype_to_dict(g), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fixture(name: str) -> CellGenotype:
    """Load one of the bundled cell fixtures by short name (e.g. ``darts``)."""
    if name not in FIXTURE_NAMES:
        raise ParseError(f"unknown fixture {name!r}; available: {', '.join(FIXTURE_NAMES)}")
    text = resources.files("cellscape.fixtures").joinpath(f"{name}.json").read_text()
    return genotype_from_dict(json.loads(text))


def chain_cell(n, name="chain", kind="linear", num_inputs=2) -> CellGenotype:
    """Cell where node i sources node i-1 (and input 0), maximizing depth."""
    nodes = []
    for i in range(n):
        prev = num_inputs + i - 1 if i > 0 else 0
        nodes.append(NodeSpec((OpSpec(kind, prev), OpSpec(kind, 0 if i > 0 else 1))))
    return CellGenotype(name=name, num_inputs=num_inputs, nodes=tuple(nodes))


def all_input_cell(n, name="all-input", kind="linear", num_inputs=2) -> CellGenotype:
    """Cell where every node sources only input nodes: widest, shallowest."""
    nodes = tuple(
        NodeSpec(tuple(OpSpec(kind, s % num_inputs) for s in range(num_inputs)))
        for _ in range(n)
    )
    return CellGenotype(name=name, num_inputs=num_inputs, nodes=nodes)
