"""Random connection/operation variants of a genotype, and the size of the
connection space.

Connection variants keep every node's operations and resample each slot's
source uniformly among the slot's preceding nodes.  Operation variants keep
the edges and resample each kind uniformly from a candidate set.  The closed
form for the number of possible connections, (N-2)!/(M-1)!, is computed
exactly; the slot-assignment enumeration is kept alongside it as an
independent count since the two do not coincide in general.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .errors import InvalidSearchSpace, TooLarge, UnknownOperationKind
from .autodiff import OPERATION_KINDS
from .genotype import CellGenotype, NodeSpec, OpSpec, validate_genotype
from .metrics import cell_depth, cell_width

ENUMERATION_CAP = 10**6
MAX_ENUMERABLE_NODES = 5


@dataclass(frozen=True)
class SampleSpec:
    mode: str  # "connection" | "operation"
    count: int
    seed: int
    operation_set: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in ("connection", "operation"):
            raise ValueError(f"mode must be connection|operation, got {self.mode!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.mode == "operation" and not self.operation_set:
            raise ValueError("operation mode needs a non-empty operation_set")


def count_connection_variants(n_total, num_inputs):
    """Closed-form count (N-2)!/(M-1)! as an exact integer."""
    if num_inputs < 1 or n_total < num_inputs + 2:
        raise InvalidSearchSpace(f"need N >= M + 2, got N={n_total}, M={num_inputs}")
    return math.factorial(n_total - 2) // math.factorial(num_inputs - 1)


def connection_space_counts(g: CellGenotype):
    """(raw, deduplicated, formula) sizes of the connection space of ``g``.

    raw: number of slot assignments, product over nodes of (preceding)^M.
    deduplicated: raw after merging assignments that only permute a node's
    identical (kind, source) pairs.
    formula: the closed-form count for the same (N, M).
    """
    m = g.num_inputs
    raw = 1
    for i in range(len(g.nodes)):
        raw *= (m + i) ** m
    dedup = sum(1 for _ in enumerate_connection_variants(g))
    formula = count_connection_variants(g.total_nodes, m)
    return raw, dedup, formula


def enumerate_connection_variants(g: CellGenotype, cap=ENUMERATION_CAP):
    """Yield every connection variant of ``g`` in lexicographic source order.

    Each of the n*M slots independently ranges over the slot's preceding
    nodes; assignments whose nodes hold the same multiset of (kind, source)
    pairs are emitted once.  Raises TooLarge when the raw space exceeds the
    cap or the cell has more than MAX_ENUMERABLE_NODES intermediate nodes.
    """
    m = g.num_inputs
    if not g.nodes:
        return
    if len(g.nodes) > MAX_ENUMERABLE_NODES:
        raise TooLarge(f"{len(g.nodes)} intermediate nodes exceed the enumeration guard")
    raw = 1
    for i in range(len(g.nodes)):
        raw *= (m + i) ** m
    if raw > cap:
        raise TooLarge(f"slot-assignment space of size {raw} exceeds cap {cap}")

    slot_ranges = []
    for i, node in enumerate(g.nodes):
        for _ in node.ops:
            slot_ranges.append(range(m + i))

    seen = set()
    for assignment in itertools.product(*slot_ranges):
        nodes = []
        pos = 0
        key = []
        for node in g.nodes:
            ops = tuple(
                OpSpec(op.kind, assignment[pos + j]) for j, op in enumerate(node.ops)
            )
            pos += len(node.ops)
            nodes.append(NodeSpec(ops))
            key.append(tuple(sorted((op.kind, op.source) for op in ops)))
        key = tuple(key)
        if key in seen:
            continue
        seen.add(key)
        yield CellGenotype(
            name=g.name, num_inputs=m, nodes=tuple(nodes), concat=g.concat
        )


def sample_connection_variant(g: CellGenotype, rng, name=None) -> CellGenotype:
    """Resample every slot's source uniformly among its preceding nodes."""
    m = g.num_inputs
    nodes = []
    for i, node in enumerate(g.nodes):
        ops = tuple(
            OpSpec(op.kind, int(rng.integers(0, m + i))) for op in node.ops
        )
        nodes.append(NodeSpec(ops))
    out = CellGenotype(
        name=name or g.name, num_inputs=m, nodes=tuple(nodes), concat=g.concat
    )
    validate_genotype(out)
    return out


def sample_operation_variant(g: CellGenotype, operation_set, rng, name=None) -> CellGenotype:
    """Resample every operation kind uniformly from ``operation_set``."""
    ops_list = tuple(operation_set)
    if not ops_list:
        raise ValueError("operation_set must be non-empty")
    unknown = set(ops_list) - OPERATION_KINDS
    if unknown:
        raise UnknownOperationKind(f"unknown operation kinds: {sorted(unknown)}")
    nodes = []
    for node in g.nodes:
        ops = tuple(
            OpSpec(ops_list[int(rng.integers(0, len(ops_list)))], op.source)
            for op in node.ops
        )
        nodes.append(NodeSpec(ops))
    out = CellGenotype(
        name=name or g.name, num_inputs=g.num_inputs, nodes=tuple(nodes), concat=g.concat
    )
    validate_genotype(out)
    return out


def sample_variants(g: CellGenotype, spec: SampleSpec):
    """Deterministic sequence of ``spec.count`` variants from one seed."""
    from .rng import stream

    rng = stream(spec.seed, "sampling")
    variants = []
    for i in range(spec.count):
        name = f"{g.name}_variant_{i:03d}"
        if spec.mode == "connection":
            variants.append(sample_connection_variant(g, rng, name=name))
        else:
            variants.append(sample_operation_variant(g, spec.operation_set, rng, name=name))
    return variants


def rank_variants(genotypes):
    """Stable sort by width ascending, then depth descending, then name."""
    def key(g):
        dag = validate_genotype(g)
        return (cell_width(dag), -cell_depth(dag), g.name)

    return sorted(genotypes, key=key)
