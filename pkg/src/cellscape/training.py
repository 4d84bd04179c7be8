"""Training protocol and convergence comparison across genotypes.

SGD with momentum 0.9, weight decay 3e-4 and a cosine learning-rate schedule
annealing to zero, evaluated on the held-out split once per epoch.  A
non-finite loss stops the run and marks it diverged; divergence is a
legitimate experimental outcome, not an error.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .autodiff import OptimizerState, cosine_lr, sgd_step
from .data import Dataset
from .errors import UnsupportedInputCount
from .genotype import CellGenotype, NodeSpec, OpSpec, validate_genotype
from .network import CellNetwork, NetworkConfig
from .rng import stream


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 3e-4
    batch_size: int = 80
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("need lr >= 0, batch_size >= 1, epochs >= 0")


@dataclass
class TrainTrace:
    """Per-epoch metrics; row 0 is the evaluation before any update."""

    rows: list = field(default_factory=list)  # dicts epoch/lr/train_loss/test_loss/test_acc
    diverged: bool = False
    divergence_epoch: int | None = None
    final_params: dict | None = None

    @property
    def final_row(self):
        return self.rows[-1]

    def epochs_to_threshold(self, threshold):
        """First epoch whose test loss falls below the threshold; None if never."""
        for row in self.rows:
            if math.isfinite(row["test_loss"]) and row["test_loss"] < threshold:
                return row["epoch"]
        return None

    def loss_curve_area(self):
        """Sum of per-epoch test losses (rectangle rule); inf for diverged runs."""
        if self.diverged:
            return math.inf
        return float(sum(row["test_loss"] for row in self.rows))


def train(network: CellNetwork, dataset: Dataset, cfg: TrainConfig) -> TrainTrace:
    """Run the full protocol and return the trace with final parameters."""
    if not network.params:
        network.init_params(stream(cfg.seed, "init"))
    params = {k: v.copy() for k, v in network.params.items()}
    state = OptimizerState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    shuffle_rng = stream(cfg.seed, "shuffle")
    trace = TrainTrace()

    def record(epoch, lr, train_loss):
        test_loss, test_acc = network.evaluate(dataset.test_x, dataset.test_y, params)
        trace.rows.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "test_loss": test_loss,
                "test_acc": test_acc,
            }
        )

    init_train_loss, _ = network.evaluate(dataset.train_x, dataset.train_y, params)
    record(0, cosine_lr(0, max(cfg.epochs, 1), cfg.lr), init_train_loss)

    n = len(dataset.train_y)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = network.loss_and_grads(
                dataset.train_x[idx], dataset.train_y[idx], params
            )
            if not math.isfinite(loss):
                trace.diverged = True
                trace.divergence_epoch = epoch + 1
                trace.rows.append(
                    {
                        "epoch": epoch + 1,
                        "lr": lr,
                        "train_loss": math.inf,
                        "test_loss": math.inf,
                        "test_acc": 0.0,
                    }
                )
                trace.final_params = params
                return trace
            epoch_losses.append(loss)
            params, state = sgd_step(params, grads, state, lr)
        record(epoch + 1, lr, float(np.mean(epoch_losses)))

    trace.final_params = params
    return trace


def adapt_to_widest_shallowest(g: CellGenotype) -> CellGenotype:
    """Rewire every intermediate node to the two input nodes (slot order 0, 1),
    preserving node order and operation kinds."""
    if g.num_inputs != 2:
        raise UnsupportedInputCount(
            f"adaptation supports exactly 2 input nodes, got {g.num_inputs}"
        )
    nodes = tuple(
        NodeSpec(tuple(OpSpec(op.kind, slot) for slot, op in enumerate(node.ops)))
        for node in g.nodes
    )
    out = CellGenotype(
        name=f"{g.name}_adapted", num_inputs=2, nodes=nodes, concat=g.concat
    )
    validate_genotype(out)
    return out


def rewire_to_chain(g: CellGenotype) -> CellGenotype:
    """Rewire every intermediate node after the first to its predecessor (plus
    input 0), producing the deepest variant; ops and node order preserved."""
    if g.num_inputs != 2:
        raise UnsupportedInputCount(
            f"rewiring supports exactly 2 input nodes, got {g.num_inputs}"
        )
    nodes = []
    for i, node in enumerate(g.nodes):
        sources = (0, 1) if i == 0 else (g.num_inputs + i - 1, 0)
        nodes.append(
            NodeSpec(tuple(OpSpec(op.kind, src) for op, src in zip(node.ops, sources)))
        )
    out = CellGenotype(
        name=f"{g.name}_chain", num_inputs=2, nodes=tuple(nodes), concat=g.concat
    )
    validate_genotype(out)
    return out


@dataclass
class ConvergenceReport:
    threshold: float
    entries: list = field(default_factory=list)
    # entries: dicts with genotype/lr/seed/epochs_to_threshold/area/diverged/final_acc

    def median_epochs(self, genotype_name, lr):
        vals = [
            (math.inf if e["epochs_to_threshold"] is None else e["epochs_to_threshold"])
            for e in self.entries
            if e["genotype"] == genotype_name and e["lr"] == lr
        ]
        return statistics.median(vals) if vals else math.inf

    def diverged_runs(self):
        return [e for e in self.entries if e["diverged"]]

    def ranking(self, lr):
        names = sorted({e["genotype"] for e in self.entries})
        return sorted(names, key=lambda name: self.median_epochs(name, lr))

    def to_dict(self):
        return {"threshold": self.threshold, "entries": self.entries}


def compare_convergence(genotypes, dataset, cfg: TrainConfig, lr_set, seeds,
                        net_cfg: NetworkConfig | None = None,
                        threshold=None) -> ConvergenceReport:
    """Train every (genotype, lr, seed) combination and scalarize convergence.

    Convergence speed is measured as epochs-to-threshold on the test loss
    (None when never reached) plus the area under the test-loss curve.
    """
    if len(genotypes) < 2:
        raise ValueError("need at least two genotypes to compare")
    if not seeds:
        raise ValueError("need at least one seed")
    if net_cfg is None:
        net_cfg = NetworkConfig(
            input_dim=dataset.spec.dim, num_classes=dataset.spec.num_classes
        )
    if threshold is None:
        threshold = 0.5 * math.log(dataset.spec.num_classes)
    report = ConvergenceReport(threshold=threshold)
    for g in genotypes:
        for lr in lr_set:
            for seed in seeds:
                run_cfg = TrainConfig(
                    lr=lr,
                    momentum=cfg.momentum,
                    weight_decay=cfg.weight_decay,
                    batch_size=cfg.batch_size,
                    epochs=cfg.epochs,
                    seed=seed,
                )
                net = CellNetwork(g, net_cfg, init_rng=stream(seed, "init"))
                trace = train(net, dataset, run_cfg)
                report.entries.append(
                    {
                        "genotype": g.name,
                        "lr": lr,
                        "seed": seed,
                        "epochs_to_threshold": trace.epochs_to_threshold(threshold),
                        "area": trace.loss_curve_area(),
                        "diverged": trace.diverged,
                        "divergence_epoch": trace.divergence_epoch,
                        "final_acc": trace.final_row["test_acc"],
                    }
                )
    return report
