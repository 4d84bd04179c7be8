"""Command-line front end.

Every command flows all randomness from one ``--seed`` (split into named
streams), writes its data artifacts first and a ``manifest.json`` last, and
exits with: 0 success, 1 usage/parse error, 2 validation error, 3 numerical
divergence reported, 4 theorem-bound violation reported.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import __version__
from .autodiff import load_checkpoint, save_checkpoint
from .data import DatasetSpec, make_dataset, spec_from_json
from .errors import (
    CellscapeError,
    GenotypeError,
    InvalidSearchSpace,
    InvalidSpec,
    MissingManifest,
    ParseError,
    TooLarge,
)
from .genotype import genotype_to_dict, load_genotype, save_genotype, validate_genotype
from .landscape import (
    export_grid,
    gradient_variance_surface,
    grid_coordinates,
    loss_surface,
    sample_directions,
)
from .linear_theory import (
    random_model,
    verify_block_smoothness,
    verify_gradient_variance,
)
from .metrics import cell_depth, cell_width, per_node_widths, width_depth_report
from .network import CellNetwork, NetworkConfig
from .rng import RNG_ALGORITHM, stream
from .sampler import (
    SampleSpec,
    connection_space_counts,
    count_connection_variants,
    sample_variants,
)
from .training import TrainConfig, adapt_to_widest_shallowest, compare_convergence, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_VIOLATION = 4


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, command, flags, seed, artifacts, started, extra=None):
    doc = {
        "command": command,
        "flags": flags,
        "seeds": [seed] if isinstance(seed, int) else list(seed),
        "rng_algorithm": RNG_ALGORITHM,
        "artifacts": sorted(str(a) for a in artifacts),
        "version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    if extra:
        doc.update(extra)
    _write_json(Path(out_dir) / "manifest.json", doc)


@click.group()
@click.option("--workers", type=int, default=1, show_default=True,
              help="Worker count for grid computations; 1 is strictest determinism.")
@click.pass_context
def cli(ctx, workers):
    """Cell-topology metrics, variant sampling, desk-scale experiments."""
    ctx.obj = {"workers": max(1, workers)}


@cli.command()
@click.option("--genotype", "genotype_file", required=True, type=click.Path())
@click.option("--out", type=click.Path(), default=None, help="Optional report file.")
def analyze(genotype_file, out):
    """Width/depth report for one genotype file."""
    g = load_genotype(genotype_file)
    dag = validate_genotype(g)
    report = width_depth_report(dag)
    n = dag.num_intermediate
    doc = {
        "name": g.name,
        "N": g.total_nodes,
        "M": g.num_inputs,
        "n": n,
        "width_in_c": str(report.width_in_c),
        "width_in_c_float": float(report.width_in_c),
        "depth": report.depth,
        "per_node_width": {str(k): str(v) for k, v in report.per_node_width.items()},
        "is_extremal": report.width_in_c == Fraction(n) and report.depth == 2,
    }
    click.echo(json.dumps(doc, indent=2, sort_keys=True))
    if out:
        _write_json(out, doc)


@cli.command()
@click.option("--genotype", "genotype_file", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["connection", "operation"]), required=True)
@click.option("--count", "count_", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ops", default="linear,identity,zero", show_default=True,
              help="Candidate operation kinds for operation mode.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def variants(genotype_file, mode, count_, seed, ops, out_dir):
    """Sample random connection or operation variants of a genotype."""
    started = time.monotonic()
    g = load_genotype(genotype_file)
    validate_genotype(g)
    spec = SampleSpec(
        mode=mode,
        count=count_,
        seed=seed,
        operation_set=tuple(ops.split(",")) if mode == "operation" else (),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sampled = sample_variants(g, spec)
    artifacts = []
    entries = []
    for i, v in enumerate(sampled):
        path = out / f"variant_{i:03d}.json"
        save_genotype(v, path)
        artifacts.append(path.name)
        dag = validate_genotype(v)
        entries.append(
            {
                "file": path.name,
                "name": v.name,
                "width_in_c": str(cell_width(dag)),
                "depth": cell_depth(dag),
            }
        )
    _write_manifest(
        out,
        "variants",
        {"genotype": str(genotype_file), "mode": mode, "count": count_, "ops": ops},
        seed,
        artifacts,
        started,
        extra={"variants": entries},
    )
    click.echo(f"wrote {len(sampled)} variants to {out}")


@cli.command()
@click.option("--nodes", "n_total", type=int, required=True, help="Total node count N.")
@click.option("--inputs", "num_inputs", type=int, default=2, show_default=True)
@click.option("--enumerate", "do_enumerate", is_flag=True)
@click.option("--genotype", "genotype_file", type=click.Path(), default=None,
              help="Genotype to enumerate (required with --enumerate).")
def count(n_total, num_inputs, do_enumerate, genotype_file):
    """Closed-form connection-space size, optionally with enumeration counts."""
    formula = count_connection_variants(n_total, num_inputs)
    click.echo(f"formula (N-2)!/(M-1)! for N={n_total}, M={num_inputs}: {formula}")
    if do_enumerate:
        if not genotype_file:
            raise click.UsageError("--enumerate requires --genotype")
        g = load_genotype(genotype_file)
        raw, dedup, g_formula = connection_space_counts(g)
        click.echo(f"slot assignments (raw): {raw}")
        click.echo(f"slot assignments (deduplicated): {dedup}")
        click.echo(f"formula for this genotype's (N={g.total_nodes}, M={g.num_inputs}): {g_formula}")


@cli.command()
@click.option("--n", "n_nodes", type=int, default=3, show_default=True)
@click.option("--dim", type=int, default=8, show_default=True)
@click.option("--trials", type=int, default=200, show_default=True)
@click.option("--samples", type=int, default=2000, show_default=True)
@click.option("--instances", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scale", type=float, default=1.0, show_default=True,
              help="Weight scale of the random instances.")
@click.option("--out", "out_file", required=True, type=click.Path())
def theory(n_nodes, dim, trials, samples, instances, seed, scale, out_file):
    """Randomized smoothness/variance bound checks on chained linear cells."""
    started = time.monotonic()
    rng = stream(seed, "theory")
    out_path = Path(out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    results = []
    violations = []
    for inst in range(instances):
        model = random_model(n_nodes, dim, "narrowest", rng, scale=scale)
        x = rng.standard_normal(dim)
        blocks = []
        for i in range(1, n_nodes + 1):
            smooth = verify_block_smoothness(model, x, i, rng, trials=trials)
            var = verify_gradient_variance(model, i, rng, samples=samples)
            blocks.append(
                {
                    "block": i,
                    "lambda": smooth.lambdas[i - 1],
                    "smoothness": smooth.to_dict(),
                    "variance": var.to_dict(),
                }
            )
            if smooth.violated or var.violated:
                violations.append(
                    {
                        "instance": inst,
                        "block": i,
                        "weights": [w.tolist() for w in model.weights],
                        "targets": [t.tolist() for t in model.targets],
                        "input": x.tolist(),
                    }
                )
        results.append({"instance": inst, "blocks": blocks})
    doc = {
        "n": n_nodes,
        "dim": dim,
        "trials": trials,
        "samples": samples,
        "instances": instances,
        "seed": seed,
        "scale": scale,
        "results": results,
        "violation_count": len(violations),
        "violations": violations,
    }
    _write_json(out_path, doc)
    _write_manifest(
        out_path.parent,
        "theory",
        {"n": n_nodes, "dim": dim, "trials": trials, "samples": samples,
         "instances": instances, "scale": scale},
        seed,
        [out_path.name],
        started,
        extra={"violation_count": len(violations)},
    )
    if violations:
        click.echo(f"{len(violations)} bound violations reported in {out_path}")
        sys.exit(EXIT_VIOLATION)
    click.echo(f"no bound violations across {instances} instances; report in {out_path}")


def _load_dataset_spec(path):
    if path:
        return spec_from_json(path)
    return DatasetSpec()


@cli.command(name="train")
@click.option("--genotype", "genotype_file", required=True, type=click.Path())
@click.option("--layers", type=int, default=6, show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--lr", type=float, default=0.025, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=80, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dataset-spec", "dataset_spec_file", type=click.Path(), default=None)
@click.option("--out-dir", required=True, type=click.Path())
def train_cmd(genotype_file, layers, dim, lr, epochs, batch_size, seed,
              dataset_spec_file, out_dir):
    """Train one genotype on the synthetic dataset; writes trace.csv + final.ckpt."""
    started = time.monotonic()
    g = load_genotype(genotype_file)
    spec = _load_dataset_spec(dataset_spec_file)
    dataset = make_dataset(spec)
    cfg = TrainConfig(lr=lr, epochs=epochs, batch_size=batch_size, seed=seed)
    net_cfg = NetworkConfig(
        layers=layers, dim=dim, num_classes=spec.num_classes, input_dim=spec.dim
    )
    net = CellNetwork(g, net_cfg, init_rng=stream(seed, "init"))
    trace = train(net, dataset, cfg)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv"
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "test_loss", "test_acc"])
        for row in trace.rows:
            writer.writerow(
                [row["epoch"], repr(row["lr"]), repr(row["train_loss"]),
                 repr(row["test_loss"]), repr(row["test_acc"])]
            )
    ckpt_path = out / "final.ckpt"
    save_checkpoint(trace.final_params, ckpt_path)
    _write_manifest(
        out,
        "train",
        {"genotype": str(genotype_file), "layers": layers, "dim": dim, "lr": lr,
         "epochs": epochs, "batch_size": batch_size,
         "dataset_spec": str(dataset_spec_file)},
        seed,
        ["trace.csv", "final.ckpt"],
        started,
        extra={"diverged": trace.diverged, "divergence_epoch": trace.divergence_epoch,
               "final": trace.final_row},
    )
    if trace.diverged:
        click.echo(f"diverged at epoch {trace.divergence_epoch}; trace in {trace_path}")
        sys.exit(EXIT_DIVERGENCE)
    click.echo(
        f"final test loss {trace.final_row['test_loss']:.4f}, "
        f"acc {trace.final_row['test_acc']:.3f}; artifacts in {out}"
    )


@cli.command()
@click.option("--genotypes", "genotype_dir", required=True, type=click.Path(),
              help="Directory of genotype JSON files.")
@click.option("--lrs", default="0.0025,0.025,0.25", show_default=True)
@click.option("--seeds", "num_seeds", type=int, default=5, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--layers", type=int, default=6, show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--threshold", type=float, default=None,
              help="Test-loss threshold; default 0.5*ln(classes).")
@click.option("--dataset-spec", "dataset_spec_file", type=click.Path(), default=None)
@click.option("--out", "out_file", required=True, type=click.Path())
def compare(genotype_dir, lrs, num_seeds, epochs, layers, dim, threshold,
            dataset_spec_file, out_file):
    """Convergence comparison across genotypes and learning rates."""
    started = time.monotonic()
    files = sorted(Path(genotype_dir).glob("*.json"))
    files = [f for f in files if f.name != "manifest.json"]
    genotypes = [load_genotype(f) for f in files]
    if len(genotypes) < 2:
        raise InvalidSpec(f"need >= 2 genotype files in {genotype_dir}")
    spec = _load_dataset_spec(dataset_spec_file)
    dataset = make_dataset(spec)
    lr_set = [float(v) for v in lrs.split(",")]
    seeds = list(range(num_seeds))
    cfg = TrainConfig(epochs=epochs)
    net_cfg = NetworkConfig(
        layers=layers, dim=dim, num_classes=spec.num_classes, input_dim=spec.dim
    )
    report = compare_convergence(
        genotypes, dataset, cfg, lr_set, seeds, net_cfg=net_cfg, threshold=threshold
    )
    out_path = Path(out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["rankings"] = {repr(lr): report.ranking(lr) for lr in lr_set}
    doc["medians"] = {
        repr(lr): {name: report.median_epochs(name, lr) for name in doc["rankings"][repr(lr)]}
        for lr in lr_set
    }
    # inf medians are not valid JSON numbers
    for lr_key, medians in doc["medians"].items():
        for name, v in medians.items():
            if not math.isfinite(v):
                medians[name] = None
    _write_json(out_path, doc)
    diverged = report.diverged_runs()
    _write_manifest(
        out_path.parent,
        "compare",
        {"genotypes": str(genotype_dir), "lrs": lrs, "epochs": epochs,
         "layers": layers, "dim": dim, "dataset_spec": str(dataset_spec_file)},
        seeds,
        [out_path.name],
        started,
        extra={"diverged_runs": len(diverged)},
    )
    if diverged:
        click.echo(f"{len(diverged)} runs diverged; report in {out_path}")
        sys.exit(EXIT_DIVERGENCE)
    click.echo(f"report in {out_path}")


@cli.command()
@click.option("--checkpoint", "checkpoint_file", required=True, type=click.Path())
@click.option("--genotype", "genotype_file", required=True, type=click.Path())
@click.option("--dataset-spec", "dataset_spec_file", type=click.Path(), default=None)
@click.option("--mode", type=click.Choice(["loss", "gradvar", "gradstd"]),
              default="loss", show_default=True)
@click.option("--grid", "grid_points", type=int, default=41, show_default=True)
@click.option("--range", "extent", type=float, default=1.0, show_default=True)
@click.option("--norm", type=click.Choice(["blockwise", "none"]),
              default="blockwise", show_default=True)
@click.option("--layers", type=int, default=6, show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--subset", type=int, default=256, show_default=True,
              help="Held-out instances used for evaluation.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_file", required=True, type=click.Path())
@click.pass_context
def landscape(ctx, checkpoint_file, genotype_file, dataset_spec_file, mode, grid_points,
              extent, norm, layers, dim, subset, seed, out_file):
    """Loss or gradient-variance surface around a trained checkpoint."""
    started = time.monotonic()
    workers = ctx.obj["workers"]
    g = load_genotype(genotype_file)
    spec = _load_dataset_spec(dataset_spec_file)
    dataset = make_dataset(spec)
    net_cfg = NetworkConfig(
        layers=layers, dim=dim, num_classes=spec.num_classes, input_dim=spec.dim
    )
    net = CellNetwork(g, net_cfg)
    checkpoint = load_checkpoint(checkpoint_file)
    pair = sample_directions(checkpoint, seed, normalization=norm)
    coords = grid_coordinates(grid_points, extent)
    pick = stream(seed, "data").choice(
        len(dataset.test_y), size=min(subset, len(dataset.test_y)), replace=False
    )
    pick.sort()
    x, y = dataset.test_x[pick], dataset.test_y[pick]
    metadata = {
        "seed": seed, "checkpoint": str(checkpoint_file),
        "dataset_seed": spec.seed, "normalization": norm, "mode": mode,
    }
    if mode == "loss":
        grid = loss_surface(net, checkpoint, x, y, pair, coords, coords, metadata,
                            workers=workers)
    else:
        grid = gradient_variance_surface(
            net, checkpoint, x, y, pair, coords, coords, mode=mode, metadata=metadata,
            workers=workers,
        )
    out_path = Path(out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "json" if out_path.suffix == ".json" else "csv"
    export_grid(grid, out_path, fmt=fmt)
    _write_manifest(
        out_path.parent,
        "landscape",
        {"checkpoint": str(checkpoint_file), "genotype": str(genotype_file),
         "mode": mode, "grid": grid_points, "range": extent, "norm": norm,
         "subset": subset, "dataset_spec": str(dataset_spec_file)},
        seed,
        [out_path.name],
        started,
    )
    click.echo(f"{mode} grid ({grid_points}x{grid_points}) in {out_path}")


@cli.command()
@click.option("--genotype", "genotype_file", required=True, type=click.Path())
@click.option("--out", "out_file", required=True, type=click.Path())
def adapt(genotype_file, out_file):
    """Rewire a genotype to its widest, shallowest form."""
    g = load_genotype(genotype_file)
    adapted = adapt_to_widest_shallowest(g)
    save_genotype(adapted, out_file)
    dag = validate_genotype(adapted)
    click.echo(
        f"adapted {g.name}: width {cell_width(dag)}c, depth {cell_depth(dag)} "
        f"-> {out_file}"
    )


@cli.command()
@click.option("--run-dir", "run_dir", required=True, type=click.Path())
@click.option("--out", "out_file", type=click.Path(), default=None)
def report(run_dir, out_file):
    """Consolidate manifests under a run directory into one summary."""
    manifests = sorted(Path(run_dir).rglob("manifest.json"))
    if not manifests:
        raise MissingManifest(f"no manifest.json found under {run_dir}")
    merged = []
    violations = 0
    diverged = 0
    for path in manifests:
        with open(path) as fh:
            doc = json.load(fh)
        doc["_path"] = str(path)
        merged.append(doc)
        violations += int(doc.get("violation_count", 0))
        diverged += int(doc.get("diverged_runs", 0)) + int(bool(doc.get("diverged")))
    summary = {
        "run_dir": str(run_dir),
        "manifests": merged,
        "theorem_violations": violations,
        "diverged_runs": diverged,
    }
    if out_file:
        _write_json(out_file, summary)
    click.echo(f"{len(merged)} manifests; {violations} theorem violations; "
               f"{diverged} diverged runs")
    for doc in merged:
        final = doc.get("final")
        if final:
            click.echo(f"  {doc['_path']}: final test_acc {final['test_acc']:.3f}")
    if violations:
        sys.exit(EXIT_VIOLATION)
    if diverged:
        sys.exit(EXIT_DIVERGENCE)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except SystemExit:
        raise
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(EXIT_USAGE)
    except click.Abort:
        sys.exit(EXIT_USAGE)
    except ParseError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except (GenotypeError, InvalidSpec, InvalidSearchSpace, TooLarge) as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except CellscapeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
