"""Command-line entry point: ``pimionet <command> [flags]``.

Exit codes: 0 success, 2 configuration/schema error, 3 numerical failure,
4 artifact mismatch or missing artifacts.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .autodiff import NonFiniteError
from .container import ContainerError, write_container
from .data import COMPONENTS, ScalerParams, load_dataset, save_dataset, write_json
from .fem import SingularSystemError
from .mionet import Predictor, load_checkpoint
from .pipeline import GenerationError, generate
from .schur import reconstruct_full
from .training import (STRATEGIES, ErrorReport, PhysicsContext, TrainingConfig, TrainingDiverged,
                       evaluate, model_nodes, save_run, sweep, train, write_sweep)

log = logging.getLogger("pimionet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4


class ArtifactError(RuntimeError):
    """Missing or mutually inconsistent run artifacts."""


# -- helpers ----------------------------------------------------------------------

def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "deterministic", False):
        o["deterministic"] = True
    if getattr(args, "threads", None) is not None:
        o["threads"] = args.threads
    if getattr(args, "out", None) is not None:
        o["output_dir"] = args.out
    if getattr(args, "strategy", None) is not None:
        o.setdefault("training", {})["strategy"] = args.strategy
    if getattr(args, "epochs", None) is not None:
        o.setdefault("training", {})["epochs"] = args.epochs
    return o


def _resolve(args) -> dict:
    doc = cfgmod.resolve(getattr(args, "config", None), _overrides(args))
    if doc["deterministic"]:
        doc["threads"] = 1
    return doc


def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return nullcontext()
    return threadpool_limits(limits=n)


def _dataset_path(args, doc) -> Path:
    path = Path(args.dataset) if args.dataset else Path(doc["output_dir"]) / "dataset"
    if not (path / "meta.json").exists():
        raise ArtifactError(f"dataset {path} not found")
    return path


def _load_run(run: str | Path):
    run = Path(run)
    ck = run / "checkpoint" if (run / "checkpoint" / "meta.json").exists() else run
    if not (ck / "meta.json").exists():
        raise ArtifactError(f"no checkpoint under {run}")
    params, arch, meta = load_checkpoint(ck)
    tc = dict(meta.get("training", {}))
    if "schur_nodes" in tc and tc["schur_nodes"] is not None:
        tc["schur_nodes"] = tuple(tc["schur_nodes"])
    return params, arch, meta, TrainingConfig(**tc)


def _check_compatible(arch, ds, tcfg, meta):
    if arch.branch_widths[0] != ds.branch_inputs.shape[1] or arch.n_out != ds.n_out:
        raise ArtifactError("checkpoint architecture does not match the dataset")
    try:
        model_nodes(ds, tcfg)
    except ValueError as exc:
        raise ArtifactError(f"node-set mismatch: {exc}") from exc
    nodes = meta.get("dataset_nodes")
    if nodes is not None and nodes != list(ds.extra.get("nodes", [])):
        raise ArtifactError("node-set mismatch between checkpoint and dataset")


# -- commands ---------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    doc = _resolve(args)
    out = Path(doc["output_dir"])
    gcfg = cfgmod.generation(doc)
    factor = doc["pipeline"]["highres_factor"]
    with _thread_limit(1):
        gen = generate(gcfg, companion_factors=(factor,) if factor > 1 else ())
    cfgmod.write_resolved(doc, out)
    save_dataset(gen.dataset, out / "dataset")
    for f, ds in gen.companions.items():
        save_dataset(ds, out / f"dataset_x{f}")
    write_json(out / "manifest.json", gen.manifest)
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "velocity", "axle_config", "samples", "trimmed_duration", "lambda"])
        for g in gen.manifest["groups"]:
            w.writerow([g["group"], g["velocity"], g["axle_config"], g["samples"],
                        repr(g["trimmed_duration"]), repr(g["lambda"])])
    shape = "x".join(str(n) for n in gen.dataset.targets.shape)
    print(f"wrote {gen.dataset.n_samples} samples (targets {shape}) to {out / 'dataset'}")
    for g in gen.manifest["groups"]:
        print(f"  v={g['velocity']:g} m/s {g['axle_config']}: T={g['trimmed_duration']:.3f} s "
              f"lambda={g['lambda']:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _resolve(args)
    out = Path(doc["output_dir"])
    ds = load_dataset(_dataset_path(args, doc))
    tcfg = cfgmod.training(doc)
    arch = cfgmod.arch(doc, ds.branch_inputs.shape[1], ds.coords.shape[1], ds.n_out)
    cfgmod.write_resolved(doc, out)

    def progress(epoch, row):
        if epoch == 1 or epoch % max(1, tcfg.epochs // 20) == 0:
            log.info("epoch %d total %.4e data %.4e physics %.4e", *row)

    with _thread_limit(doc["threads"]):
        result = train(ds, arch, tcfg, out_dir=out, progress=progress)
    meta = {"scalers": ds.scalers.to_json(), "dataset_nodes": list(ds.extra.get("nodes", [])),
            "seed": doc["seed"], "activation": arch.activation}
    save_run(result, out, meta)
    _write_timing(out, result.timings(), ds)
    rep = result.report
    if rep is not None:
        print(_report_line(rep))
        if rep.postprocessed is not None:
            print(_report_line(rep.postprocessed))
    return EXIT_OK


def _write_timing(out: Path, timings: dict, ds) -> None:
    fem = ds.extra.get("fem_seconds")
    if fem:
        timings["fem_minutes_per_sample"] = float(np.mean(fem)) / 60.0
        timings["fem_setup_seconds"] = ds.extra.get("fem_setup_seconds")
    (out / "timing.json").write_text(json.dumps(timings, indent=1))


def _report_line(rep: ErrorReport) -> str:
    parts = ", ".join(f"{c} {m:.4f}+/-{s:.4f}" for c, m, s in zip(rep.components, rep.mean, rep.std))
    return f"[{rep.split}/{rep.node_set} x{rep.grid_factor}] mean relative L2: {parts}"


def cmd_evaluate(args) -> int:
    doc = _resolve(args)
    out = Path(doc["output_dir"])
    params, arch, meta, tcfg = _load_run(args.run)
    ds = load_dataset(_dataset_path(args, doc))
    _check_compatible(arch, ds, tcfg, meta)
    scalers = ScalerParams.from_json(meta["scalers"]) if "scalers" in meta else ds.scalers
    factor = int(ds.extra.get("grid_factor", 1))
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(doc, out)
    with _thread_limit(doc["threads"]):
        for split in args.split:
            ev = evaluate(params, arch, ds, tcfg, split, scalers=scalers, grid_factor=factor)
            name = f"error_report_{split}" + (f"_x{factor}" if factor > 1 else "") + ".json"
            (out / name).write_text(json.dumps(ev.report.to_json(), indent=1))
            print(_report_line(ev.report))
            if ev.report.postprocessed is not None:
                print(_report_line(ev.report.postprocessed))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    doc = _resolve(args)
    out = Path(doc["output_dir"])
    params, arch, meta, tcfg = _load_run(args.run)
    ds = load_dataset(_dataset_path(args, doc))
    _check_compatible(arch, ds, tcfg, meta)
    scalers = ScalerParams.from_json(meta["scalers"]) if "scalers" in meta else ds.scalers
    sample = args.sample if args.sample is not None else doc["report"]["snapshot_sample"]
    if sample is None:
        sample = int(ds.test_idx[0]) if ds.test_idx.size else 0
    if not 0 <= sample < ds.n_samples:
        raise ArtifactError(f"sample {sample} outside the dataset")
    times = args.times if args.times else doc["report"]["snapshot_times"]
    comps = list(ds.extra.get("components", COMPONENTS))
    schur_nodes, pos = model_nodes(ds, tcfg)
    pred = Predictor(params, arch, scalers.coords(ds.coords[pos]), scalers.times(ds.time_grid),
                     out_scale=scalers.out_scale)
    u = pred(scalers.branch(ds.branch_inputs[sample:sample + 1]))[0]
    if tcfg.schur:
        ctx = PhysicsContext(ds, schur_nodes)
        u_i = u.reshape(u.shape[0], -1)[:, ctx.schur_pos]
        hist = reconstruct_full(ctx.partition(ds.lam[sample]), u_i, ds.loads[sample])
        nodes = ds.extra.get("nodes", list(range(ds.coords.shape[0])))
        full = hist.u.reshape(hist.n_steps, -1, 3)[:, nodes][:, :, [COMPONENTS.index(c) for c in comps]]
    else:
        full = u
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(doc, out)
    write_container(out / f"reconstructed_{sample}", {"u": full, "time_grid": ds.time_grid},
                    {"sample": sample, "strategy": tcfg.strategy, "components": comps,
                     "lambda": float(ds.lam[sample])}, kind="history")
    true = ds.targets[sample]
    for t in times:
        k = int(np.argmin(np.abs(ds.time_grid - t)))
        path = out / f"snapshot_t{t:g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "component", "time", "actual", "predicted", "abs_error"])
            for i in range(true.shape[1]):
                for j, c in enumerate(comps):
                    a, p = true[k, i, j], full[k, i, j]
                    w.writerow([i, ds.coords[i, 0], ds.coords[i, 1], c, repr(float(ds.time_grid[k])),
                                repr(float(a)), repr(float(p)), repr(float(abs(p - a)))])
        print(f"wrote {path} (grid time {ds.time_grid[k]:.4f} s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _resolve(args)
    out = Path(doc["output_dir"])
    ds = load_dataset(_dataset_path(args, doc))
    grid = {k: v for k, v in doc["sweep"].items() if k != "epochs"}
    base = cfgmod.training(doc)
    base = replace(base, epochs=doc["sweep"].get("epochs", base.epochs))
    cfgmod.write_resolved(doc, out)
    with _thread_limit(doc["threads"]):
        rows = sweep(ds, grid, base, neurons=doc["arch"]["hidden"], layers=doc["arch"]["layers"],
                     activation=doc["arch"]["activation"], seed=doc["seed"])
    write_sweep(out / "sweep.csv", rows)
    for r in rows:
        print(r)
    return EXIT_OK


def cmd_report(args) -> int:
    doc = _resolve(args)
    out = Path(doc["output_dir"])
    target = doc["report"]["speedup_target"]
    runs = [Path(r) for r in args.runs]
    missing = [str(r / "error_report.json") for r in runs if not (r / "error_report.json").exists()]
    if missing:
        raise ArtifactError("missing artifacts: " + ", ".join(missing))
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(doc, out)
    lines = ["# Run summary", ""]
    table = []
    for run in runs:
        rep = ErrorReport.from_json(json.loads((run / "error_report.json").read_text()))
        tag = run.name
        _write_histograms(out / f"{tag}_histogram.csv", rep)
        _write_mean_std(out / f"{tag}_mean_std.csv", rep)
        lines += [f"## {tag}", "", f"split: {rep.split}, node set: {rep.node_set}, samples: {rep.errors.shape[0]}", ""]
        lines += ["| component | mean rel. L2 | std | max |", "|---|---|---|---|"]
        lines += [f"| {c} | {m:.4f} | {s:.4f} | {x:.4f} |"
                  for c, m, s, x in zip(rep.components, rep.mean, rep.std, rep.max)]
        row = {"run": tag, "node_set": rep.node_set}
        row.update({f"{c}_mean": float(m) for c, m in zip(rep.components, rep.mean)})
        if rep.postprocessed is not None:
            pp = rep.postprocessed
            _write_histograms(out / f"{tag}_postprocessed_histogram.csv", pp)
            lines += ["", "Post-processed full domain:", "", "| component | mean rel. L2 | std | max |",
                      "|---|---|---|---|"]
            lines += [f"| {c} | {m:.4f} | {s:.4f} | {x:.4f} |"
                      for c, m, s, x in zip(pp.components, pp.mean, pp.std, pp.max)]
            row.update({f"{c}_post_mean": float(m) for c, m in zip(pp.components, pp.mean)})
        timing_path = run / "timing.json"
        lines.append("")
        if timing_path.exists():
            tm = json.loads(timing_path.read_text())
            speed = speedup(tm)
            row.update({"train_minutes": tm.get("train_minutes"), "speedup": speed})
            lines.append(f"Training time: {tm.get('train_minutes', float('nan')):.2f} min")
            if speed is not None:
                flag = "meets" if speed >= target else "below"
                lines.append(f"Speedup FEM / inference per sample: {speed:.1f}x ({flag} the {target:g}x target)")
                row["speedup_ok"] = speed >= target
            else:
                lines.append("Speedup: timing fields incomplete.")
        else:
            lines.append("No timing data recorded for this run.")
        lines.append("")
        table.append(row)
    keys = sorted({k for r in table for k in r}, key=lambda k: (k != "run", k))
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(table)
    if len(table) > 1:
        lines += ["## Side by side", "", "| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
        lines += ["| " + " | ".join(_fmt(r.get(k)) for k in keys) + " |" for r in table]
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


def speedup(timing: dict) -> float | None:
    fem, inf = timing.get("fem_minutes_per_sample"), timing.get("inference_minutes_per_sample")
    if not fem or not inf:
        return None
    return fem / inf


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.4g}"
    return "" if x is None else str(x)


def _write_histograms(path, rep: ErrorReport) -> None:
    hist = rep.histogram()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "bin_low", "bin_high", "count"])
        for c, h in hist.items():
            for lo, hi, n in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
                w.writerow([c, lo, hi, n])


def _write_mean_std(path, rep: ErrorReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "mean", "std", "max"])
        for c, m, s, x in zip(rep.components, rep.mean, rep.std, rep.max):
            w.writerow([c, m, s, x])


# -- argument parsing -----------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="single-threaded, reproducible run")
    p.add_argument("--threads", type=int)
    p.add_argument("--strategy", choices=STRATEGIES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimionet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="simulate the scenario grid and write a dataset")
    _common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one strategy on a dataset")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("evaluate", cmd_evaluate, "error report for a trained run"),
                             ("reconstruct", cmd_reconstruct, "full-field reconstruction and snapshots")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--run", required=True, help="run directory or checkpoint")
        p.add_argument("--dataset")
        if name == "evaluate":
            p.add_argument("--split", nargs="+", default=["test"], choices=["train", "test", "all"])
        else:
            p.add_argument("--sample", type=int)
            p.add_argument("--times", type=float, nargs="+")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="parametric training sweep")
    _common(p)
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summaries and plot data for finished runs")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("schema", help="print the configuration JSON schema")
    p.set_defaults(func=lambda a: print(cfgmod.schema_json()) or EXIT_OK)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularSystemError, NonFiniteError, TrainingDiverged, GenerationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArtifactError, ContainerError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except ValueError as exc:
        if "empty scenario grid" in str(exc) or "empty sweep grid" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
