"""Command-line entry point: dataset generation, training, evaluation,
bundle export and serving.

Every flag can also come from a JSON config file (``--config``); explicit
command-line flags override config-file values. Exit codes: 0 success,
2 configuration error, 3 data/file error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .autodiff import AutodiffError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


def _add_run_config_flags(parser: argparse.ArgumentParser) -> None:
    from .training import RunConfig

    helptext = {
        "loss": "training objective: psa | wa | ce_ibm | ce_ibm_w",
        "mode": "embedding geometry: hyperbolic | euclidean",
        "curvature": "curvature magnitude c of the ball",
        "embed_dim": "embedding dimension L",
        "chunk_seconds": "training chunk length in seconds",
        "patience": "epochs without val improvement before halving lr",
    }
    for f in fields(RunConfig):
        if f.name == "dataset":
            continue
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, type=type(f.default), default=None, help=helptext.get(f.name))


def _run_config_from_args(args) -> "RunConfig":
    from .training import RunConfig

    file_values = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        unknown = set(file_values) - {f.name for f in fields(RunConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values = dict(file_values)
    for f in fields(RunConfig):
        if f.name == "dataset":
            continue
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            values[f.name] = cli_value
    values["dataset"] = args.dataset
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_dataset(args) -> int:
    from .data import build_dataset

    manifest = build_dataset(args.out, n_tracks=args.tracks, duration=args.duration, master_seed=args.seed)
    counts = {name: len(specs) for name, specs in manifest.splits.items()}
    print(f"wrote {sum(counts.values())} tracks to {args.out} (splits: {counts})")
    return 0


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .training import save_training_log, train

    config = _run_config_from_args(args)

    def progress(entry):
        print(
            f"epoch {entry['epoch']:3d}  train {entry['train_loss']:.5f}  "
            f"val {entry['val_loss']:.5f}  lr {entry['lr']:.2e}  ({entry['seconds']:.1f}s)",
            flush=True,
        )

    model, log = train(config, log_fn=progress if not args.quiet else None)
    save_checkpoint(args.out, model, extra={"run_config": config.to_dict(), "final_val_loss": log[-1]["val_loss"]})
    log_path = args.log or str(Path(args.out).with_suffix(".log.json"))
    save_training_log(log_path, config, log)
    print(f"checkpoint: {args.out}\ntraining log: {log_path}")
    return 0


def _load_for_eval(args):
    from .checkpoint import load_checkpoint
    from .data import DatasetManifest

    model, extra = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(Path(args.dataset) / "manifest.json")
    if manifest.hierarchy.to_dict() != model.config.hierarchy.to_dict():
        raise ConfigError("checkpoint hierarchy does not match the dataset manifest")
    if args.split not in manifest.splits:
        raise ConfigError(f"split {args.split!r} not in dataset (have {sorted(manifest.splits)})")
    return model, manifest


def cmd_evaluate(args) -> int:
    from .evaluation import (
        certainty_compare,
        curvature_dim_grid,
        evaluate_report,
        threshold_sweep,
        write_json,
    )

    model, manifest = _load_for_eval(args)
    if args.report_mode == "report":
        payload = evaluate_report(model, args.dataset, manifest, args.split, jobs=args.jobs)
    elif args.report_mode == "threshold-sweep":
        payload = threshold_sweep(model, args.dataset, manifest, args.split, jobs=args.jobs)
    elif args.report_mode == "certainty-compare":
        payload = certainty_compare(model, args.dataset, manifest, args.split, n_passes=args.passes, seed=args.seed or 0)
    elif args.report_mode == "curvature-dim-grid":
        from .checkpoint import load_checkpoint
        from .training import RunConfig

        pairs = _parse_grid(args.grid)
        _, extra = load_checkpoint(args.checkpoint)
        run_cfg = extra.get("run_config", {})
        run_cfg.update({"dataset": args.dataset, "epochs": args.grid_epochs})
        base = RunConfig(**run_cfg)
        payload = curvature_dim_grid(base, args.dataset, manifest, args.split, pairs, jobs=args.jobs)
    else:
        raise ConfigError(f"unknown evaluate mode {args.report_mode!r}")
    write_json(args.out, payload)
    if args.report_mode == "report" and not args.quiet:
        print(render_report_table(payload))
    print(f"report: {args.out}")
    return 0


def _parse_grid(spec: str) -> list[tuple[float, int]]:
    # "0.1:2,1.0:2,0.1:16" -> [(0.1, 2), (1.0, 2), (0.1, 16)]
    pairs = []
    try:
        for item in spec.split(","):
            c, dim = item.split(":")
            pairs.append((float(c), int(dim)))
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {spec!r}; expected 'c:L,c:L,...'") from exc
    return pairs


def render_report_table(report: dict) -> str:
    """Plain-text table mirroring the per-class report layout."""
    classes = list(report["rows"]["model"]["classes"])
    width = max(len(c) for c in classes) + 2
    header = "row".ljust(12) + "".join(c.rjust(width) for c in classes) + "avg".rjust(8)
    lines = [header, "-" * len(header)]
    for row_name in ("no_proc", "oracle_psf", "model"):
        row = report["rows"][row_name]
        cells = "".join(f"{row['classes'][c]['si_sdr']:{width}.2f}" for c in classes)
        lines.append(row_name.ljust(12) + cells + f"{row['averages']['all']['si_sdr']:8.2f}")
    return "\n".join(lines)


def cmd_export(args) -> int:
    from .bundle import export_bundle
    from .evaluation import default_theta_grid

    model, manifest = _load_for_eval(args)
    thetas = default_theta_grid() if args.thetas is None else [float(t) for t in args.thetas.split(",")]
    export_bundle(
        model,
        args.dataset,
        manifest,
        args.track,
        args.out,
        thetas=thetas,
        mc_passes=args.mc_passes,
        mc_seed=args.seed or 0,
        ui_dir=args.ui_dir,
    )
    print(f"bundle: {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .bundle import serve

    print(f"serving {args.bundle} on http://{args.host}:{args.port} (ctrl-c to stop)")
    serve(args.bundle, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypersep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate the synthetic hierarchical dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--tracks", type=int, default=200)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("train", help="train a separation model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="training-log path (default: <out>.log.json)")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--quiet", action="store_true")
    _add_run_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", dest="report_mode", default="report",
                   choices=["report", "threshold-sweep", "certainty-compare", "curvature-dim-grid"])
    p.add_argument("--out", required=True)
    p.add_argument("--passes", type=int, default=1000, help="MC-dropout passes (certainty-compare)")
    p.add_argument("--grid", default="0.1:2,1.0:2,0.1:16,1.0:16,0.1:128,1.0:128",
                   help="curvature:dim pairs (curvature-dim-grid)")
    p.add_argument("--grid-epochs", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export", help="export an interactive explorer bundle for one track")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--thetas", default=None, help="comma-separated grid (default 0.00..0.95)")
    p.add_argument("--mc-passes", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ui-dir", default=None, help="built UI assets to copy into the bundle")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("serve", help="serve a bundle read-only over HTTP")
    p.add_argument("--bundle", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AutodiffError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - map remaining domain errors
        from .bundle import BundleError
        from .checkpoint import CheckpointError
        from .data import DataError
        from .dsp import DspError
        from .model import ModelError
        from .objectives import ObjectiveError
        from .training import TrainingError

        if isinstance(exc, (TrainingError, FloatingPointError)):
            print(f"numeric error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, (DataError, DspError, CheckpointError, BundleError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(exc, (ModelError, ObjectiveError, ValueError)):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
