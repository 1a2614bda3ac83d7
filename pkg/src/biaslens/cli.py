"""Command-line entry point.

Subcommands: `audit` (transform audit + crop probe, JSON/CSV report),
`transform` (materialize transformed dataset trees), `crop` (materialize
a cropped tree), `train` (single condition), `synth` (generate the
synthetic corpora), `report` (re-render an existing report's CSV).

Exit status: 0 success, 2 usage error, 1 runtime failure. The env var
BIASLENS_LOG controls log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import BiasLensError
from .cnn import ModelConfig, TrainConfig, init_model, save_model
from .cropper import Corner, CropSpec, crop_dataset
from .imgio import load_dataset, save_dataset, split_dataset, partition_items, Partition
from .metrics import render_summary_row
from .protocol import (AuditReport, run_transform_audit, _train_condition,
                       _fit_config_channels)
from .synth import (BiasSpec, SynthSpec, generate_shape_dataset,
                    inject_class_correlated_background)
from .transforms import (default_audit_transforms, format_transform,
                         parse_transform, parse_transform_list)

log = logging.getLogger("biaslens")


def _setup_logging():
    level = os.environ.get("BIASLENS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _transform_list_arg(text: str):
    try:
        specs = parse_transform_list(text)
    except BiasLensError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not specs:
        raise argparse.ArgumentTypeError("empty transform list")
    return specs


def _transform_arg(text: str):
    try:
        return parse_transform(text)
    except BiasLensError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_model_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=40,
                   help="training epochs per condition (default 40)")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3,
                   help="Adam learning rate (default 1e-3)")
    p.add_argument("--seed", type=int, default=0,
                   help="data seed: split + shuffle order (default 0)")
    p.add_argument("--model-seed", type=int, default=0,
                   help="weight initialization seed (default 0)")
    p.add_argument("--input-size", type=int, default=64,
                   help="square network input resolution (default 64)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biaslens",
        description="Audit image-classification datasets for hidden "
                    "background bias.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_audit = sub.add_parser("audit", help="run the transform audit and "
                                           "crop probe, write a report")
    p_audit.add_argument("--data", required=True, help="dataset root")
    p_audit.add_argument("--out", required=True, help="output directory")
    p_audit.add_argument("--transforms", type=_transform_list_arg,
                         default=default_audit_transforms(),
                         help="comma list, e.g. "
                              "fourier,wavelet:haar,median:5,"
                              "median:5+wavelet:haar (the default)")
    p_audit.add_argument("--corner", choices=[c.value for c in Corner],
                         default="tl")
    p_audit.add_argument("--crop-size", type=int, default=20)
    p_audit.add_argument("--tolerance-pp", type=float, default=2.0,
                         help="'similar accuracy' tolerance in percentage "
                              "points (default 2)")
    p_audit.add_argument("--confidence", type=float, default=0.99,
                         help="crop-probe binomial confidence (default 0.99)")
    p_audit.add_argument("--include-fourier-in-rule", action="store_true")
    p_audit.add_argument("--jobs", type=int, default=1,
                         help="concurrent condition trainings (default 1)")
    p_audit.add_argument("--force", action="store_true",
                         help="allow overwriting an existing report")
    _add_model_train_flags(p_audit)
    p_audit.set_defaults(func=_cmd_audit)

    p_tr = sub.add_parser("transform", help="write transformed PNG mirrors "
                                            "of a dataset")
    p_tr.add_argument("--data", required=True)
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--transforms", type=_transform_list_arg, required=True)
    p_tr.add_argument("--force", action="store_true")
    p_tr.set_defaults(func=_cmd_transform)

    p_crop = sub.add_parser("crop", help="write a corner-cropped PNG mirror")
    p_crop.add_argument("--data", required=True)
    p_crop.add_argument("--out", required=True)
    p_crop.add_argument("--corner", choices=[c.value for c in Corner],
                        default="tl")
    p_crop.add_argument("--crop-size", type=int, default=20)
    p_crop.add_argument("--force", action="store_true")
    p_crop.set_defaults(func=_cmd_crop)

    p_train = sub.add_parser("train", help="train one condition and write "
                                           "a checkpoint plus metrics")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--transform", type=_transform_arg,
                         default=parse_transform("identity"))
    p_train.add_argument("--force", action="store_true")
    _add_model_train_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_synth = sub.add_parser("synth", help="generate the synthetic unbiased "
                                           "and biased corpora")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--samples-per-class", type=int, default=40)
    p_synth.add_argument("--size", type=int, default=64)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--bias-amplitude", type=float, default=0.04)
    p_synth.add_argument("--bias-pattern", default="fixed-high-frequency",
                         choices=["fixed-high-frequency", "corner-offset"])
    p_synth.add_argument("--bias-seed", type=int, default=0)
    p_synth.add_argument("--force", action="store_true")
    p_synth.set_defaults(func=_cmd_synth)

    p_rep = sub.add_parser("report", help="re-render the CSV of an existing "
                                          "report.json")
    p_rep.add_argument("--report", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--force", action="store_true")
    p_rep.set_defaults(func=_cmd_report)

    return parser


# ---------------------------------------------------------------------------
# Report serialization


def report_json_text(report_dict: dict) -> str:
    return json.dumps(report_dict, indent=2, sort_keys=True) + "\n"


def report_csv_text(report_dict: dict) -> str:
    """One row per condition, plus a crop-probe row when present."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "transform", "accuracy", "macro_precision",
                     "macro_recall", "macro_f1", "delta_pp", "flag"])
    for cond in report_dict["conditions"]:
        writer.writerow([cond["name"], cond["transform"], cond["accuracy"],
                         cond["macro_precision"], cond["macro_recall"],
                         cond["macro_f1"], cond["delta_pp"], cond["flag"]])
    probe = report_dict.get("crop_probe")
    if probe is not None:
        writer.writerow(["crop_probe", "", probe["accuracy"], "", "", "",
                         "", probe["flag"]])
    return buf.getvalue()


def _config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def _report_paths(out_dir: Path, config: dict, force: bool):
    """Never overwrite: fall back to config-hash names when report.json
    is already taken by a different run."""
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    if json_path.exists() and not force:
        h = _config_hash(config)
        json_path = out_dir / f"report-{h}.json"
        csv_path = out_dir / f"report-{h}.csv"
        if json_path.exists():
            raise BiasLensError(
                f"{json_path} already exists for this config; pass --force "
                "to overwrite")
    return json_path, csv_path


def write_report(report: AuditReport, out_dir, force: bool = False) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = report.to_json_dict()
    json_path, csv_path = _report_paths(out_dir, d["config"], force)
    json_path.write_text(report_json_text(d))
    csv_path.write_text(report_csv_text(d))
    return json_path


# ---------------------------------------------------------------------------
# Subcommands


def _model_config(args, ds) -> ModelConfig:
    mc = ModelConfig(input_h=args.input_size, input_w=args.input_size,
                     input_c=ds.images[0].shape[2],
                     num_classes=ds.num_classes)
    return mc


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, seed=args.seed)


def _cmd_audit(args) -> int:
    ds = load_dataset(args.data)
    mc = _model_config(args, ds)
    tc = _train_config(args)
    crop = CropSpec(corner=Corner(args.corner), size=args.crop_size)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        "command": "audit",
        "data": str(args.data),
        "model": asdict(mc),
        "train": asdict(tc),
        "transforms": [format_transform(t) for t in args.transforms],
        "crop": {"corner": args.corner, "size": args.crop_size},
        "tolerance_pp": args.tolerance_pp,
        "confidence": args.confidence,
        "data_seed": args.seed,
        "model_seed": args.model_seed,
        "include_fourier_in_rule": args.include_fourier_in_rule,
        "jobs": args.jobs,
        "version": __version__,
    }
    # pin the resolved config to disk before any training starts
    (out_dir / "config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    try:
        report = run_transform_audit(
            ds, args.transforms, mc, tc, tolerance_pp=args.tolerance_pp,
            data_seed=args.seed, model_seed=args.model_seed,
            confidence=args.confidence,
            include_fourier=args.include_fourier_in_rule, crop=crop,
            dataset_id=Path(args.data).name, jobs=args.jobs)
    except Exception:
        (out_dir / "report.partial.json").write_text(
            json.dumps({"config": resolved, "status": "FAILED"},
                       indent=2, sort_keys=True) + "\n")
        raise
    report.timestamp = datetime.now(timezone.utc).isoformat()
    path = write_report(report, out_dir, force=args.force)
    for cond in report.conditions:
        print(f"{cond.name}: {render_summary_row(cond.metrics)} "
              f"[{cond.flag}]")
    probe = report.crop_probe
    if probe is not None and probe.status == "OK":
        print(f"crop_probe: accuracy {probe.accuracy:.4f} vs threshold "
              f"{probe.threshold:.4f} (chance {probe.chance:.4f}) "
              f"[{probe.flag}]")
    elif probe is not None:
        print(f"crop_probe: skipped ({probe.message})")
    print(f"report written to {path}")
    return 0


def _cmd_transform(args) -> int:
    ds = load_dataset(args.data)
    from .transforms import apply_transform
    for spec in args.transforms:
        name = format_transform(spec).replace(":", "_").replace("+", "_")
        out = Path(args.out) / name
        images = [apply_transform(spec, img) for img in ds.images]
        mirrored = type(ds)(images=images, labels=list(ds.labels),
                            class_names=list(ds.class_names),
                            paths=list(ds.paths))
        save_dataset(mirrored, out, force=args.force)
        print(f"{name}: wrote {len(images)} images to {out}")
    return 0


def _cmd_crop(args) -> int:
    ds = load_dataset(args.data)
    spec = CropSpec(corner=Corner(args.corner), size=args.crop_size)
    cropped = crop_dataset(ds, spec)
    save_dataset(cropped, args.out, force=args.force)
    print(f"wrote {len(cropped)} cropped images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    mc = _fit_config_channels(_model_config(args, ds), ds)
    tc = _train_config(args)
    manifest = split_dataset(ds, (0.70, 0.15, 0.15), args.seed)
    model, metrics, history = _train_condition(
        ds, manifest, args.transform, mc, tc, args.model_seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, out_dir / "model.bin")
    result = {
        "transform": format_transform(args.transform),
        "metrics": metrics.to_json_dict(),
        "history": history,
        "config": {"model": asdict(mc), "train": asdict(tc),
                   "data_seed": args.seed, "model_seed": args.model_seed},
    }
    (out_dir / "metrics.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(render_summary_row(metrics))
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes,
                     samples_per_class=args.samples_per_class,
                     image_size=args.size, seed=args.seed)
    clean = generate_shape_dataset(spec)
    out = Path(args.out)
    save_dataset(clean, out / "unbiased", force=args.force)
    bias = BiasSpec(amplitude=args.bias_amplitude,
                    pattern_kind=args.bias_pattern, seed=args.bias_seed)
    biased = inject_class_correlated_background(clean, bias)
    save_dataset(biased, out / "biased", force=args.force)
    print(f"wrote {len(clean)} images each to {out / 'unbiased'} and "
          f"{out / 'biased'}")
    return 0


def _cmd_report(args) -> int:
    d = json.loads(Path(args.report).read_text())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    if csv_path.exists() and not args.force:
        raise BiasLensError(f"{csv_path} exists; pass --force to overwrite")
    csv_path.write_text(report_csv_text(d))
    print(f"re-rendered CSV at {csv_path}")
    return 0


def run_command(argv) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except BiasLensError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": f"I/O failure: {exc}"}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
