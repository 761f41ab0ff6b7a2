"""Command-line interface for the batch research workflow.

Subcommands: gen-data, train, eval, ablate, profile, dump-gates, grad-check.
Exit codes: 0 success, 1 usage error, 2 numeric fault, 3 I/O error. All
outputs are machine readable (JSON / JSON lines / CSV); plotting is left to
external tools. MASC_THREADS caps data-generation parallelism (default 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .errors import FileFormatError, MascError, NumericError, ParameterError, ShapeError
from .model import ModelConfig, PoseLiftModel
from .profiler import count
from .skeleton import GROUPS
from .synth import DatasetManifest, generate_dataset, load_dataset
from .train import (
    ABLATION_VARIANTS,
    TrainConfig,
    ablation_run,
    ablation_table,
    evaluate,
    predict_mm,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _info(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mascpose", description=__doc__)
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize a synthetic dataset from a manifest")
    p.add_argument("manifest", help="dataset manifest JSON")
    p.add_argument("out_dir", help="output directory for .pseq pairs")
    p.add_argument("--seed", type=int, default=None, help="override the manifest seed")

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--train-config", required=True, help="training config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for logs and checkpoints")
    p.add_argument("--seed", type=int, default=None, help="override the training seed")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="write the metric report JSON here (default: stdout)")

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--variant", default="all", choices=sorted(ABLATION_VARIANTS) + ["all"])
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--train-config", required=True, help="training config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="write comparison rows as JSON here")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("profile", help="analytic parameter and MAC counts for a config")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--out", default=None, help="write the cost report JSON here (default: stdout)")
    p.add_argument("--table", action="store_true", help="print an aligned text table instead of JSON")

    p = sub.add_parser("dump-gates", help="per-body-group average temporal scale weights (CSV)")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="write the CSV here (default: stdout)")

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--config", default=None, help="model config JSON (default: built-in toy config)")
    p.add_argument("--samples", type=int, default=20, help="sampled parameter entries for the model check")
    p.add_argument("--tolerance", type=float, default=gradcheck.MODEL_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)

    return parser


def cmd_gen_data(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    if args.seed is not None:
        manifest.seed = args.seed
    threads = int(os.environ.get("MASC_THREADS", "1"))
    paths = generate_dataset(manifest, args.out_dir, threads=max(threads, 1))
    _info(args, f"wrote {len(paths)} sequence pairs to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ModelConfig.load(args.config)
    tcfg = TrainConfig.load(args.train_config)
    if args.seed is not None:
        tcfg.seed = args.seed
    pairs = load_dataset(args.data)
    model = PoseLiftModel(cfg, seed=tcfg.seed)
    result = train(model, tcfg, pairs, out_dir=args.out)
    _info(
        args,
        f"trained {result.steps} steps: MPJPE {result.initial_mpjpe_mm:.2f} -> "
        f"{result.final_mpjpe_mm:.2f} mm; checkpoint at {result.checkpoint_path}",
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    model = PoseLiftModel.load(args.checkpoint)
    pairs = load_dataset(args.data)
    report = evaluate(model, pairs)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        _info(args, f"wrote metric report to {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = ModelConfig.load(args.config)
    tcfg = TrainConfig.load(args.train_config)
    if args.seed is not None:
        tcfg.seed = args.seed
    pairs = load_dataset(args.data)
    variants = sorted(ABLATION_VARIANTS) if args.variant == "all" else [args.variant]
    order = ["baseline", "only_amtm", "only_sagcn", "no_adaptive_agg", "no_multiscale_fusion", "full"]
    variants = [v for v in order if v in variants]
    rows = [ablation_run(v, cfg, tcfg, pairs) for v in variants]
    print(ablation_table(rows))
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = ModelConfig.load(args.config)
    report = count(cfg)
    text = report.to_table() if args.table else report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        _info(args, f"wrote cost report to {args.out}")
    else:
        print(text)
    return EXIT_OK


def gate_weight_rows(model: PoseLiftModel, pairs) -> list[tuple[str, float, float, float]]:
    """Average per-joint scale weights over the dataset, grouped by body part."""
    joint_weights = np.zeros((model.cfg.num_joints, 3))
    samples = 0
    for x2d, *_ in pairs:
        collect: dict = {}
        predict_mm(model, x2d, collect=collect)
        per_layer = collect.get("selector_weights", {})
        for w in per_layer.values():
            if w is None:
                w = np.full((model.cfg.num_joints, 3), 1.0 / 3.0)
            joint_weights += w
            samples += 1
    if samples == 0:
        joint_weights = np.full((model.cfg.num_joints, 3), 1.0 / 3.0)
        samples = 1
    joint_weights /= samples
    rows = []
    groups = model.topo.groups or {}
    for group in GROUPS:
        members = groups.get(group)
        if not members:
            raise ParameterError(f"topology does not define body group {group!r}")
        mean_w = joint_weights[members].mean(axis=0)
        rows.append((group, float(mean_w[0]), float(mean_w[1]), float(mean_w[2])))
    return rows


def cmd_dump_gates(args) -> int:
    model = PoseLiftModel.load(args.checkpoint)
    pairs = load_dataset(args.data)
    rows = gate_weight_rows(model, pairs)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "w_short", "w_med", "w_long"])
    for group, ws, wm, wl in rows:
        writer.writerow([group, f"{ws:.12g}", f"{wm:.12g}", f"{wl:.12g}"])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        _info(args, f"wrote gate weights to {args.out}")
    else:
        print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else None
    op_report = gradcheck.check_ops(seed=args.seed)
    model_report = gradcheck.check_model(cfg, num_samples=args.samples, seed=args.seed)
    print(f"ops:   {op_report.summary(gradcheck.OP_TOLERANCE)}")
    print(f"model: {model_report.summary(args.tolerance)}")
    ok = op_report.passed(gradcheck.OP_TOLERANCE) and model_report.passed(args.tolerance)
    if not ok:
        worst = max([op_report.worst, model_report.worst], key=lambda e: e.rel_err)
        print(f"worst offender: {worst.name} rel_err={worst.rel_err:.3e}")
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "profile": cmd_profile,
    "dump-gates": cmd_dump_gates,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, OSError, FileFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, ShapeError, MascError, json.JSONDecodeError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
