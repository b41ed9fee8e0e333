"""Command-line entry points.

Subcommands: fit-thresholds, train, eval-gaze, export, inspect, simulate,
sweep. Machine-readable output (JSON/CSV) goes to stdout or files; human
progress text goes to stderr. Exit codes: 0 success, 2 config error,
3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dwn, model_io, training
from .errors import ConfigError, DataError, GlanceError, NumericsError, ParseError

SEED_ENV = "GLANCE_SEED"


def _msg(text: str) -> None:
    print(text, file=sys.stderr)


def _default_seed(args_seed) -> int | None:
    if args_seed is not None:
        return args_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return None


def _ensure_outdir(path) -> None:
    os.makedirs(path, exist_ok=True)


def _refuse_overwrite(path, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _config_from_args(args, seed: int) -> dwn.DwnConfig:
    cfg = dwn.DwnConfig(
        input_size=args.input_size, pool_k=args.pool_k, therm_bits=args.therm_bits,
        temperature=args.temperature, num_luts=args.num_luts, addr_bits=args.addr_bits,
        loss_lambda=args.loss_lambda, learning_rate=args.lr, weight_decay=args.weight_decay,
        grad_clip=args.grad_clip, batch_size=args.batch_size, seed=seed,
    )
    cfg.validate()
    return cfg


def _add_model_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-size", type=int, default=56)
    p.add_argument("--pool-k", type=int, default=4)
    p.add_argument("--therm-bits", type=int, default=4)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--num-luts", type=int, default=131)
    p.add_argument("--addr-bits", type=int, default=6)
    p.add_argument("--loss-lambda", type=float, default=0.3)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--grad-clip", type=float, default=5.0)
    p.add_argument("--batch-size", type=int, default=64)


# ---------------------------------------------------------------------------

def cmd_fit_thresholds(args) -> int:
    from .datasets import load_gaze_split

    seed = _default_seed(args.seed) or 0
    cfg = _config_from_args(args, seed)
    _refuse_overwrite(args.out, args.force)
    split = load_gaze_split(args.data, cfg.input_size, holdout=args.holdout, seed=seed)
    model = dwn.init_model(cfg)
    feats = dwn.preprocess(split.train_images, cfg.input_size, cfg.pool_k)
    model.thresholds = dwn.fit_thresholds(feats, cfg.therm_bits)
    activation = dwn.bit_activation(feats, model.thresholds)
    training.save_checkpoint(args.out, model, training.AdamState.for_model(model), epoch=0)
    _msg(f"fitted thresholds on {feats.shape[0]} samples -> {args.out}")
    print(json.dumps({
        "seed": seed,
        "samples": int(feats.shape[0]),
        "features": int(feats.shape[1]),
        "bit_activation": [round(float(a), 4) for a in activation],
        "expected_activation": [round(1.0 - k / (cfg.therm_bits + 1), 4)
                                for k in range(1, cfg.therm_bits + 1)],
        "degenerate_features": int(model.thresholds.degenerate.sum()),
        "checkpoint": str(args.out),
    }, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    from .datasets import load_gaze_split

    seed = _default_seed(args.seed) or 0
    _ensure_outdir(args.out_dir)
    model_path = os.path.join(args.out_dir, "model.npz")
    metrics_path = os.path.join(args.out_dir, "metrics.json")
    _refuse_overwrite(model_path, args.force or args.resume is not None)

    start_epoch = 0
    opt = None
    if args.resume:
        model, opt, start_epoch = training.load_checkpoint(args.resume)
        cfg = model.config
        _msg(f"resuming from {args.resume} at epoch {start_epoch}")
    else:
        cfg = _config_from_args(args, seed)
        model = dwn.init_model(cfg)

    split = load_gaze_split(args.data, cfg.input_size, holdout=args.holdout, seed=cfg.seed)
    if model.thresholds is None:
        feats = dwn.preprocess(split.train_images, cfg.input_size, cfg.pool_k)
        model.thresholds = dwn.fit_thresholds(feats, cfg.therm_bits)
        _msg(f"auto-fitted thresholds on {feats.shape[0]} training samples")

    init_err = training.evaluate_angular(model, split.val_images, split.val_targets)
    _msg(f"initial validation error: {init_err:.2f} deg "
         f"({split.val_images.shape[0]} val / {split.train_images.shape[0]} train samples)")

    best = {"err": None, "epoch": None}
    epoch_rows = []
    opt_state = opt if opt is not None else training.AdamState.for_model(model)

    def log(rec: training.EpochRecord) -> None:
        _msg(f"epoch {rec.epoch:3d} loss {rec.mean_loss:.5f} val {rec.val_error_deg:.2f} deg")
        epoch_rows.append([rec.epoch, rec.mean_loss, rec.val_error_deg])
        if best["err"] is None or rec.val_error_deg < best["err"]:
            best["err"] = rec.val_error_deg
            best["epoch"] = rec.epoch
            training.save_checkpoint(model_path, model, opt_state, rec.epoch + 1)

    model, history = training.fit(
        model, split.train_images, split.train_targets, epochs=args.epochs,
        val_images=split.val_images, val_targets=split.val_targets,
        opt=opt_state, start_epoch=start_epoch, log=log,
    )
    with open(os.path.join(args.out_dir, "epochs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "val_error_deg"])
        writer.writerows(epoch_rows)
    summary = {
        "seed": cfg.seed,
        "holdout": args.holdout,
        "epochs": args.epochs,
        "initial_val_error_deg": round(init_err, 4),
        "best_val_error_deg": round(best["err"], 4) if best["err"] is not None else None,
        "best_epoch": best["epoch"],
        "final_val_error_deg": round(history[-1].val_error_deg, 4) if history else None,
        "checkpoint": model_path,
    }
    with open(metrics_path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval_gaze(args) -> int:
    from .datasets import load_image, load_index

    model, _, _ = training.load_checkpoint(args.model)
    cfg = model.config
    index = load_index(args.data)
    images = np.stack(
        [load_image(os.path.join(args.data, p), cfg.input_size) for p in index.paths]
    )
    targets = np.stack([dwn.normalize_target(t) for t in index.targets])
    if args.subject:
        mask = np.array([s == args.subject for s in index.subjects])
        if not mask.any():
            raise DataError(f"subject {args.subject!r} not present in index.csv")
        images, targets = images[mask], targets[mask]
        subjects = [s for s in index.subjects if s == args.subject]
    else:
        subjects = index.subjects

    if images.shape[0] == 0:
        print(json.dumps({"mean_error_deg": None, "median_error_deg": None, "samples": 0}))
        return 0

    preds = dwn.infer_hard_batch(model, images)
    errs = dwn.angular_errors(preds, targets)
    per_subject = {}
    for s in sorted(set(subjects)):
        sel = np.array([x == s for x in subjects])
        per_subject[s] = {
            "mean_error_deg": round(float(errs[sel].mean()), 4),
            "samples": int(sel.sum()),
        }
    out = {
        "mean_error_deg": round(float(errs.mean()), 4),
        "median_error_deg": round(float(np.median(errs)), 4),
        "samples": int(errs.size),
        "per_subject": per_subject,
    }
    if args.quantized:
        qm = model_io.import_quantized(open(args.quantized, "rb").read())
        qpreds = dwn.infer_hard_batch(qm.dequantize(), images)
        qerrs = dwn.angular_errors(qpreds, targets)
        out["quantized"] = {
            "mean_error_deg": round(float(qerrs.mean()), 4),
            "degradation_deg": round(float(qerrs.mean() - errs.mean()), 4),
        }
    if args.out_dir:
        _ensure_outdir(args.out_dir)
        with open(os.path.join(args.out_dir, "eval.json"), "w") as fh:
            json.dump(out, fh, sort_keys=True, indent=2)
        with open(os.path.join(args.out_dir, "per_subject.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject", "mean_error_deg", "samples"])
            for s, row in sorted(per_subject.items()):
                writer.writerow([s, row["mean_error_deg"], row["samples"]])
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_export(args) -> int:
    model, _, _ = training.load_checkpoint(args.model)
    _refuse_overwrite(args.out, args.force)
    blob = model_io.export_quantized(model)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    cfg = model.config
    out = {
        "file": str(args.out),
        "total_bytes": len(blob),
        "header_bytes": model_io.header_bytes(cfg),
        "payload_bytes": model_io.payload_bytes(cfg),
    }
    _msg(f"exported {args.out}: {out['payload_bytes']} payload bytes")
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    with open(args.file, "rb") as fh:
        blob = fh.read()
    qm = model_io.import_quantized(blob)
    cfg = qm.config
    cx = dwn.count_complexity(cfg)
    print(json.dumps({
        "magic": model_io.MAGIC.decode(),
        "version": model_io.VERSION,
        "input_size": cfg.input_size,
        "pool_k": cfg.pool_k,
        "therm_bits": cfg.therm_bits,
        "addr_bits": cfg.addr_bits,
        "num_luts": cfg.num_luts,
        "num_features": cfg.num_features,
        "seed": cfg.seed,
        "payload_bytes": model_io.payload_bytes(cfg),
        "header_bytes": model_io.header_bytes(cfg),
        "params": cx.params,
        "macs": cx.macs,
        "lookups": cx.lookups,
    }, sort_keys=True))
    return 0


def _write_report(out_dir, report, force: bool) -> None:
    report_path = os.path.join(out_dir, "report.json")
    trace_path = os.path.join(out_dir, "trace.jsonl")
    _refuse_overwrite(report_path, force)
    with open(report_path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    with open(trace_path, "w") as fh:
        for rec in report.trace:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True))
            fh.write("\n")


def cmd_simulate(args) -> int:
    from .simconfig import load_sim_config
    from .simulate import run_sequence

    bundle = load_sim_config(args.config, seed_override=_default_seed(args.seed))
    _ensure_outdir(args.out_dir)
    detector = bundle.make_detector(workdir=os.path.join(args.out_dir, "detector_io"))
    report = run_sequence(bundle.frames, bundle.gaze_source, detector, bundle.sim)
    _write_report(args.out_dir, report, args.force)
    with open(os.path.join(args.out_dir, "table.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stratum", "accuracy", "gt_count"])
        for s in ("small", "medium", "large", "all"):
            a = report.accuracy[s]
            n = report.gt_counts[s] if s != "all" else sum(report.gt_counts.values())
            writer.writerow([s, "" if a is None else round(a, 4), n])
    if args.plot:
        from .svgplot import line_chart

        pts = [(rec.t, rec.mosaic_area or 0) for rec in report.trace]
        line_chart({"mosaic area": pts}, "Processed area per frame", "frame",
                   "pixels", os.path.join(args.out_dir, "area.svg"))
    _msg(f"simulated {report.frames} frames, {report.refresh_count} refreshes -> {args.out_dir}")
    print(report.to_json())
    return 0


def cmd_sweep(args) -> int:
    from .simconfig import load_sim_config
    from .simulate import STRATA, sweep, sweep_table_rows

    bundle = load_sim_config(args.config, seed_override=_default_seed(args.seed))
    _ensure_outdir(args.out_dir)
    sides = [int(s) for s in args.sides.split(",")]
    counts = [int(n) for n in args.counts.split(",")]
    detector = bundle.make_detector(workdir=os.path.join(args.out_dir, "detector_io"))
    result = sweep(bundle.frames, bundle.gaze_source, detector, bundle.sim,
                   sides=sides, counts=counts)
    table_path = os.path.join(args.out_dir, "table.csv")
    _refuse_overwrite(table_path, args.force)
    rows = sweep_table_rows(result)
    with open(table_path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    summary = {
        "seed": bundle.sim.seed,
        "sides": result["sides"],
        "counts": result["counts"],
        "baseline_accuracy": result["baseline"].accuracy,
        "cells": {
            f"s{s}_n{n}": result["cells"][(s, n)].accuracy
            for s in result["sides"] for n in result["counts"]
        },
    }
    with open(os.path.join(args.out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    if args.plot:
        from .svgplot import line_chart

        for stratum in STRATA:
            series = {}
            for s in result["sides"]:
                pts = []
                for n in result["counts"]:
                    a = result["cells"][(s, n)].accuracy[stratum]
                    if a is not None:
                        pts.append((n, a))
                if pts:
                    series[f"side {s}"] = pts
            base = result["baseline"].accuracy[stratum]
            if base is not None:
                series["global"] = [(min(result["counts"]), base), (max(result["counts"]), base)]
            line_chart(series, f"Accuracy vs ROI count ({stratum})", "ROI count N",
                       "accuracy", os.path.join(args.out_dir, f"acc_{stratum}.svg"),
                       y_range=(0.0, 1.0))
    _msg(f"swept {len(sides)}x{len(counts)} cells -> {table_path}")
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glance",
        description="Gaze-driven ROI detection toolkit: train the lookup-table "
                    "gaze estimator, export quantized models, and simulate the "
                    "ROI pipeline with cost accounting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-thresholds", help="fit thermometer thresholds on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    _add_model_config_flags(p)
    p.set_defaults(func=cmd_fit_thresholds)

    p = sub.add_parser("train", help="train the gaze estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--holdout", default=None, help="leave-one-person-out subject id")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    _add_model_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-gaze", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subject", default=None, help="restrict evaluation to one subject")
    p.add_argument("--quantized", default=None, help=".dwn file for paired evaluation")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval_gaze)

    p = sub.add_parser("export", help="export a quantized .dwn model file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", help="dump a .dwn header and complexity counts")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("simulate", help="run the frame-sequence simulator")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="accuracy grid over ROI side and count")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sides", default="48,64,80")
    p.add_argument("--counts", default="1,2,3,4,5,10,15,20,25,30,40,50")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError,) as exc:
        _msg(f"config error: {exc}")
        return 2
    except (ParseError, DataError) as exc:
        _msg(f"data error: {exc}")
        return 3
    except NumericsError as exc:
        _msg(f"numerical abort: {exc}")
        return 4
    except GlanceError as exc:
        _msg(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
