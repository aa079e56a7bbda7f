"""Command-line entry point for data generation, training, evaluation and reports."""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data as datamod
from . import metrics as metricsmod
from .network import load_checkpoint, save_checkpoint, save_mlp_checkpoint
from .optimizer import LOG_FIELDS, TrainingConfig, gradient_check, train, train_baseline

OUTPUT_ROOT_ENV = "QEMBED_RUNS"

# regularizer weights mirrored by the sensitivity sweep
LAMBDA_PRESETS = (0.0, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)

# desk-scale defaults used by sweep-noise; tuned so a full sweep stays fast
SWEEP_CONFIG = dict(
    epochs=60,
    base_lr=0.002,
    hidden_backbone=(64,),
    d_quality=4,
    tau_scale=5e-3,
    tau_floor=0.5,
    rho_scale=5e-3,
    rho_floor=0.5,
)


def _out_dir(path):
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    full = path if os.path.isabs(path) else os.path.join(root, path)
    os.makedirs(full, exist_ok=True)
    return full


def _write_loss_log(path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        writer.writerows(log)


def _config_from_args(args):
    return TrainingConfig(
        lam=args.lam,
        d_quality=args.d,
        batch_size=args.batch_size,
        epochs=args.epochs,
        base_lr=args.lr,
        tau_scale=args.tau_scale,
        tau_floor=args.tau_floor,
        rho_scale=args.rho_scale,
        rho_floor=args.rho_floor,
        seed=args.seed,
        hidden_backbone=tuple(int(h) for h in args.hidden.split(",")),
    )


def _add_train_flags(p):
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--lambda-preset", type=int, default=None,
                   help="index into the preset grid %s" % (LAMBDA_PRESETS,))
    p.add_argument("--epochs", type=int, default=90)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--d", type=int, default=4, help="quality-variable dimension")
    p.add_argument("--hidden", default="64,64", help="backbone widths, comma-separated")
    p.add_argument("--tau-scale", type=float, default=3e-5)
    p.add_argument("--tau-floor", type=float, default=0.5)
    p.add_argument("--rho-scale", type=float, default=3e-5)
    p.add_argument("--rho-floor", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def cmd_gen_data(args):
    out = args.out
    ds = datamod.gen_synthetic(args.k, args.f, args.per_class, args.spread, args.seed)
    if args.pnoise > 0 or args.flags:
        ds = datamod.corrupt_labels(
            ds, datamod.NoiseConfig(args.pnoise, seed=args.seed + 1)
        )
    datamod.save_dataset(out, ds)
    datamod.write_manifest(
        out + ".manifest.json",
        {
            "k": args.k, "f": args.f, "per_class": args.per_class,
            "spread": args.spread, "p_noise": args.pnoise, "seed": args.seed,
        },
    )
    print("wrote %s (%d rows)" % (out, ds.n_items))
    return 0


def _run_training(args, trainer, checkpoint_saver, kind):
    if args.lambda_preset is not None:
        args.lam = LAMBDA_PRESETS[args.lambda_preset]
    run_dir = _out_dir(args.out)
    ds = datamod.load_dataset(args.data)
    config = _config_from_args(args)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump({"kind": kind, "data": args.data, **config.to_dict()}, fh, indent=2)
    model, log = trainer(ds, config)
    _write_loss_log(os.path.join(run_dir, "loss.csv"), log)
    checkpoint_saver(
        os.path.join(run_dir, "checkpoint.npz"), model,
        seed=config.seed, config=config.to_dict(),
    )
    print("trained %s for %d epochs; outputs in %s" % (kind, config.epochs, run_dir))
    return 0


def cmd_train(args):
    return _run_training(args, train, save_checkpoint, "full")


def cmd_train_baseline(args):
    return _run_training(args, train_baseline, save_mlp_checkpoint, "baseline")


def _classifier_from_checkpoint(path):
    if os.path.isdir(path):
        path = os.path.join(path, "checkpoint.npz")
    loaded, manifest = load_checkpoint(path)
    if manifest.get("kind") == "baseline":
        return loaded, loaded, manifest
    return loaded, loaded.classifier, manifest


def cmd_eval(args):
    model, classifier, _ = _classifier_from_checkpoint(args.checkpoint)
    ds = datamod.load_dataset(args.data)
    result = metricsmod.evaluate(classifier, ds)
    out = args.out or (
        os.path.join(args.checkpoint, "metrics.csv")
        if os.path.isdir(args.checkpoint)
        else "metrics.csv"
    )
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["map", "%.17g" % result["map"]])
        writer.writerow(["accuracy", "%.17g" % result["accuracy"]])
        for i, ap in enumerate(result["per_class_ap"]):
            writer.writerow(["ap_c%d" % i, "%.17g" % ap])
    print("mAP %.4f accuracy %.4f -> %s" % (result["map"], result["accuracy"], out))
    return 0


def cmd_gradcheck(args):
    report = gradient_check(tol=args.tol, seed=args.seed)
    for group in ("backbone", "additive", "contrastive", "decoder", "classifier"):
        print("%-12s max rel err %.3e" % (group, report[group]))
    print("gradcheck %s (tol %g)" % ("PASS" if report["pass"] else "FAIL", args.tol))
    return 0 if report["pass"] else 1


def sweep_cell(p_noise, seed, k=4, f=8, spread=1.0, config_overrides=None):
    """Train the full model and the baseline on one corrupted dataset; return rows."""
    train_ds = datamod.gen_synthetic(k, f, 250, spread, seed)
    test_ds = datamod.gen_synthetic(k, f, 100, spread, seed + 1000)
    noisy = datamod.corrupt_labels(
        train_ds, datamod.NoiseConfig(p_noise, seed=seed + 2000)
    )
    cfg_kwargs = dict(SWEEP_CONFIG)
    cfg_kwargs.update(config_overrides or {})
    config = TrainingConfig(seed=seed, **cfg_kwargs)
    rows = []
    model, _ = train(noisy, config)
    res = metricsmod.evaluate(model.classifier, test_ds)
    rows.append((p_noise, seed, "qe", res["map"], res["accuracy"]))
    net, _ = train_baseline(noisy, config)
    res = metricsmod.evaluate(net, test_ds)
    rows.append((p_noise, seed, "baseline", res["map"], res["accuracy"]))
    return rows


def cmd_sweep_noise(args):
    run_dir = _out_dir(args.out)
    levels = [float(v) for v in args.pnoise.split(",")]
    rows = []
    for p_noise in levels:
        for seed in range(args.seeds):
            rows.extend(sweep_cell(p_noise, seed, k=args.k, f=args.f,
                                   spread=args.spread))
            print("p_noise %.2f seed %d done" % (p_noise, seed))
    out_csv = os.path.join(run_dir, "sweep.csv")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p_noise", "seed", "model", "map", "accuracy"])
        for r in rows:
            writer.writerow([r[0], r[1], r[2], "%.17g" % r[3], "%.17g" % r[4]])
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump({"pnoise": levels, "seeds": args.seeds, "k": args.k,
                   "f": args.f, "spread": args.spread, **SWEEP_CONFIG,
                   "hidden_backbone": list(SWEEP_CONFIG["hidden_backbone"])}, fh,
                  indent=2)
    print("wrote %s (%d rows)" % (out_csv, len(rows)))
    return 0


def cmd_export_diag(args):
    model, _, manifest = _classifier_from_checkpoint(args.checkpoint)
    if manifest.get("kind") == "baseline":
        print("export-diag needs a full-model checkpoint", file=sys.stderr)
        return 1
    ds = datamod.load_dataset(args.data)
    out = args.out or (
        os.path.join(args.checkpoint, "diagnostics")
        if os.path.isdir(args.checkpoint)
        else "diagnostics"
    )
    metricsmod.export_diagnostics(model, ds, out, seed=args.seed)
    print("diagnostics written to %s" % out)
    return 0


def cmd_report(args):
    from .report import render_run

    written = render_run(args.run, args.out)
    for p in written:
        print("figure: %s" % p)
    if not written:
        print("no renderable CSVs found in %s" % args.run, file=sys.stderr)
        return 1
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qembed",
        description="Quality-embedding classifier training on noisy labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--f", type=int, default=8)
    p.add_argument("--per-class", type=int, default=250)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--pnoise", type=float, default=0.0)
    p.add_argument("--flags", action="store_true",
                   help="emit corruption flags even at pnoise 0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the full model")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-baseline", help="train the plain classifier baseline")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("eval", help="score a checkpoint against clean labels")
    p.add_argument("--checkpoint", required=True, help="run dir or .npz path")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep-noise", help="corruption-level model comparison grid")
    p.add_argument("--pnoise", default="0,0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--f", type=int, default=8)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_noise)

    p = sub.add_parser("export-diag", help="export embedding/transition diagnostics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_diag)

    p = sub.add_parser("report", help="render figures from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
