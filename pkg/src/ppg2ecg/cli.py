"""Command-line pipeline driver.

One command per pipeline step: data synthesis, reconstructor/classifier
training, inference, evaluation, the fixed-patch ablation, gradient checks,
and attention-map export. Every command writes its resolved config (with
hash) and a report beside its primary artifacts; reruns with identical
config, seed, and inputs are byte-identical except for wall-clock fields.

Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .classifier import (
    ABLATION_VARIANTS,
    ClassifierConfig,
    MultimodalModel,
    ablation_run,
    classify,
    format_ablation_table,
    predict_labels,
    train_classifier,
)
from .config import CLASSIFIER_DEPTH, RunConfig, config_hash, load_config, model_hash, write_resolved
from .errors import ConfigError, InputError, NumericError, ParameterError
from .gradsuite import run_full_suite, suite_passes, tolerance_for
from .metrics import accuracy, confusion_matrix, rmse
from .model import ReconstructorModel, attention_rows, extract_attention, reconstruct, train_reconstructor
from .preprocessing import preprocess_record, read_signal_csv, windows_to_array, write_signal_csv
from .synth import SynthParams, assemble, generate_recordings, write_manifest


# ---------------------------------------------------------------------------
# shared helpers


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    fixed = getattr(args, "fixed_patch", None)
    if fixed is not None:
        try:
            cfg = replace(cfg, model=cfg.model.fixed_patch_variant(fixed))
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _base_params(cfg: RunConfig) -> SynthParams:
    return SynthParams(
        heart_rate_bpm=cfg.data.heart_rate_bpm,
        noise_std=cfg.data.noise_std,
        seed=cfg.train.seed,
    )


def _synth_recordings(cfg: RunConfig):
    return generate_recordings(
        cfg.data.subjects,
        cfg.data.duration_s,
        base=_base_params(cfg),
        n_classes=cfg.data.classes,
        label_names=list(cfg.task.labels) if cfg.task.labels else None,
        seed=cfg.train.seed,
    )


def _csv_recordings(cfg: RunConfig):
    if not cfg.data.dir:
        raise ConfigError("[data] dir must point at a recording directory when source = csv")
    index_path = os.path.join(cfg.data.dir, "recordings.csv")
    labels = {}
    if os.path.exists(index_path):
        with open(index_path, newline="") as fh:
            for row in csv.DictReader(fh):
                labels[row["file"]] = row.get("label") or None
        files = sorted(labels)
    else:
        files = sorted(
            os.path.basename(p)
            for p in glob.glob(os.path.join(cfg.data.dir, "*.csv"))
            if os.path.basename(p) != "recordings.csv"
        )
    if not files:
        raise InputError(f"no recordings found under {cfg.data.dir}")
    recordings = []
    for name in files:
        records = read_signal_csv(os.path.join(cfg.data.dir, name), hz=cfg.data.hz)
        label = labels.get(name)
        if label is not None:
            records = {ch: replace(rec, label=label) for ch, rec in records.items()}
        recordings.append(records)
    return recordings


def _dataset(cfg: RunConfig):
    recs = _synth_recordings(cfg) if cfg.data.source == "synth" else _csv_recordings(cfg)
    return assemble(recs, fractions=cfg.data.split, seed=cfg.train.seed)


def _clf_config(cfg: RunConfig, modalities=("ppg", "ecg")) -> ClassifierConfig:
    if len(cfg.task.labels) < 2:
        raise ConfigError("classification needs [data] classes = 2 or 4 (or explicit labels)")
    return ClassifierConfig(
        labels=cfg.task.labels,
        modalities=modalities,
        d_model=cfg.model.d_model,
        heads=cfg.model.heads,
        depth=CLASSIFIER_DEPTH,
        stem_channels=cfg.model.stem_channels,
        stem_kernel=cfg.model.stem_kernel,
        mlp_ratio=cfg.model.mlp_ratio,
    )


def _clf_hash(clf_cfg: ClassifierConfig) -> str:
    text = "\n".join(
        f"{k} = {getattr(clf_cfg, k)}"
        for k in (
            "labels",
            "modalities",
            "d_model",
            "heads",
            "depth",
            "patch_size",
            "stem_channels",
            "stem_kernel",
            "mlp_ratio",
            "shifted",
        )
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_recon(cfg: RunConfig, ckpt_dir) -> ReconstructorModel:
    meta, _ = read_manifest(ckpt_dir)
    model = ReconstructorModel.build(cfg.model, seed=cfg.train.seed)
    load_checkpoint(ckpt_dir, model.params, expected_config_hash=model_hash(cfg))
    model.seed = int(meta.get("seed", cfg.train.seed))
    return model


def _load_clf(clf_cfg: ClassifierConfig, ckpt_dir, seed) -> MultimodalModel:
    model = MultimodalModel.build(clf_cfg, seed=seed)
    load_checkpoint(ckpt_dir, model.params, expected_config_hash=_clf_hash(clf_cfg))
    return model


def _write_report(out_dir, task, cfg: RunConfig, metrics: dict, t0) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.txt")
    lines = [
        f"task = {task}",
        f"config_hash = {config_hash(cfg)}",
        f"model_hash = {model_hash(cfg)}",
        f"seed = {cfg.train.seed}",
    ]
    for key in sorted(metrics):
        lines.append(f"{key} = {metrics[key]}")
    lines.append(f"wall_clock_s = {time.perf_counter() - t0:.3f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _write_loss_trace(out_dir, trace):
    with open(os.path.join(out_dir, "loss_trace.csv"), "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v!r}\n")


def _input_windows(args, cfg: RunConfig):
    hz = getattr(args, "hz", None) or cfg.data.hz
    records = read_signal_csv(args.input, hz=hz)
    if "ppg" not in records:
        raise InputError(f"{args.input}: no 'ppg' column; reconstruction starts from PPG")
    windows = preprocess_record(records["ppg"])
    if not windows:
        raise InputError(f"{args.input}: recording shorter than one 4 s window")
    return windows


def _split_metrics(ds, model):
    metrics = {}
    for split in ("train", "val", "test"):
        ppg, ecg, _ = ds.subset(split)
        if ppg.shape[0] == 0:
            continue
        pred = reconstruct(ppg, model)
        per_window = [rmse(p, t) for p, t in zip(pred, ecg)]
        metrics[f"rmse_{split}_mean"] = repr(float(np.mean(per_window)))
        metrics[f"rmse_{split}_std"] = repr(float(np.std(per_window)))
        metrics[f"n_{split}"] = str(len(per_window))
    return metrics


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    recordings = _synth_recordings(cfg)
    os.makedirs(args.out, exist_ok=True)
    index_rows = []
    for recs in recordings:
        sid = recs["ppg"].subject_id
        name = f"{sid}.csv"
        write_signal_csv(os.path.join(args.out, name), recs)
        index_rows.append((name, sid, recs["ppg"].label or ""))
    with open(os.path.join(args.out, "recordings.csv"), "w") as fh:
        fh.write("file,subject,label\n")
        for row in index_rows:
            fh.write(",".join(row) + "\n")
    ds = assemble(recordings, fractions=cfg.data.split, seed=cfg.train.seed)
    write_manifest(os.path.join(args.out, "windows.csv"), ds)
    write_resolved(args.out, cfg)
    _write_report(
        args.out,
        "synth",
        cfg,
        {"n_recordings": str(len(recordings)), "n_windows": str(len(ds))},
        t0,
    )
    print(f"wrote {len(recordings)} recordings and {len(ds)} window pairs to {args.out}")
    return 0


def cmd_train_recon(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    ds = _dataset(cfg)
    x, y, _ = ds.subset("train")
    if x.shape[0] == 0:
        raise InputError("training split is empty")
    model = ReconstructorModel.build(cfg.model, seed=cfg.train.seed)
    trace = train_reconstructor(x, y, model, cfg.train)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "ckpt"), model.params, model_hash(cfg), cfg.train.seed)
    _write_loss_trace(args.out, trace)
    write_resolved(args.out, cfg)
    metrics = _split_metrics(ds, model)
    metrics["final_loss"] = repr(trace[-1])
    metrics["epochs"] = str(len(trace))
    _write_report(args.out, "train-recon", cfg, metrics, t0)
    print(f"trained {len(trace)} epochs; final loss {trace[-1]:.4f}; checkpoint in {args.out}/ckpt")
    return 0


def cmd_evaluate(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    ds = _dataset(cfg)
    model = _load_recon(cfg, args.model)
    metrics = _split_metrics(ds, model)
    if not metrics:
        raise InputError("no non-empty splits to evaluate")
    write_resolved(args.out, cfg)
    path = _write_report(args.out, "evaluate", cfg, metrics, t0)
    for key in sorted(metrics):
        print(f"{key} = {metrics[key]}")
    print(f"report: {path}")
    return 0


def cmd_reconstruct(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    model = _load_recon(cfg, args.model)
    windows = _input_windows(args, cfg)
    values = windows_to_array(windows)
    pred = reconstruct(values, model)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "ecg_hat.csv")
    with open(out_path, "w") as fh:
        fh.write("window,sample,value\n")
        for wi in range(pred.shape[0]):
            for si in range(pred.shape[1]):
                fh.write(f"{wi},{si},{float(pred[wi, si])!r}\n")
    write_resolved(args.out, cfg)
    _write_report(args.out, "reconstruct", cfg, {"n_windows": str(pred.shape[0])}, t0)
    print(f"reconstructed {pred.shape[0]} windows -> {out_path}")
    return 0


def cmd_train_clf(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    clf_cfg = _clf_config(cfg)
    ds = _dataset(cfg)
    recon = _load_recon(cfg, args.recon)
    ppg_tr, _, y_tr = ds.subset("train")
    if ppg_tr.shape[0] == 0:
        raise InputError("training split is empty")
    hat_tr = reconstruct(ppg_tr, recon)
    model = MultimodalModel.build(clf_cfg, seed=cfg.train.seed)
    trace = train_classifier(
        (ppg_tr, hat_tr), y_tr, model, cfg.train, weight_classes=cfg.weight_classes
    )
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "ckpt"), model.params, _clf_hash(clf_cfg), cfg.train.seed)
    _write_loss_trace(args.out, trace)
    write_resolved(args.out, cfg)
    metrics = {"final_loss": repr(trace[-1]), "epochs": str(len(trace))}
    ppg_te, _, y_te = ds.subset("test")
    if ppg_te.shape[0] > 0:
        hat_te = reconstruct(ppg_te, recon)
        preds = predict_labels(model, ppg_te, hat_te)
        metrics["accuracy_test"] = repr(accuracy(preds, y_te))
        cm = confusion_matrix(preds, y_te, clf_cfg.labels)
        with open(os.path.join(args.out, "confusion.csv"), "w") as fh:
            fh.write("true," + ",".join(clf_cfg.labels) + "\n")
            for lab, row in zip(clf_cfg.labels, cm):
                fh.write(lab + "," + ",".join(repr(float(v)) for v in row) + "\n")
    _write_report(args.out, "train-clf", cfg, metrics, t0)
    print(f"trained classifier; final loss {trace[-1]:.4f}; checkpoint in {args.out}/ckpt")
    return 0


def cmd_classify(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    clf_cfg = _clf_config(cfg)
    recon = _load_recon(cfg, args.recon)
    model = _load_clf(clf_cfg, args.model, cfg.train.seed)
    windows = _input_windows(args, cfg)
    values = windows_to_array(windows)
    hat = reconstruct(values, recon)
    probs = classify(model, values, hat)
    preds = [clf_cfg.labels[i] for i in probs.argmax(axis=1)]
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "predictions.csv")
    with open(out_path, "w") as fh:
        fh.write("window,start,label," + ",".join(f"p_{lab}" for lab in clf_cfg.labels) + "\n")
        for wi, (w, lab) in enumerate(zip(windows, preds)):
            row = [str(wi), str(w.start), lab] + [repr(float(p)) for p in probs[wi]]
            fh.write(",".join(row) + "\n")
    write_resolved(args.out, cfg)
    _write_report(args.out, "classify", cfg, {"n_windows": str(len(preds))}, t0)
    print(f"classified {len(preds)} windows -> {out_path}")
    return 0


def cmd_ablation(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    clf_cfg = _clf_config(cfg)
    ds = _dataset(cfg)
    variants = tuple(v.strip() for v in args.variants.split(",")) if args.variants else ABLATION_VARIANTS
    recon = _load_recon(cfg, args.recon) if args.recon else None
    results = ablation_run(ds, variants, clf_cfg, cfg.train, recon_model=recon)
    os.makedirs(args.out, exist_ok=True)
    table = format_ablation_table(results, clf_cfg.labels)
    with open(os.path.join(args.out, "ablation.csv"), "w") as fh:
        fh.write(table)
    write_resolved(args.out, cfg)
    metrics = {
        f"acc_{variant}_{lab}": repr(acc)
        for variant, per_class in results.items()
        for lab, acc in per_class.items()
    }
    _write_report(args.out, "ablation", cfg, metrics, t0)
    print(table.strip())
    return 0


def cmd_gradcheck(args):
    cfg = _load_cfg(args)  # validates the config; the suite itself is config-free
    del cfg
    results = run_full_suite(cases_per_op=args.cases, seed=args.seed)
    worst = max(results.values())
    for name in sorted(results, key=lambda n: -results[n]):
        status = "ok" if results[name] < tolerance_for(name) else "FAIL"
        print(f"{status:4s} {name:45s} rel_err={results[name]:.3e} tol={tolerance_for(name):.0e}")
    print(f"worst relative error: {worst:.6e}")
    if not suite_passes(results) or worst > 1e-3:
        print("error: NumericError: gradient check failed", file=sys.stderr)
        return 3
    return 0


def cmd_attnmap(args):
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    model = _load_recon(cfg, args.model)
    windows = _input_windows(args, cfg)
    index = args.window
    if index < 0 or index >= len(windows):
        raise InputError(f"window index {index} out of range (have {len(windows)})")
    maps = extract_attention(model, windows[index], scope=args.scope)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "attention.csv")
    with open(out_path, "w") as fh:
        fh.write("stage,block,head,query,key,weight\n")
        for row in attention_rows(maps):
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    write_resolved(args.out, cfg)
    _write_report(args.out, "attnmap", cfg, {"n_maps": str(len(maps)), "scope": args.scope}, t0)
    print(f"wrote {len(maps)} attention maps -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ppg2ecg",
        description="PPG-to-ECG reconstruction and multimodal classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="run configuration file")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate synthetic paired recordings")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-recon", help="train the reconstructor")
    common(p)
    p.add_argument("--fixed-patch", type=int, default=None,
                   help="fixed-patch baseline: single stage, no shifting")
    p.set_defaults(func=cmd_train_recon)

    p = sub.add_parser("train-clf", help="train the multimodal classifier")
    common(p)
    p.add_argument("--recon", required=True, help="reconstructor checkpoint directory")
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("reconstruct", help="reconstruct ECG from a PPG recording")
    common(p)
    p.add_argument("--model", required=True, help="reconstructor checkpoint directory")
    p.add_argument("--input", required=True, help="input recording CSV")
    p.add_argument("--hz", type=float, default=None, help="sample-rate override")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("classify", help="classify a PPG recording")
    common(p)
    p.add_argument("--model", required=True, help="classifier checkpoint directory")
    p.add_argument("--recon", required=True, help="reconstructor checkpoint directory")
    p.add_argument("--input", required=True, help="input recording CSV")
    p.add_argument("--hz", type=float, default=None, help="sample-rate override")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="report reconstruction RMSE per split")
    common(p)
    p.add_argument("--model", required=True, help="reconstructor checkpoint directory")
    p.add_argument("--fixed-patch", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="signal-input ablation study")
    common(p)
    p.add_argument("--recon", default=None, help="reconstructor checkpoint directory")
    p.add_argument("--variants", default=None,
                   help=f"comma list from {', '.join(ABLATION_VARIANTS)} (default: all)")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p, out=False)
    p.add_argument("--cases", type=int, default=100, help="random cases per op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attnmap", help="export attention maps as long-form CSV")
    common(p)
    p.add_argument("--model", required=True, help="reconstructor checkpoint directory")
    p.add_argument("--input", required=True, help="input recording CSV")
    p.add_argument("--window", type=int, default=0, help="window index within the recording")
    p.add_argument("--scope", choices=["last", "all"], default="last")
    p.add_argument("--hz", type=float, default=None, help="sample-rate override")
    p.set_defaults(func=cmd_attnmap)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, ParameterError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: FileNotFoundError: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: NumericError: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
