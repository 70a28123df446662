"""Command-line pipeline: generate, train, detect, explain, report.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 invariant
violation. Every artifact write is atomic and every output byte is a pure
function of (config file, seed), so reruns reproduce the artifact tree.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import aggregate, anomaly, render, shapley, synth, telemetry
from ._fsio import atomic_write_text
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    DataError,
    InvalidConfig,
    InvariantViolation,
    TwinxError,
)
from .forecaster import init_model, receptive_field, train
from .persist import load_bundle, save_bundle

MODEL_FILE = "model.json"
REPORT_FILE = "train_report.json"
VERDICTS_FILE = "verdicts.csv"
SUMMARY_FILE = "detection_summary.json"
EXPLAIN_DIR = "explanations"


def _parse_injection(spec: str) -> synth.Injection:
    parts = spec.split(":")
    if len(parts) != 5:
        raise InvalidConfig(
            f"--inject expects channel:kind:start:duration:magnitude, got {spec!r}")
    channel, kind, start, duration, magnitude = parts
    try:
        return synth.Injection(kind=kind, channel=channel, start=int(start),
                               duration=int(duration), magnitude=float(magnitude))
    except ValueError as exc:
        raise InvalidConfig(f"bad --inject value {spec!r}: {exc}") from exc


def cmd_generate(args) -> int:
    out = args.out
    labels_path = os.path.splitext(out)[0] + ".labels.csv"
    for path in (out, labels_path):
        if os.path.exists(path) and not args.force:
            raise InvalidConfig(f"{path} exists; pass --force to overwrite")
    injections = tuple(_parse_injection(s) for s in args.inject)
    cfg = synth.SynthConfig(rows=args.duration, seed=args.seed,
                            injections=injections)
    frame = synth.synth_generate(cfg)
    telemetry.write_csv(frame, out)
    lines = ["row_index,anomaly"]
    lines += [f"{i},{int(frame.labels[i])}" for i in range(frame.num_rows)]
    atomic_write_text(labels_path, "\n".join(lines) + "\n")
    print(f"wrote {frame.num_rows} rows to {out}")
    if injections:
        for inj in injections:
            print(f"  injected {inj.kind} on {inj.channel}: rows "
                  f"{inj.start}..{inj.start + inj.duration - 1} "
                  f"(magnitude {inj.magnitude:g})")
    else:
        print("  no injected anomalies")
    return 0


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            train=dataclasses.replace(cfg.train, seed=args.seed),
            explain=dataclasses.replace(cfg.explain, seed=args.seed),
        )
    return cfg


def _prepare_frame(path: str | None, what: str):
    if path is None:
        raise InvalidConfig(f"config is missing data.{what}")
    frame = telemetry.load_csv(path, telemetry.default_schema())
    return telemetry.clean(frame)


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    frame = _prepare_frame(cfg.train_csv, "train_csv")
    scaler = telemetry.fit_scaler(frame)
    scaled = telemetry.apply_scaler(frame, scaler)
    ds = telemetry.make_windows(scaled, cfg.window_length, cfg.stride)
    arch = cfg.arch_for(frame.num_channels)
    rf = receptive_field(arch)
    if rf > cfg.window_length:
        raise InvalidConfig(
            f"receptive field {rf} exceeds window length {cfg.window_length}")
    model = init_model(arch, cfg.train.seed)
    trained, report = train(model, ds, cfg.train)
    if cfg.train.epochs == 0:
        print("warning: epochs=0, persisting untrained weights", file=sys.stderr)
    # calibrate the threshold on the held-out tail so tau is not biased low
    # by windows the optimizer already fit
    _, holdout = telemetry.split_chronological(ds, 1.0 - cfg.train.val_fraction)
    calib = holdout if holdout.num_windows > frame.num_channels else ds
    em = anomaly.fit_error_model(trained, calib, cfg.shrinkage, cfg.quantile)

    os.makedirs(cfg.out_dir, exist_ok=True)
    save_bundle(os.path.join(cfg.out_dir, MODEL_FILE), trained, scaler, em,
                cfg.train.seed)
    report_doc = {
        "train_mse": report.train_mse,
        "val_mse": report.val_mse,
        "best_epoch": report.best_epoch,
        "final_epoch": report.final_epoch,
        "seed": report.seed,
        "hyper": report.hyper,
    }
    atomic_write_text(os.path.join(cfg.out_dir, REPORT_FILE),
                      json.dumps(report_doc, indent=2) + "\n")
    if report.val_mse:
        print(f"trained {len(report.val_mse)} epochs; best validation MSE "
              f"{min(report.val_mse):.6g} at epoch {report.best_epoch}")
    print(f"threshold tau = {em.tau:.6g} "
          f"(quantile {em.quantile:g} of {calib.num_windows} calibration windows)")
    return 0


def _load_query_windows(cfg: RunConfig, scaler):
    frame = _prepare_frame(cfg.query_csv, "query_csv")
    scaled = telemetry.apply_scaler(frame, scaler)
    ds = telemetry.make_windows(scaled, cfg.window_length, cfg.detect_stride)
    return frame, ds


def cmd_detect(args) -> int:
    cfg = _load_run_config(args)
    model, scaler, em, _ = load_bundle(os.path.join(cfg.out_dir, MODEL_FILE))
    frame, ds = _load_query_windows(cfg, scaler)
    os.makedirs(cfg.out_dir, exist_ok=True)
    verdicts_path = os.path.join(cfg.out_dir, VERDICTS_FILE)
    summary_path = os.path.join(cfg.out_dir, SUMMARY_FILE)
    if ds.num_windows == 0:
        print(f"warning: query has {frame.num_rows} rows, fewer than "
              f"window+1 = {cfg.window_length + 1}; nothing to score",
              file=sys.stderr)
        anomaly.write_verdicts_csv(verdicts_path, np.empty(0, dtype=np.int64),
                                   np.empty(0), np.empty(0), np.empty(0),
                                   np.empty(0, dtype=bool))
        anomaly.write_detection_summary(summary_path, em,
                                        np.empty(0, dtype=bool))
        return 0
    dist, scores, flags, _ = anomaly.score_batch(model, em, ds)
    target_ts = frame.timestamps[ds.origin_indices + cfg.window_length]
    anomaly.write_verdicts_csv(verdicts_path, ds.origin_indices, target_ts,
                               dist, scores, flags)
    anomaly.write_detection_summary(summary_path, em, flags)
    print(f"scored {ds.num_windows} windows: {int(flags.sum())} flagged "
          f"({flags.mean():.4f} rate), tau = {em.tau:.6g}")
    return 0


def _select_origins(args, origins, scores, flags) -> np.ndarray:
    if args.indices:
        try:
            wanted = sorted({int(s) for s in args.indices.split(",") if s.strip()})
        except ValueError as exc:
            raise InvalidConfig(f"bad --indices value: {exc}") from exc
        known = set(int(o) for o in origins)
        missing = [i for i in wanted if i not in known]
        if missing:
            raise DataError(f"origin indices not in verdicts: {missing}")
        return np.asarray(wanted, dtype=np.int64)
    flagged = origins[flags]
    if args.top_k is not None:
        if args.top_k < 1:
            raise InvalidConfig("--top-k must be >= 1")
        flagged_scores = scores[flags]
        order = np.argsort(-flagged_scores, kind="stable")[:args.top_k]
        return np.sort(flagged[order])
    return np.sort(flagged)


def cmd_explain(args) -> int:
    cfg = _load_run_config(args)
    model, scaler, em, _ = load_bundle(os.path.join(cfg.out_dir, MODEL_FILE))
    origins, _, _, scores, flags = anomaly.read_verdicts_csv(
        os.path.join(cfg.out_dir, VERDICTS_FILE))
    selected = _select_origins(args, origins, scores, flags)
    if len(selected) == 0:
        raise DataError("selection is empty: no anomalous windows to explain")

    frame, ds = _load_query_windows(cfg, scaler)
    origin_to_row = {int(o): i for i, o in enumerate(ds.origin_indices)}
    missing = [int(o) for o in selected if int(o) not in origin_to_row]
    if missing:
        raise DataError(f"verdict origins not found in query windows: {missing}")

    rng = np.random.default_rng(cfg.explain.seed)
    flag_by_origin = {int(o): bool(f) for o, f in zip(origins, flags)}
    normal_pool = np.asarray(
        [o for o in ds.origin_indices
         if not flag_by_origin.get(int(o), False) and int(o) not in set(int(s) for s in selected)],
        dtype=np.int64)
    n_normal = min(len(selected), len(normal_pool))
    normal_pick = (np.sort(rng.choice(normal_pool, size=n_normal, replace=False))
                   if n_normal else np.empty(0, dtype=np.int64))

    train_frame = _prepare_frame(cfg.train_csv, "train_csv")
    train_scaled = telemetry.apply_scaler(train_frame, scaler)
    train_ds = telemetry.make_windows(train_scaled, cfg.window_length, cfg.stride)
    if train_ds.num_windows == 0:
        raise DataError("training data yields no background windows")
    b = min(cfg.background, train_ds.num_windows)
    bg_idx = np.sort(rng.choice(train_ds.num_windows, size=b, replace=False))
    bg_windows = train_ds.inputs[bg_idx]
    bg_targets = train_ds.targets[bg_idx]

    out_dir = os.path.join(cfg.out_dir, EXPLAIN_DIR)
    os.makedirs(out_dir, exist_ok=True)
    names = telemetry.default_schema().names
    explanations = []
    for origin in list(selected) + list(normal_pick):
        row = origin_to_row[int(origin)]
        e = shapley.explain_instance(
            model, em, ds.inputs[row], ds.targets[row], bg_windows, bg_targets,
            names, cfg.explain, scaler=scaler)
        shapley.check_efficiency(e)
        explanations.append((int(origin), e))
        doc = {"origin_index": int(origin),
               "is_anomaly": flag_by_origin.get(int(origin), False),
               **shapley.explanation_to_dict(e)}
        atomic_write_text(os.path.join(out_dir, f"explanation_{origin:06d}.json"),
                          json.dumps(doc, indent=2) + "\n")
        svg = render.render_force(aggregate.force_data(e), cfg.style)
        atomic_write_text(os.path.join(out_dir, f"force_{origin:06d}.svg"), svg)

    es = aggregate.ExplanationSet(tuple(e for _, e in explanations))
    ranking = aggregate.global_importance(es)
    atomic_write_text(os.path.join(cfg.out_dir, "bar.svg"),
                      render.render_bar(ranking, cfg.style))
    atomic_write_text(os.path.join(cfg.out_dir, "beeswarm.svg"),
                      render.render_beeswarm(aggregate.beeswarm_data(es), cfg.style))
    if es.count >= 3:
        top = ranking[0][0]
        dd = aggregate.dependence_data(es, top)
        atomic_write_text(os.path.join(cfg.out_dir, f"dependence_{top}.svg"),
                          render.render_dependence(dd, cfg.style))
    else:
        print("warning: fewer than 3 explanations, skipping dependence chart",
              file=sys.stderr)

    print(f"explained {len(selected)} anomalous + {n_normal} normal windows")
    top3 = ", ".join(n for n, _ in ranking[:3])
    bottom3 = ", ".join(n for n, _ in ranking[-3:])
    print(f"most influential channels: {top3}")
    print(f"least influential channels: {bottom3}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_run_config(args)
    out = cfg.out_dir
    required = [MODEL_FILE, REPORT_FILE, VERDICTS_FILE, SUMMARY_FILE,
                "bar.svg", "beeswarm.svg"]
    for name in required:
        if not os.path.exists(os.path.join(out, name)):
            raise DataError(f"missing artifact: {name}")
    dependence = sorted(
        os.path.basename(p) for p in glob.glob(os.path.join(out, "dependence_*.svg")))
    if not dependence:
        raise DataError("missing artifact: dependence_*.svg")
    force = sorted(
        os.path.basename(p)
        for p in glob.glob(os.path.join(out, EXPLAIN_DIR, "force_*.svg")))
    if not force:
        raise DataError(f"missing artifact: {EXPLAIN_DIR}/force_*.svg")

    with open(os.path.join(out, SUMMARY_FILE), encoding="utf-8") as fh:
        summary = json.load(fh)
    expl_files = sorted(
        glob.glob(os.path.join(out, EXPLAIN_DIR, "explanation_*.json")))
    explanations = []
    for path in expl_files:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        explanations.append(shapley.Explanation(
            base=doc["base"], fx=doc["fx"],
            phi=np.asarray([f["phi"] for f in doc["features"]]),
            feature_names=tuple(f["name"] for f in doc["features"]),
            feature_summaries=np.asarray(
                [f["summary_value"] for f in doc["features"]]),
            estimator=doc["estimator"], samples=doc["samples"]))
    if not explanations:
        raise DataError(f"missing artifact: {EXPLAIN_DIR}/explanation_*.json")
    ranking = aggregate.global_importance(
        aggregate.ExplanationSet(tuple(explanations)))

    lines = [
        "# Telemetry twin run report",
        "",
        "## Detection summary",
        "",
        "| windows scored | flagged | flag rate | threshold tau | quantile |",
        "| --- | --- | --- | --- | --- |",
        f"| {summary['count']} | {summary['flagged']} "
        f"| {summary['flag_rate']:.4f} | {summary['tau']:.6g} "
        f"| {summary['quantile']:g} |",
        "",
        "## Global channel ranking",
        "",
        "| rank | channel | mean abs attribution |",
        "| --- | --- | --- |",
    ]
    lines += [f"| {i + 1} | {name} | {val:.6g} |"
              for i, (name, val) in enumerate(ranking)]
    lines += [
        "",
        "## Charts",
        "",
        "- Importance ranking: [bar.svg](bar.svg)",
        "- Attribution summary: [beeswarm.svg](beeswarm.svg)",
    ]
    lines += [f"- Dependence: [{name}]({name})" for name in dependence]
    lines += [
        "",
        "## Local explanations",
        "",
    ]
    lines += [f"- [{name}]({EXPLAIN_DIR}/{name})" for name in force]
    lines.append("")
    atomic_write_text(os.path.join(out, "report.md"), "\n".join(lines))
    print(f"wrote {os.path.join(out, 'report.md')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinx",
        description="Telemetry forecasting twin: detect and explain anomalies.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic telemetry CSV")
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.add_argument("--duration", type=int, default=4000,
                     help="number of 1 Hz rows")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--inject", action="append", default=[],
                     metavar="CH:KIND:START:DUR:MAG",
                     help="inject a fault (repeatable); kinds: spike, drift, "
                          "stuck, overheat; MAG in channel-noise units")
    gen.add_argument("--force", action="store_true",
                     help="overwrite existing output files")
    gen.set_defaults(func=cmd_generate)

    for name, func, help_text in (
        ("train", cmd_train, "fit the forecaster and error model"),
        ("detect", cmd_detect, "score query windows against the twin"),
        ("explain", cmd_explain, "attribute anomaly scores to channels"),
        ("report", cmd_report, "write a markdown index of all artifacts"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seeds")
        p.add_argument("--out-dir", default=None,
                       help="override the artifact directory")
        if name == "explain":
            sel = p.add_mutually_exclusive_group()
            sel.add_argument("--all-anomalies", action="store_true",
                             help="explain every flagged window (default)")
            sel.add_argument("--indices", default=None,
                             help="comma-separated window origin indices")
            sel.add_argument("--top-k", type=int, default=None,
                             help="explain the k highest-scoring flagged windows")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TwinxError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
