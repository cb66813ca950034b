"""Command-line entry point: ``affectkit <command> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import container, dataset, metrics
from .config import N_EXPRESSIONS, PARTITIONS, RunConfig, SpectrogramConfig, default_ratios
from .embedspace import CentroidModel, classify_batch, fit_centroids
from .experiments import (
    arcface_loss_fn,
    multitask_loss_fn,
    predict_multitask,
    synthetic_clusters,
    synthetic_multitask,
    synthetic_sequences,
)
from .gradsuite import TOLERANCE, format_report, run_suite
from .nets import ArcFaceNet, MultiTaskGRUNet, MultiTaskNet, time_major
from .optim import train
from .signals import spectrogram
from .wavio import read_wav

MODEL_FORMAT = "affectkit-model"


class NumericalFailure(ArithmeticError):
    pass


# ---------------------------------------------------------------- models


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def load_training_data(cfg: RunConfig) -> dict[str, np.ndarray]:
    if cfg.data_path:
        with np.load(cfg.data_path) as npz:
            data = {k: npz[k] for k in npz.files}
        need = ("x", "y") if cfg.model == "arcface" else ("x",)
        missing = [k for k in need if k not in data]
        if missing:
            raise ValueError(f"{cfg.data_path}: missing array {missing[0]!r}")
        return data
    if cfg.model == "arcface":
        x, y = synthetic_clusters(max(1, cfg.synthetic_samples // N_EXPRESSIONS), seed=cfg.seed)
        return {"x": x, "y": y}
    if cfg.model == "multitask_gru":
        return synthetic_sequences(cfg.synthetic_samples, cfg.seq_len, cfg.input_dim, cfg.n_aus, seed=cfg.seed)
    return synthetic_multitask(cfg.synthetic_samples, cfg.input_dim, cfg.n_aus, seed=cfg.seed)


def build_model(cfg: RunConfig, in_dim: int):
    if cfg.model == "arcface":
        arc = cfg.arcface_config()
        return ArcFaceNet(in_dim, tuple(cfg.hidden), arc.dim, arc.scale, arc.margin, cfg.dropout, seed=cfg.seed)
    if cfg.model == "multitask_gru":
        return MultiTaskGRUNet(in_dim, cfg.hidden[0], cfg.gru_hidden, cfg.gru_layers, cfg.n_aus, cfg.dropout, seed=cfg.seed)
    return MultiTaskNet(in_dim, tuple(cfg.hidden), cfg.n_aus, cfg.dropout, seed=cfg.seed)


def save_model(path, model, cfg: RunConfig, in_dim: int, centroids: CentroidModel | None = None) -> None:
    arrays = dict(model.state_dict())
    if centroids is not None:
        arrays.update({f"centroids.{k}": v for k, v in centroids.to_arrays().items()})
    meta = {"format": MODEL_FORMAT, "config": dataclasses.asdict(cfg), "in_dim": in_dim}
    container.save(path, arrays, meta)


def load_model(path):
    meta, arrays = container.load(path)
    if meta.get("format") != MODEL_FORMAT:
        raise container.ContainerError(f"{path}: not a model container (format {meta.get('format')!r})")
    cfg = RunConfig.from_dict(meta["config"])
    model = build_model(cfg, int(meta["in_dim"]))
    cent = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("centroids.")}
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("centroids.")})
    return cfg, model, (CentroidModel.from_arrays(cent) if cent else None)


def _trace_csv(trace) -> str:
    lines = ["step,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(trace)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- metrics


def metric_rows(pred: dict, labels: dict) -> dict[str, float]:
    """Whichever of the task metrics both sides provide."""
    out: dict[str, float] = {}
    if pred.get("va") is not None and labels.get("va") is not None and len(labels["va"]):
        out["CCC_V"] = metrics.ccc_metric(pred["va"][:, 0], labels["va"][:, 0])
        out["CCC_A"] = metrics.ccc_metric(pred["va"][:, 1], labels["va"][:, 1])
    if pred.get("aus") is not None and labels.get("aus") is not None and len(labels["aus"]):
        out["AU_F1"] = metrics.f1(pred["aus"], labels["aus"], average="macro")
    if pred.get("expr") is not None and labels.get("expr") is not None and len(labels["expr"]):
        out["EXPR_F1"] = metrics.f1_multiclass(pred["expr"], labels["expr"])
        out["ACCURACY"] = metrics.accuracy(pred["expr"], labels["expr"])
        out["MEAN_DIAGONAL"] = metrics.mean_diagonal(metrics.confusion_matrix(labels["expr"], pred["expr"]))
    return out


def _aligned_frames(pred_frames, label_frames):
    """Pair label frames with predictions on (video, frame)."""
    preds = {}
    for f in pred_frames:
        key = (f.video_id, f.frame)
        if key in preds:
            raise ValueError(f"duplicate prediction for video {key[0]} frame {key[1]}")
        preds[key] = f
    pairs = []
    for f in label_frames:
        p = preds.get((f.video_id, f.frame))
        if p is None:
            raise ValueError(f"no prediction for video {f.video_id} frame {f.frame}")
        pairs.append((p, f))
    return pairs


def _collect(pairs, attr):
    rows = [(getattr(p, attr), getattr(t, attr)) for p, t in pairs]
    rows = [(a, b) for a, b in rows if b is not None]
    for a, _ in rows:
        if a is None:
            raise ValueError(f"prediction lacks {attr!r} where the label has one")
    if not rows:
        return None, None
    return np.array([a for a, _ in rows]), np.array([b for _, b in rows])


def _format_metrics(values: dict[str, float]) -> tuple[str, str]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in values.items():
        w.writerow([k, f"{v:.6f}"])
    width = max((len(k) for k in values), default=6)
    table = "\n".join(f"{k:<{width}}  {v:8.4f}" for k, v in values.items())
    return buf.getvalue(), table


# ---------------------------------------------------------------- commands


def cmd_grad_check(args) -> int:
    results = run_suite(points=args.points, seed=args.seed or 0)
    print(format_report(results))
    worst = max(r.max_error for r in results)
    if not all(r.passed for r in results):
        raise NumericalFailure(f"gradient check failed: max relative error {worst:.3e} >= {TOLERANCE:g}")
    print(f"all {len(results)} checks passed, max relative error {worst:.3e}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.output_dir or cfg.output_dir)
    data = load_training_data(cfg)
    in_dim = int(data["x"].shape[-1])
    model = build_model(cfg, in_dim)
    centroids = None
    if cfg.model == "arcface":
        result = train(model, {"x": data["x"], "y": data["y"]}, arcface_loss_fn, cfg.train_config())
        centroids = fit_centroids(model.embeddings(data["x"]), data["y"])
    else:
        sequence = cfg.model == "multitask_gru"
        fields = {"va": "va", "au": "aus", "expr": "expr"}
        batch_data = {"x": data["x"], **{fields[t]: data[fields[t]] for t in cfg.tasks}}
        result = train(model, batch_data, multitask_loss_fn(tuple(cfg.tasks), cfg.va_loss, sequence), cfg.train_config())
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(_trace_csv(result.trace))
    save_model(out / "model.afen", model, cfg, in_dim, centroids)
    print(f"trained {cfg.model} for {cfg.steps} steps, final loss {result.trace[-1] if result.trace else float('nan'):.6g}")
    print(f"wrote {out / 'model.afen'} and {out / 'trace.csv'}")
    return 0


def _predict_with_model(model_path, data_path):
    cfg, model, centroids = load_model(model_path)
    with np.load(data_path) as npz:
        data = {k: npz[k] for k in npz.files}
    if "x" not in data:
        raise ValueError(f"{data_path}: missing array 'x'")
    if cfg.model == "arcface":
        if centroids is None:
            raise ValueError(f"{model_path}: arcface model has no centroids")
        labels = data.get("y", data.get("expr"))
        return {"expr": classify_batch(centroids, model.embeddings(data["x"]))}, {"expr": labels}
    pred = predict_multitask(model, data["x"])
    conv = time_major if cfg.model == "multitask_gru" else np.asarray
    labels = {k: conv(data[k]) for k in ("va", "aus", "expr") if k in data}
    if "aus" in labels:
        labels["aus"] = labels["aus"].astype(np.int64)
    return pred, labels


def cmd_eval(args) -> int:
    if args.model:
        if not args.data:
            raise ValueError("--model needs --data")
        pred, labels = _predict_with_model(args.model, args.data)
    else:
        if not (args.predictions and args.labels):
            raise ValueError("give --model/--data or --predictions/--labels")
        pairs = _aligned_frames(dataset.read_frames(args.predictions), dataset.read_frames(args.labels))
        pred, labels = {}, {}
        for name, attr in (("va", "va"), ("aus", "au"), ("expr", "expr")):
            pred[name], labels[name] = _collect(pairs, attr)
    values = metric_rows(pred, labels)
    if not values:
        raise ValueError("no overlapping labels to evaluate")
    csv_text, table = _format_metrics(values)
    if args.out:
        Path(args.out).write_text(csv_text)
    print(table)
    return 0


def cmd_split(args) -> int:
    frames = dataset.read_frames(args.frames)
    table = dataset.video_table(frames)
    ratios = tuple(float(r) for r in args.ratios.split(",")) if args.ratios else default_ratios(args.task)
    assignment = dataset.subject_independent_split(table, ratios, seed=args.seed or 0)
    overlaps = dataset.subject_overlaps(assignment, table)
    if overlaps:
        raise ValueError(f"subjects in more than one partition: {sorted(overlaps)}")
    doc = assignment.to_json()
    achieved = assignment.frame_ratios(table)
    doc["frame_ratios"] = dict(zip(PARTITIONS, achieved))
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for p, target, got in zip(PARTITIONS, ratios, achieved):
        print(f"{p:<10} target {target:.3f}  achieved {got:.3f}")
    return 0


def cmd_aggregate(args) -> int:
    frames = dataset.read_frames(args.frames)
    subjects = {f.video_id: f.subject_id for f in frames}
    tracks = dataset.tracks_from_frames(frames, args.task)
    if not tracks:
        raise ValueError(f"no {args.task} labels in {args.frames}")
    by_video = defaultdict(list)
    for t in tracks:
        by_video[t.video_id].append(t)
    out_frames = []
    report = {}
    if args.task == "va":
        for video, ts in sorted(by_video.items()):
            idx, vals = dataset.aggregate_va(ts)
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                corr = dataset.inter_annotator_correlation(ts)
            report[video] = {"annotators": len(ts), "frames": len(idx),
                             "correlation": [None if np.isnan(c) else float(c) for c in corr]}
            out_frames += [dataset.LabeledFrame(video, int(i), subjects[video], valence=float(v[0]), arousal=float(v[1]))
                           for i, v in zip(idx, vals)]
    else:
        result = dataset.agreement_filter(tracks)
        report = result.report
        for video, (idx, vals) in sorted(result.consensus().items()):
            for i, v in zip(idx, vals):
                label = {"au": tuple(int(a) for a in np.atleast_1d(v))} if args.task == "au" else {"expr": int(v)}
                out_frames.append(dataset.LabeledFrame(video, int(i), subjects[video], **label))
    dataset.write_frames(args.out, out_frames)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(out_frames)} {args.task} frames from {len(by_video)} videos to {args.out}")
    return 0


def cmd_stats(args) -> int:
    stats = dataset.dataset_stats(dataset.read_frames(args.frames), bins=args.bins)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in dataset.stats_csv(stats).items():
        (out / name).write_text(text)
    print(f"{stats.n_va} VA, {stats.n_expr} expression, {stats.n_au} AU frames; CSVs in {out}")
    return 0


def cmd_spectrogram(args) -> int:
    if args.config:
        spec = SpectrogramConfig(**RunConfig.load(args.config).spectrogram)
    else:
        spec = SpectrogramConfig()
    if args.log_magnitude:
        spec = dataclasses.replace(spec, log_magnitude=True)
    samples = read_wav(args.wav, expected_rate=spec.sample_rate)
    grid = spectrogram(samples, spec)
    np.save(args.out, grid)
    print(f"{grid.shape[0]} frames x {grid.shape[1]} bins -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affectkit", description="Multi-task affect recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.set_defaults(func=func)
        return p

    p = add("grad-check", cmd_grad_check, "finite-difference check of all losses and blocks")
    p.add_argument("--points", type=int, default=10)

    p = add("train", cmd_train, "train a model; writes model.afen and trace.csv")
    p.add_argument("--output-dir")

    p = add("eval", cmd_eval, "score predictions against labels")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--predictions")
    p.add_argument("--labels")
    p.add_argument("--out", help="metrics CSV")

    p = add("split", cmd_split, "subject-independent train/validation/test split")
    p.add_argument("--frames", required=True)
    p.add_argument("--ratios", help="comma-separated train,validation,test shares")
    p.add_argument("--task", default="va", choices=("va", "au", "expr"))
    p.add_argument("--out", required=True)

    p = add("aggregate", cmd_aggregate, "merge annotator labels")
    p.add_argument("--frames", required=True)
    p.add_argument("--task", required=True, choices=("va", "au", "expr"))
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = add("stats", cmd_stats, "label histograms and AU table")
    p.add_argument("--frames", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bins", type=int, default=20)

    p = add("spectrogram", cmd_spectrogram, "normalized spectrogram of a PCM16 mono WAV")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log-magnitude", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArithmeticError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
