"""Command-line pipeline: detect -> gc -> labels -> fuse -> train -> cross.

Each stage reads a JSON config, writes its outputs plus a run manifest into
the output directory, and exits 0 on success, 2 on config/input problems,
and 1 on numerical failures. Stage outputs use fixed names so the stages
chain without extra wiring.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .coupling import (
    DEFAULT_GC_ORDER,
    DEFAULT_GC_RIDGE,
    RankDeficientVarError,
    compute_clip_couplings,
    read_coupling_csv,
    read_motion_csv,
    write_coupling_csv,
)
from .events import (
    DEFAULT_FRAME_HOP_S,
    DEFAULT_FRAME_LEN_S,
    DEFAULT_MIN_SILENCE_S,
    DEFAULT_RMS_THRESHOLD,
    compute_activity,
    detect_marks,
    sample_and_window,
)
from .experiment import DEFAULT_BOUNDS, ExperimentConfig, cross_predict, run_cv_experiment
from .fusion import FusionSpec, build_dataset, read_dataset, write_dataset
from .runio import atomic_output, stage_seed, worker_count, write_run_manifest
from .sessions import (
    DOMAIN_DIMS,
    SchemaError,
    iter_feature_rows,
    load_session,
    read_feature_csv,
    read_manifest_csv,
    read_ratings_csv,
    write_manifest_csv,
)
from .surveys import (
    BINARIZE_THRESHOLD,
    MIN_RATERS,
    RELIABILITY_MIN_R,
    prepare_labels,
    read_labels_csv,
    write_labels_csv,
)

log = logging.getLogger("convoflow")

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    """Bad or incomplete run configuration."""


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing the {key!r} section")
    return cfg[key]


def _input_path(raw: str) -> Path:
    p = Path(raw)
    if not p.exists():
        raise ConfigError(f"input file not found: {p}")
    return p


def _out_dir(cfg: dict, args) -> Path:
    out = Path(args.out_dir or cfg.get("out_dir", "convoflow_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(cfg: dict, args) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_detect(cfg: dict, args) -> int:
    started = datetime.now(timezone.utc)
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    audio = _require(cfg, "audio")
    opts = cfg.get("detect", {})
    rms = args.rms_threshold if args.rms_threshold is not None else opts.get(
        "rms_threshold", DEFAULT_RMS_THRESHOLD)
    min_silence = args.min_silence if args.min_silence is not None else opts.get(
        "min_silence", DEFAULT_MIN_SILENCE_S)
    frame_len = args.frame_len if args.frame_len is not None else opts.get(
        "frame_len", DEFAULT_FRAME_LEN_S)
    frame_hop = args.frame_hop if args.frame_hop is not None else opts.get(
        "frame_hop", DEFAULT_FRAME_HOP_S)
    per_kind = args.per_kind if args.per_kind is not None else opts.get("per_kind", 50)

    inputs = []
    marks = []
    durations = {}
    for session_id in sorted(audio):
        paths = [_input_path(p) for p in audio[session_id]]
        inputs.extend(paths)
        session = load_session(paths, session_id)
        durations[session_id] = session.duration_s
        activity = compute_activity(session, frame_len, frame_hop, rms)
        marks.extend(detect_marks(activity, min_silence))

    sample = sample_and_window(marks, per_kind, durations, stage_seed(seed, "detect"))
    if not sample.complete:
        log.warning("some categories had fewer eligible marks than requested")
    with atomic_output(out / "clips.csv") as tmp:
        write_manifest_csv(tmp, sample.windows)
    write_run_manifest(out, "detect", {"detect": opts, "seed": seed}, seed,
                       inputs, ["clips.csv"], started)
    print(f"detect: {len(sample.windows)} clip windows -> {out / 'clips.csv'}")
    return EXIT_OK


def cmd_gc(cfg: dict, args) -> int:
    started = datetime.now(timezone.utc)
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    motion_cfg = _require(cfg, "motion")
    opts = cfg.get("gc", {})
    order = int(opts.get("order", DEFAULT_GC_ORDER))
    mode = opts.get("mode", "bivariate")
    ridge = float(opts.get("ridge", DEFAULT_GC_RIDGE))

    inputs = []
    per_participant = {}
    for pid in sorted(motion_cfg):
        path = _input_path(motion_cfg[pid])
        inputs.append(path)
        per_participant[pid] = read_motion_csv(path, pid)

    workers = worker_count()
    if workers > 1:
        clip_ids = sorted({c for streams in per_participant.values() for c in streams})
        chunks = [clip_ids[i::workers] for i in range(workers)]

        def run_chunk(chunk):
            subset = {
                pid: {c: s for c, s in streams.items() if c in set(chunk)}
                for pid, streams in per_participant.items()
            }
            return compute_clip_couplings(subset, order=order, mode=mode, ridge=ridge)

        couplings = {}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(run_chunk, chunks):
                couplings.update(part)
    else:
        couplings = compute_clip_couplings(
            per_participant, order=order, mode=mode, ridge=ridge
        )

    with atomic_output(out / "coupling.csv") as tmp:
        write_coupling_csv(tmp, couplings)
    write_run_manifest(out, "gc", {"gc": opts, "seed": seed}, seed,
                       inputs, ["coupling.csv"], started)
    defined = sum(1 for v in couplings.values() if not math.isnan(v))
    print(f"gc: coupling for {defined}/{len(couplings)} clips -> {out / 'coupling.csv'}")
    return EXIT_OK


def cmd_labels(cfg: dict, args) -> int:
    started = datetime.now(timezone.utc)
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    ratings_path = _input_path(_require(cfg, "ratings"))
    opts = cfg.get("labels", {})
    ratings = read_ratings_csv(ratings_path)
    labels, reliability = prepare_labels(
        ratings,
        threshold=float(opts.get("threshold", BINARIZE_THRESHOLD)),
        min_raters=int(opts.get("min_raters", MIN_RATERS)),
        min_r=float(opts.get("min_r", RELIABILITY_MIN_R)),
    )
    with atomic_output(out / "labels.csv") as tmp:
        write_labels_csv(tmp, labels)
    write_run_manifest(out, "labels", {"labels": opts, "seed": seed}, seed,
                       [ratings_path], ["labels.csv"], started)
    included = sum(1 for r in reliability if r.included)
    print(
        f"labels: {len(labels)} labeled clips "
        f"({included}/{len(reliability)} raters kept) -> {out / 'labels.csv'}"
    )
    return EXIT_OK


def cmd_fuse(cfg: dict, args) -> int:
    started = datetime.now(timezone.utc)
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    opts = _require(cfg, "fuse")
    spec = FusionSpec(
        domains=tuple(opts.get("domains", [])),
        horizon=opts.get("horizon", "full_7s"),
        pool=opts.get("pool", "flatten"),
    )
    manifest_path = _input_path(cfg.get("manifest", str(out / "clips.csv")))
    windows = read_manifest_csv(manifest_path)
    inputs = [manifest_path]

    frames_by_domain = {}
    embeddings = cfg.get("embeddings", {})
    for domain in spec.frame_domains:
        if domain == "face_au":
            continue
        if domain not in embeddings:
            raise ConfigError(f"fuse needs an embeddings entry for {domain!r}")
        path = _input_path(embeddings[domain])
        inputs.append(path)
        frames_by_domain[domain] = read_feature_csv(path, domain)

    if "face_au" in spec.frame_domains:
        from .fusion import average_face_aus

        au_cfg = _require(cfg, "face_au")
        per_participant = {}
        for pid in sorted(au_cfg):
            path = _input_path(au_cfg[pid])
            inputs.append(path)
            per_participant[pid] = read_feature_csv(path, "face_au")
        fused_au = {}
        for w in windows:
            present = [
                per_participant[pid][w.clip_id]
                for pid in sorted(per_participant)
                if w.clip_id in per_participant[pid]
            ]
            fused_au[w.clip_id] = average_face_aus(present, clip_id=w.clip_id)
        frames_by_domain["face_au"] = fused_au

    couplings = {}
    if "gc" in spec.domains:
        coupling_path = _input_path(cfg.get("coupling_csv", str(out / "coupling.csv")))
        inputs.append(coupling_path)
        couplings = read_coupling_csv(coupling_path)

    fl, en, ev = {}, {}, {}
    labels_path = cfg.get("labels_csv", str(out / "labels.csv"))
    if Path(labels_path).exists():
        inputs.append(Path(labels_path))
        for c in read_labels_csv(labels_path):
            fl[c.clip_id] = c.fluidity_label
            en[c.clip_id] = c.enjoyment_label
            if c.event_label:
                ev[c.clip_id] = c.event_label

    dataset = build_dataset(
        clips=[(w.clip_id, w.session_id) for w in windows],
        frames_by_domain=frames_by_domain,
        couplings=couplings,
        spec=spec,
        fluidity_labels=fl,
        enjoyment_labels=en,
        event_labels=ev,
    )
    write_dataset(dataset, out / "dataset.csv")
    write_run_manifest(out, "fuse", {"fuse": opts, "seed": seed}, seed, inputs,
                       ["dataset.csv", "dataset.csv.layout.json"], started)
    print(
        f"fuse: {len(dataset)} clips x {dataset.layout.total_length} features "
        f"-> {out / 'dataset.csv'}"
    )
    return EXIT_OK


def _experiment_config(cfg: dict, args, seed: int) -> ExperimentConfig:
    opts = cfg.get("train", {})
    task = args.task or opts.get("task")
    if not task:
        raise ConfigError("train needs a task (config train.task or --task)")
    bounds_cfg = opts.get("bounds", {})
    bounds = {
        name: tuple(bounds_cfg.get(name, DEFAULT_BOUNDS[name]))
        for name in DEFAULT_BOUNDS
    }
    return ExperimentConfig(
        task=task,
        iterations=int(opts.get("iterations", 600)),
        k=int(opts.get("k", 5)),
        seed=stage_seed(seed, "train"),
        bounds=bounds,
    )


def cmd_train(cfg: dict, args) -> int:
    started = datetime.now(timezone.utc)
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    dataset_path = _input_path(cfg.get("dataset_csv", str(out / "dataset.csv")))
    dataset = read_dataset(dataset_path)
    config = _experiment_config(cfg, args, seed)
    result = run_cv_experiment(dataset, config)

    report_name = f"report_{config.task}.json"
    with atomic_output(out / report_name) as tmp:
        tmp.write_text(json.dumps(result.to_json(), sort_keys=True, indent=2) + "\n")
    confusion_name = f"confusion_{config.task}.csv"
    _write_confusion_csv(out / confusion_name, result.to_json())
    write_run_manifest(out, "train", {"train": cfg.get("train", {}), "seed": seed},
                       seed, [dataset_path], [report_name, confusion_name], started)
    mean_auc = result.mean_metric("roc_auc")
    print(
        f"train[{config.task}]: mean ROC-AUC "
        f"{mean_auc if mean_auc is None else round(mean_auc, 4)} "
        f"(best objective {result.best_objective:.4f}) -> {out / report_name}"
    )
    return EXIT_OK


def cmd_cross(cfg: dict, args) -> int:
    started = datetime.now(timezone.utc)
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    opts = _require(cfg, "cross")
    source_task = opts.get("source_task")
    target_task = opts.get("target_task")
    if not source_task or not target_task:
        raise ConfigError("cross needs cross.source_task and cross.target_task")
    dataset_path = _input_path(cfg.get("dataset_csv", str(out / "dataset.csv")))
    dataset = read_dataset(dataset_path)

    cfg_for_source = dict(cfg.get("train", {}))
    cfg_for_source["task"] = source_task
    config = _experiment_config({"train": cfg_for_source}, argparse.Namespace(task=None),
                                seed)
    result = run_cv_experiment(dataset, config)
    report = cross_predict(result, dataset, target_task)

    report_name = f"cross_{source_task}_to_{target_task}.json"
    with atomic_output(out / report_name) as tmp:
        tmp.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    write_run_manifest(out, "cross", {"cross": opts, "seed": seed}, seed,
                       [dataset_path], [report_name], started)
    print(
        f"cross[{source_task}->{target_task}]: mean ROC-AUC "
        f"{round(report['mean']['roc_auc'], 4)} -> {out / report_name}"
    )
    return EXIT_OK


def _write_confusion_csv(path: Path, report: dict) -> None:
    classes = report["classes"]
    with atomic_output(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\pred"] + classes)
            for cls, row in zip(classes, report["confusion_total"]):
                writer.writerow([cls] + list(row))


def cmd_report(cfg: dict, args) -> int:
    path = _input_path(args.report)
    report = json.loads(Path(path).read_text())
    mean = report.get("mean", {})
    print(f"report: {path}")
    if "task" in report:
        print(f"  task: {report['task']}")
    for name in ("roc_auc", "average_precision", "f1", "balanced_accuracy"):
        value = mean.get(name)
        print(f"  {name}: {'n/a' if value is None else round(value, 4)}")
    if "best_params" in report:
        print(f"  best params: {report['best_params']}")
    if "confusion_total" in report:
        print("  confusion (rows = true):")
        for cls, row in zip(report["classes"], report["confusion_total"]):
            print(f"    {cls}: {row}")
    return EXIT_OK


def cmd_validate(cfg: dict, args) -> int:
    domain = args.domain
    if domain not in DOMAIN_DIMS:
        raise ConfigError(f"unknown domain {domain!r}; choose from {sorted(DOMAIN_DIMS)}")
    path = _input_path(args.file)
    n_rows = 0
    clips = set()
    for clip_id, _, _, _ in iter_feature_rows(path, DOMAIN_DIMS[domain]):
        n_rows += 1
        clips.add(clip_id)
    print(f"validate: {path} ok ({n_rows} rows, {len(clips)} clips, domain {domain})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convoflow",
        description="Multiparty videoconference clip analysis pipeline",
    )
    parser.add_argument("--version", action="version", version=f"convoflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out-dir", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p = sub.add_parser("detect", help="detect silence/overlap marks and emit clip windows")
    add_common(p)
    p.add_argument("--rms-threshold", type=float, default=None)
    p.add_argument("--min-silence", type=float, default=None)
    p.add_argument("--frame-len", type=float, default=None)
    p.add_argument("--frame-hop", type=float, default=None)
    p.add_argument("--per-kind", type=int, default=None)

    for name, help_text in (
        ("gc", "compute mean pairwise motion coupling per clip"),
        ("labels", "screen raters and aggregate clip labels"),
        ("fuse", "assemble the fused feature dataset"),
        ("cross", "score one task's models against another task's labels"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_common(p)

    p = sub.add_parser("train", help="hyperparameter search + grouped CV report")
    add_common(p)
    p.add_argument("--task", default=None, choices=("fluidity", "enjoyment", "event"))

    p = sub.add_parser("report", help="print a report JSON summary")
    p.add_argument("--report", required=True, help="path to a report JSON")

    p = sub.add_parser("validate", help="check a feature CSV against its domain schema")
    p.add_argument("--domain", required=True)
    p.add_argument("file", help="feature CSV path")
    return parser


_COMMANDS = {
    "detect": cmd_detect,
    "gc": cmd_gc,
    "labels": cmd_labels,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "cross": cmd_cross,
    "report": cmd_report,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config) if getattr(args, "config", None) else {}
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError, SchemaError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (RankDeficientVarError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
