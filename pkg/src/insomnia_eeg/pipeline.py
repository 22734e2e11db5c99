"""Pipeline stages behind the CLI subcommands.

Each stage reads the documented artifacts of its upstream stage from the
output directory and writes its own; invoking a stage whose inputs are
missing raises StageOrderError. Every CSV artifact starts with a comment
line recording the tool version, config hash and seed, and no artifact
embeds an absolute path, so a rerun with the same config and seed is
byte-identical wherever the output directory lives.

Output layout under cfg.out:
    raw/                 synthetic EDFs + hypnograms + manifest.csv
    ingested/            resampled single-channel EDFs, hypnogram copies,
                         manifest.csv (subject_id,label,channel,edf,hypnogram)
    filtered/            band-passed EDFs, epochs.csv audit table, manifest.csv
    features_<ch>.csv    34-column feature table per channel
    feature_stats.csv    per-feature t/dof/p/r/tier
    selected.txt         ordered selected feature names
    model_<key>.bin      trained network (key = fp2 | c4 | both)
    history_<key>.csv    per-epoch training curves
    labels_<key>.csv     subject labels as used for training (after any shuffle)
    eval_<key>.csv       confusion counts at epoch and subject level
    metrics.csv          derived metrics table
    sleep_stats.csv      per-class descriptive statistics of sleep parameters
    history.csv          copy of the configured channel's training curves
"""

from __future__ import annotations

import csv
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .edf_io import read_edf, resample, write_edf
from .errors import (
    InsufficientData,
    StageOrderError,
    UndefinedMetric,
)
from .features import (
    FeatureConfig,
    FeatureVector,
    Hypnogram,
    read_feature_csv,
    read_hypnogram,
    sleep_features,
    write_feature_csv,
    extract_all,
)
from .metrics import ConfusionMatrix, accuracy, cohens_kappa, f1, precision, recall
from .model import (
    CLASS_NAMES,
    TrainConfig,
    load_model,
    predict_subject,
    row_split_mask,
    save_model,
    subject_split,
    train,
)
from .preprocess import FilterSpec, filter_signal, reject_artifacts, segment
from .selection import (
    SelectionConfig,
    apply_rules,
    compute_feature_stats,
    read_selected,
    write_feature_stats,
    write_selected,
)
from .synth import generate_cohort, read_manifest


def _comment(cfg: PipelineConfig) -> str:
    return f"generator=insomnia-eeg/{__version__} config={cfg.config_hash()} seed={cfg.seed}"


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageOrderError(f"missing {path.name}: run `{hint}` first")
    return path


def _read_stage_manifest(path: Path, out_root: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    for row in rows:
        for key in ("edf", "hypnogram"):
            if row.get(key):
                row[key] = str(out_root / row[key])
    return rows


def _write_stage_manifest(path: Path, rows: list[dict], columns: tuple, comment: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {comment}\n")
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _map_jobs(worker, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


# --- synth -------------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig) -> Path:
    """Generate the synthetic cohort under out/raw."""
    out = Path(cfg.out) / "raw"
    profiles = None
    if cfg.profiles:
        import json

        profiles = json.loads(Path(cfg.profiles).read_text())
    return generate_cohort(
        cfg.synth_healthy,
        cfg.synth_insomnia,
        cfg.seed,
        out,
        duration=cfg.synth_duration,
        fs=cfg.synth_fs,
        channels=tuple(cfg.synth_channel_labels()),
        profiles=profiles,
        comment=_comment(cfg),
    )


# --- ingest ------------------------------------------------------------------


def _ingest_one(task) -> dict:
    cfg, row, channel = task
    out_root = Path(cfg.out)
    recording = read_edf(row[f"edf_{channel.lower()}"], channel)
    recording.subject_id = row["subject_id"]
    recording = resample(recording, cfg.resample_fs)
    name = f"{row['subject_id']}_{channel.lower()}.edf"
    write_edf(recording, out_root / "ingested" / name)
    return {
        "subject_id": row["subject_id"],
        "label": row["label"],
        "channel": channel,
        "edf": f"ingested/{name}",
        "hypnogram": f"ingested/{row['subject_id']}_hypnogram.csv",
    }


def cmd_ingest(cfg: PipelineConfig) -> Path:
    """Parse cohort EDFs, pick the channel(s), resample to the pipeline rate."""
    manifest_path = Path(cfg.manifest) if cfg.manifest else Path(cfg.out) / "raw" / "manifest.csv"
    _require(manifest_path, "synth (or pass --manifest)")
    rows = read_manifest(manifest_path)
    out_dir = Path(cfg.out) / "ingested"
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = []
    for row in rows:
        shutil.copyfile(row["hypnogram"], out_dir / f"{row['subject_id']}_hypnogram.csv")
        for channel in cfg.channel_labels():
            source = row.get(f"edf_{channel.lower()}", "")
            if not source or not Path(source).exists():
                raise StageOrderError(
                    f"manifest row {row['subject_id']} lacks an EDF for channel {channel}"
                )
            tasks.append((cfg, row, channel))

    out_rows = _map_jobs(_ingest_one, tasks, cfg.jobs)
    manifest = out_dir / "manifest.csv"
    _write_stage_manifest(
        manifest,
        out_rows,
        ("subject_id", "label", "channel", "edf", "hypnogram"),
        _comment(cfg),
    )
    return manifest


# --- preprocess --------------------------------------------------------------


def _preprocess_one(task) -> tuple[dict, list[dict]]:
    cfg, row = task
    out_root = Path(cfg.out)
    spec = FilterSpec(cfg.hp, cfg.lp, cfg.order, cfg.zero_phase)
    recording = read_edf(row["edf"], row["channel"])
    recording.subject_id = row["subject_id"]
    filtered = filter_signal(recording, spec)
    name = f"{row['subject_id']}_{row['channel'].lower()}.edf"
    write_edf(filtered, out_root / "filtered" / name)

    epochs = reject_artifacts(
        segment(filtered, cfg.epoch_seconds, cfg.overlap), cfg.clip_uv
    )
    audit = [
        {
            "subject_id": row["subject_id"],
            "channel": row["channel"],
            "epoch_index": e.index,
            "offset_s": repr(e.offset),
            "rejected": int(e.rejected),
            "max_abs_uv": repr(float(np.max(np.abs(e.samples)))),
        }
        for e in epochs
    ]
    out_row = dict(row)
    out_row["edf"] = f"filtered/{name}"
    out_row["hypnogram"] = f"ingested/{row['subject_id']}_hypnogram.csv"
    return out_row, audit


def cmd_preprocess(cfg: PipelineConfig) -> Path:
    """Band-pass every ingested recording; write the epoch audit table."""
    out_root = Path(cfg.out)
    manifest_path = _require(out_root / "ingested" / "manifest.csv", "ingest")
    rows = _read_stage_manifest(manifest_path, out_root)
    (out_root / "filtered").mkdir(parents=True, exist_ok=True)

    # Stage manifests resolve paths against the output root; workers
    # reconstruct them from the relative names.
    tasks = []
    for row in rows:
        rel = dict(row)
        rel["edf"] = row["edf"]
        tasks.append((cfg, rel))
    results = _map_jobs(_preprocess_one, tasks, cfg.jobs)

    out_rows = [r for r, _ in results]
    audit_rows = [a for _, audit in results for a in audit]
    epochs_csv = out_root / "filtered" / "epochs.csv"
    with open(epochs_csv, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {_comment(cfg)}\n")
        writer = csv.DictWriter(
            f,
            fieldnames=(
                "subject_id", "channel", "epoch_index", "offset_s", "rejected", "max_abs_uv",
            ),
        )
        writer.writeheader()
        writer.writerows(audit_rows)

    manifest = out_root / "filtered" / "manifest.csv"
    _write_stage_manifest(
        manifest,
        [{k: r[k] for k in ("subject_id", "label", "channel", "edf", "hypnogram")} for r in out_rows],
        ("subject_id", "label", "channel", "edf", "hypnogram"),
        _comment(cfg),
    )
    return manifest


# --- features ----------------------------------------------------------------


def _features_one(task) -> list[FeatureVector]:
    cfg, row = task
    recording = read_edf(row["edf"], row["channel"])
    recording.subject_id = row["subject_id"]
    hypnogram = read_hypnogram(row["hypnogram"], subject_id=row["subject_id"])
    feature_cfg = FeatureConfig(
        sigma_lo=cfg.sigma_lo, sigma_hi=cfg.sigma_hi, slow_wave_gate=cfg.slow_wave_gate
    )
    return extract_all(
        recording,
        hypnogram,
        label=row["label"],
        epoch_len=cfg.epoch_seconds,
        overlap=cfg.overlap,
        clip_uv=cfg.clip_uv,
        cfg=feature_cfg,
    )


def cmd_features(cfg: PipelineConfig) -> list[Path]:
    """Extract the 31 features per kept epoch, one CSV per channel."""
    out_root = Path(cfg.out)
    manifest_path = _require(out_root / "filtered" / "manifest.csv", "preprocess")
    rows = _read_stage_manifest(manifest_path, out_root)

    written = []
    for channel in cfg.channel_labels():
        channel_rows = [r for r in rows if r["channel"] == channel]
        if not channel_rows:
            raise StageOrderError(
                f"no preprocessed recordings for channel {channel}; rerun upstream stages"
            )
        results = _map_jobs(_features_one, [(cfg, r) for r in channel_rows], cfg.jobs)
        vectors = [v for chunk in results for v in chunk]
        path = out_root / f"features_{channel.lower()}.csv"
        write_feature_csv(vectors, path, comment=_comment(cfg))
        written.append(path)
    return written


# --- selection ---------------------------------------------------------------


def _primary_channel(cfg: PipelineConfig) -> str:
    # Statistics for the fused run are computed on the frontal channel.
    return "c4" if cfg.channel == "c4" else "fp2"


def cmd_select(cfg: PipelineConfig) -> tuple[Path, Path]:
    """Feature statistics and the selected feature list."""
    out_root = Path(cfg.out)
    features_path = _require(
        out_root / f"features_{_primary_channel(cfg)}.csv", "features"
    )
    vectors = read_feature_csv(features_path)
    stats = compute_feature_stats(vectors, per_subject_means=cfg.per_subject_means)
    sel_cfg = SelectionConfig(
        alpha_top=cfg.alpha_top,
        p_optimal=cfg.p_optimal,
        r_top=cfg.r_top,
        r_optimal=cfg.r_optimal,
        use_curated_set=cfg.curated_set,
    )
    selected = apply_rules(stats, sel_cfg)

    stats_path = out_root / "feature_stats.csv"
    selected_path = out_root / "selected.txt"
    write_feature_stats(stats, stats_path, comment=_comment(cfg))
    write_selected(selected, selected_path, comment=_comment(cfg))
    return stats_path, selected_path


# --- training / evaluation ----------------------------------------------------


def _load_table(cfg: PipelineConfig) -> tuple[list[FeatureVector], list[str]]:
    """Feature vectors and model input names for the configured channel.

    For the fused run the two channels' selected features are concatenated
    per (subject, epoch) into one wide vector with channel-prefixed names.
    """
    out_root = Path(cfg.out)
    selected = read_selected(_require(out_root / "selected.txt", "select"))
    if cfg.channel != "both":
        path = _require(out_root / f"features_{cfg.channel}.csv", "features")
        return read_feature_csv(path), selected

    tables = {}
    for key in ("fp2", "c4"):
        path = _require(out_root / f"features_{key}.csv", "features")
        tables[key] = {(v.subject_id, v.epoch_index): v for v in read_feature_csv(path)}
    names = [f"FP2_{n}" for n in selected] + [f"C4_{n}" for n in selected]
    joined = []
    for key in sorted(set(tables["fp2"]) & set(tables["c4"])):
        fp2, c4 = tables["fp2"][key], tables["c4"][key]
        values = {f"FP2_{n}": fp2.values[n] for n in selected}
        values.update({f"C4_{n}": c4.values[n] for n in selected})
        joined.append(FeatureVector(fp2.subject_id, fp2.epoch_index, fp2.label, values))
    if not joined:
        raise StageOrderError("fused run found no epochs present on both channels")
    return joined, names


def _shuffle_subject_labels(
    vectors: list[FeatureVector], seed: int
) -> list[FeatureVector]:
    """Permute the subject -> label map (fixed seed); a null-control knob."""
    subjects = sorted({v.subject_id for v in vectors})
    labels = [
        next(v.label for v in vectors if v.subject_id == s) for s in subjects
    ]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 999]))
    shuffled = dict(zip(subjects, [labels[i] for i in rng.permutation(len(labels))]))
    return [
        FeatureVector(v.subject_id, v.epoch_index, shuffled[v.subject_id], v.values)
        for v in vectors
    ]


def cmd_train(cfg: PipelineConfig) -> Path:
    """Train the classifier on the selected features."""
    out_root = Path(cfg.out)
    vectors, names = _load_table(cfg)
    if cfg.shuffle_labels:
        vectors = _shuffle_subject_labels(vectors, cfg.seed)

    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate(),
        max_epochs=cfg.max_epochs,
        early_stop_patience=cfg.patience,
        split=cfg.split,
        seed=cfg.seed,
        split_by_subject=not cfg.epoch_split,
    )
    model, history = train(vectors, names, train_cfg)

    model_path = out_root / f"model_{cfg.channel}.bin"
    save_model(model, model_path)

    history_path = out_root / f"history_{cfg.channel}.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {_comment(cfg)}\n")
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for row in history:
            writer.writerow(
                [row["epoch"]]
                + [repr(row[k]) for k in ("train_loss", "train_acc", "val_loss", "val_acc")]
            )

    labels_path = out_root / f"labels_{cfg.channel}.csv"
    by_subject = {}
    for v in sorted(vectors, key=lambda v: v.subject_id):
        by_subject.setdefault(v.subject_id, v.label)
    with open(labels_path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {_comment(cfg)}\n")
        writer = csv.writer(f)
        writer.writerow(["subject_id", "label"])
        for subject, label in sorted(by_subject.items()):
            writer.writerow([subject, label])
    return model_path


def _read_labels(path: Path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    return {r["subject_id"]: r["label"] for r in rows}


def cmd_eval(cfg: PipelineConfig) -> Path:
    """Confusion counts of the held-out split at epoch and subject level."""
    out_root = Path(cfg.out)
    model_path = _require(out_root / f"model_{cfg.channel}.bin", "train")
    labels_path = _require(out_root / f"labels_{cfg.channel}.csv", "train")
    vectors, names = _load_table(cfg)
    model = load_model(model_path, expected_feature_names=names)
    labels = _read_labels(labels_path)

    ordered = sorted(vectors, key=lambda v: (v.subject_id, v.epoch_index))
    x = np.array([[v.values[n] for n in names] for v in ordered])
    y = np.array([CLASS_NAMES.index(labels[v.subject_id]) for v in ordered])
    subjects = [v.subject_id for v in ordered]

    if cfg.epoch_split:
        in_train = row_split_mask(len(x), cfg.split, cfg.seed)
        val_subjects = None
    else:
        assignment = subject_split(labels, cfg.split, cfg.seed)
        in_train = np.array([assignment[s] == "train" for s in subjects])
        val_subjects = sorted(s for s, part in assignment.items() if part == "val")

    x_val, y_val = x[~in_train], y[~in_train]
    probs = model.predict_proba(x_val)
    predicted = np.argmax(probs, axis=1)
    epoch_cm = _confusion(y_val, predicted)

    if val_subjects is None:
        # Row-split compatibility mode has no held-out subjects; subject
        # metrics aggregate each subject's held-out rows.
        val_subject_rows = {}
        for subject, keep in zip(subjects, ~in_train):
            if keep:
                val_subject_rows.setdefault(subject, True)
        val_subjects = sorted(val_subject_rows)
    subject_truth, subject_pred = [], []
    for subject in val_subjects:
        rows = x[~in_train & np.array([s == subject for s in subjects])]
        if len(rows) == 0:
            continue
        label, _ = predict_subject(model, rows)
        subject_pred.append(CLASS_NAMES.index(label))
        subject_truth.append(CLASS_NAMES.index(labels[subject]))
    subject_cm = _confusion(np.array(subject_truth), np.array(subject_pred))

    eval_path = out_root / f"eval_{cfg.channel}.csv"
    with open(eval_path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {_comment(cfg)}\n")
        writer = csv.writer(f)
        writer.writerow(["level", "channel", "tp", "tn", "fp", "fn"])
        for level, cm in (("epoch", epoch_cm), ("subject", subject_cm)):
            writer.writerow([level, _channel_name(cfg.channel), cm.tp, cm.tn, cm.fp, cm.fn])
    return eval_path


def _channel_name(key: str) -> str:
    return {"fp2": "Fp2", "c4": "C4", "both": "both"}[key]


def _confusion(truth: np.ndarray, predicted: np.ndarray) -> ConfusionMatrix:
    tp = int(np.sum((truth == 1) & (predicted == 1)))
    tn = int(np.sum((truth == 0) & (predicted == 0)))
    fp = int(np.sum((truth == 0) & (predicted == 1)))
    fn = int(np.sum((truth == 1) & (predicted == 0)))
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


# --- reporting ---------------------------------------------------------------

_METRIC_FUNCS = (
    ("accuracy", accuracy),
    ("precision", precision),
    ("recall", recall),
    ("f1", f1),
    ("kappa", cohens_kappa),
)


def cmd_report(cfg: PipelineConfig) -> Path:
    """Derive metrics.csv, sleep_stats.csv and history.csv from stage outputs."""
    out_root = Path(cfg.out)
    eval_files = sorted(out_root.glob("eval_*.csv"))
    if not eval_files:
        raise StageOrderError("no eval_*.csv found: run `eval` first")
    _require(out_root / "feature_stats.csv", "select")
    history_src = _require(out_root / f"history_{cfg.channel}.csv", "train")

    rows = []
    for path in eval_files:
        with open(path, newline="", encoding="utf-8") as f:
            rows.extend(csv.DictReader(line for line in f if not line.startswith("#")))

    metrics_path = out_root / "metrics.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {_comment(cfg)}\n")
        writer = csv.writer(f)
        writer.writerow(["level", "channel", "accuracy", "precision", "recall", "f1", "kappa"])
        for row in rows:
            cm = ConfusionMatrix(
                tp=int(row["tp"]), tn=int(row["tn"]), fp=int(row["fp"]), fn=int(row["fn"])
            )
            cells = []
            for _, func in _METRIC_FUNCS:
                try:
                    cells.append(repr(func(cm)))
                except UndefinedMetric:
                    cells.append("undefined")
            writer.writerow([row["level"], row["channel"]] + cells)

    manifest_path = _require(out_root / "ingested" / "manifest.csv", "ingest")
    sleepstats_from_manifest(
        manifest_path, out_root / "sleep_stats.csv", comment=_comment(cfg), out_root=out_root
    )
    shutil.copyfile(history_src, out_root / "history.csv")
    return metrics_path


SLEEP_PARAMETERS = ("SE", "TST", "W", "S1", "S2", "S3", "S4", "REM")


def _hypnogram_parameters(hyp: Hypnogram) -> dict[str, float]:
    tst, se = sleep_features(hyp)
    values = {"SE": se, "TST": tst}
    for stage in ("W", "S1", "S2", "S3", "S4", "REM"):
        values[stage] = hyp.epoch_seconds * sum(1 for s in hyp.stages if s == stage)
    return values


def sleepstats_from_manifest(
    manifest_path: Path,
    out_path: Path,
    comment: str,
    out_root: Path | None = None,
) -> Path:
    """Per-class mean/std/min/max of SE, TST and per-stage seconds."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    seen: dict[str, tuple[str, str]] = {}
    for row in rows:
        hyp = row.get("hypnogram", "")
        if not hyp:
            continue
        candidate = Path(hyp)
        if not candidate.is_absolute():
            base = out_root if out_root is not None else manifest_path.parent
            candidate = Path(base) / candidate
        seen.setdefault(row["subject_id"], (row["label"], str(candidate)))

    by_class: dict[str, list[dict[str, float]]] = {}
    for subject, (label, hyp_path) in sorted(seen.items()):
        hyp = read_hypnogram(hyp_path, subject_id=subject)
        by_class.setdefault(label, []).append(_hypnogram_parameters(hyp))
    for label in CLASS_NAMES:
        if not by_class.get(label):
            raise InsufficientData(f"no hypnograms for class {label!r}")

    with open(out_path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(["class", "parameter", "mean", "std", "min", "max"])
        for label in sorted(by_class):
            table = by_class[label]
            for parameter in SLEEP_PARAMETERS:
                column = np.array([entry[parameter] for entry in table])
                writer.writerow(
                    [
                        label,
                        parameter,
                        repr(float(column.mean())),
                        repr(float(column.std())),
                        repr(float(column.min())),
                        repr(float(column.max())),
                    ]
                )
    return out_path


def cmd_sleepstats(cfg: PipelineConfig) -> Path:
    """Standalone sleep statistics from a cohort manifest."""
    manifest_path = Path(cfg.manifest) if cfg.manifest else Path(cfg.out) / "raw" / "manifest.csv"
    _require(manifest_path, "synth (or pass --manifest)")
    out_root = Path(cfg.out)
    out_root.mkdir(parents=True, exist_ok=True)
    return sleepstats_from_manifest(
        manifest_path, out_root / "sleep_stats.csv", comment=_comment(cfg)
    )
