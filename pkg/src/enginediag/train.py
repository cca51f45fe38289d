"""Dataset splitting, the training loop, evaluation metrics, and sweeps.

The split policy follows the corpus design: raw sources are partitioned
80/20 into validation and test (stratified by label combination where
counts allow), and the training set is built exclusively from augmented
copies of validation clips.  A fixed seed makes a single-threaded run
bit-reproducible; feature extraction may fan out over threads because
extractors are pure.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import features as features_mod
from . import models as models_mod
from . import nn
from .audio import Clip, load_clips
from .errors import EmptyManifest, EmptySplit, NonFiniteLoss
from .labels import CLASS_COUNTS, TASK_NAMES, LabelSet

EPOCH_LOG_HEADER = ["epoch", "train_loss", "acc_fuel", "acc_config",
                    "acc_cyl", "acc_turbo", "acc_misfire"]
_LOG_TASKS = ("fuel", "config", "cylinders", "aspiration", "misfire")
_LABEL_FIELDS = ("fuel", "config", "cylinders", "aspiration", "status")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int | None = None  # None: 128, except spectrogram 64/32
    learning_rate: float = 0.001
    dropout_p: float = 0.5
    augment: bool = True
    k_augment: int = 8
    seed: int = 0
    architecture: str = "parallel"
    feature_kind: str = "mfcc"
    cascade_mode: str = "soft"

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.k_augment < 0 or self.learning_rate < 0:
            raise ValueError("epochs, k_augment and learning_rate must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p {self.dropout_p} outside [0, 1)")
        if self.architecture not in ("naive", "parallel", "cascade"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.cascade_mode not in models_mod.CASCADE_MODES:
            raise ValueError(f"unknown cascade mode {self.cascade_mode!r}")

    def effective_batch_size(self) -> int:
        """Explicit size wins; spectrogram models drop to 64 (parallel)
        or 32 (cascade) to bound activation memory."""
        if self.batch_size is not None:
            return self.batch_size
        if self.feature_kind == "spectrogram":
            return 32 if self.architecture == "cascade" else 64
        return 128


@dataclass
class ManifestRow:
    file: str
    source_id: str
    labels: LabelSet
    split: str | None = None


def read_manifest(path) -> list[ManifestRow]:
    """Parse a UTF-8 JSON-lines manifest; absent label fields mean masked."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            labels = LabelSet(**{f: obj.get(f) for f in _LABEL_FIELDS})
            rows.append(ManifestRow(file=obj["file"], source_id=obj["source_id"],
                                    labels=labels, split=obj.get("split")))
    if not rows:
        raise EmptyManifest(f"{path} holds no rows")
    return rows


def write_manifest(rows: list[ManifestRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            obj = {"file": row.file, "source_id": row.source_id}
            for f in _LABEL_FIELDS:
                value = getattr(row.labels, f)
                if value is not None:
                    obj[f] = value
            if row.split is not None:
                obj["split"] = row.split
            fh.write(json.dumps(obj) + "\n")


def split_dataset(rows: list[ManifestRow], seed: int = 0,
                  val_fraction: float = 0.8) -> list[ManifestRow]:
    """Assign validation/test splits to raw sources, 80/20 by default.

    Sources (not clips) are partitioned so all clips of a recording share
    one split.  Within each label combination the quota is val_fraction
    of the group; fractional remainders are settled largest-first so the
    global validation count is exactly floor(val_fraction * n_sources).
    """
    if not rows:
        raise EmptyManifest("no rows to split")
    by_source: dict[str, list[ManifestRow]] = {}
    for row in rows:
        by_source.setdefault(row.source_id, []).append(row)
    combos: dict[tuple, list[str]] = {}
    for source_id in sorted(by_source):
        labels = by_source[source_id][0].labels
        key = tuple(getattr(labels, f) for f in _LABEL_FIELDS)
        combos.setdefault(key, []).append(source_id)

    n_sources = len(by_source)
    n_val = int(np.floor(val_fraction * n_sources))
    rng = np.random.default_rng(seed)

    quotas = {}
    remainders = []
    taken = 0
    for key in sorted(combos, key=str):
        exact = val_fraction * len(combos[key])
        quotas[key] = int(np.floor(exact))
        taken += quotas[key]
        remainders.append((exact - quotas[key], str(key), key))
    remainders.sort(key=lambda r: (-r[0], r[1]))
    for _, _, key in remainders[:max(0, n_val - taken)]:
        quotas[key] += 1

    assignment = {}
    for key in sorted(combos, key=str):
        sources = list(combos[key])
        rng.shuffle(sources)
        for i, source_id in enumerate(sources):
            assignment[source_id] = "validation" if i < quotas[key] else "test"

    return [replace(row, split=assignment[row.source_id]) for row in rows]


def load_split(rows: list[ManifestRow], split: str,
               base_dir=None) -> tuple[list[Clip], list[LabelSet]]:
    """Decode and chunk every file of one split; labels repeat per clip."""
    base = Path(base_dir) if base_dir is not None else Path(".")
    clips, labels = [], []
    for row in rows:
        if row.split != split:
            continue
        path = Path(row.file)
        if not path.is_absolute():
            path = base / path
        for clip in load_clips(path, source_id=row.source_id, split=split):
            clips.append(clip)
            labels.append(row.labels)
    if not clips:
        raise EmptySplit(f"split {split!r} holds no clips")
    return clips, labels


def _clip_sha(clip: Clip) -> str:
    return hashlib.sha256(clip.samples.tobytes()).hexdigest()


def clip_feature(clip, kind: str, cache_dir=None) -> np.ndarray:
    """Extract one feature as float32, optionally via an on-disk cache
    keyed by clip content hash (stored in the binary tensor format)."""
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        key = hashlib.sha256(clip.samples.tobytes() + kind.encode()).hexdigest()[:32]
        path = cache_dir / f"{key}.ftns"
        if path.exists():
            return features_mod.load_tensor(path).data.astype(np.float32)
        tensor = features_mod.extract(clip, kind)
        features_mod.save_tensor(path, tensor)
        return tensor.data.astype(np.float32)
    return features_mod.extract(clip, kind).data.astype(np.float32)


def features_for_clips(clips, kind: str, cache_dir=None,
                       threads: int = 1) -> np.ndarray:
    """Stack per-clip features into a batch array: (n, 1, w) or (n, 1, h, w)."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mats = list(pool.map(lambda c: clip_feature(c, kind, cache_dir), clips))
    else:
        mats = [clip_feature(c, kind, cache_dir) for c in clips]
    stacked = np.stack(mats)
    if stacked.shape[1] == 1:  # 1D kinds: (n, 1, w)
        return stacked
    return stacked[:, None, :, :]  # 2D kinds: (n, 1, h, w)


def _targets_and_masks(labels: list[LabelSet]):
    targets, masks = {}, {}
    for task in TASK_NAMES:
        idx = [l.class_index(task) for l in labels]
        masks[task] = np.array([i is not None for i in idx], dtype=bool)
        targets[task] = np.array([0 if i is None else i for i in idx], dtype=np.int64)
    return targets, masks


def _forward(model, x, training, labels=None, cascade_mode="soft"):
    if model.architecture == "cascade":
        return model.forward(x, training=training, mode=cascade_mode, labels=labels)
    return model.forward(x, training=training)


def predict_classes(model, x: np.ndarray, labels=None, cascade_mode: str = "soft",
                    batch_size: int = 256) -> dict[str, np.ndarray]:
    """Frozen-graph argmax predictions, batched to bound memory."""
    if model.architecture == "naive":
        return model.predict(len(x))
    preds = {task: [] for task in TASK_NAMES}
    for start in range(0, len(x), batch_size):
        stop = min(start + batch_size, len(x))
        batch_labels = labels[start:stop] if labels is not None else None
        outs = _forward(model, x[start:stop], training=False,
                        labels=batch_labels, cascade_mode=cascade_mode)
        for task in TASK_NAMES:
            preds[task].append(outs[task].argmax(axis=1))
    return {task: np.concatenate(preds[task]) for task in TASK_NAMES}


# --- metrics -------------------------------------------------------------

@dataclass
class TaskMetrics:
    """Accuracy, macro precision/recall, and the confusion matrix
    (rows = actual, cols = predicted) for one task."""

    accuracy: float
    precision: float
    recall: float
    confusion: np.ndarray
    support: int

    def row_percentages(self) -> np.ndarray:
        sums = self.confusion.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = 100.0 * self.confusion / sums
        return np.where(sums > 0, pct, 0.0)


@dataclass
class MetricsReport:
    tasks: dict[str, TaskMetrics] = field(default_factory=dict)

    def accuracy(self, task: str) -> float:
        return self.tasks[task].accuracy

    def to_json_dict(self) -> dict:
        out = {}
        for task, m in self.tasks.items():
            out[task] = {
                "accuracy": m.accuracy,
                "precision": m.precision,
                "recall": m.recall,
                "support": m.support,
                "confusion": m.confusion.tolist(),
                "row_percentages": m.row_percentages().tolist(),
            }
        return out


def compute_task_metrics(y_true: np.ndarray, y_pred: np.ndarray,
                         n_classes: int) -> TaskMetrics:
    """Confusion counts plus macro averages.

    Macro recall averages over classes present in the evaluation set;
    macro precision additionally requires the class to have been
    predicted at least once (0/0 columns are excluded, matching how
    zero-support classes are excluded).
    """
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    row_sums = confusion.sum(axis=1)
    col_sums = confusion.sum(axis=0)
    diag = np.diag(confusion)
    recalls = [diag[c] / row_sums[c] for c in range(n_classes) if row_sums[c] > 0]
    precisions = [diag[c] / col_sums[c] for c in range(n_classes)
                  if row_sums[c] > 0 and col_sums[c] > 0]
    return TaskMetrics(
        accuracy=accuracy,
        precision=float(np.mean(precisions)) if precisions else 0.0,
        recall=float(np.mean(recalls)) if recalls else 0.0,
        confusion=confusion,
        support=total,
    )


def metrics_from_predictions(preds: dict[str, np.ndarray],
                             labels: list[LabelSet]) -> MetricsReport:
    targets, masks = _targets_and_masks(labels)
    report = MetricsReport()
    for task in TASK_NAMES:
        mask = masks[task]
        if task not in preds or not mask.any():
            continue
        report.tasks[task] = compute_task_metrics(
            targets[task][mask], np.asarray(preds[task])[mask], CLASS_COUNTS[task])
    return report


# --- training ------------------------------------------------------------

@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    history: list[dict]
    train_size: int
    validation_size: int


def _build_training_data(config: TrainConfig, rows, base_dir):
    val_clips, val_labels = load_split(rows, "validation", base_dir)
    has_train_rows = any(r.split == "train" for r in rows)
    if has_train_rows:
        train_clips, train_labels = load_split(rows, "train", base_dir)
    elif config.augment:
        label_by_clip = {(c.source_id, c.chunk_index): l
                         for c, l in zip(val_clips, val_labels)}
        pairs = augment_mod.build_train_set(val_clips, config.k_augment, config.seed)
        train_clips = [clip for clip, _ in pairs]
        train_labels = [label_by_clip[source_key] for _, source_key in pairs]
        val_hashes = {_clip_sha(c) for c in val_clips}
        collisions = sum(_clip_sha(c) in val_hashes for c in train_clips)
        if collisions:
            raise RuntimeError(
                f"{collisions} augmented clips are bit-identical to validation clips")
    else:
        train_clips, train_labels = list(val_clips), list(val_labels)
    return train_clips, train_labels, val_clips, val_labels


def _save_model(path, model, optimizer=None):
    arrays = {}
    if model.architecture != "naive":
        arrays.update({n: p.data for n, p in model.named_parameters().items()})
        arrays.update(model.named_buffers())
    state = None
    if optimizer is not None:
        state = optimizer.state_dict()
    nn.write_checkpoint(path, model.descriptor(), arrays, state)


def load_model(checkpoint_path, seed: int = 0):
    """Rebuild a model from a checkpoint (parameters and running stats)."""
    descriptor, arrays, _ = nn.read_checkpoint(checkpoint_path)
    model = models_mod.from_descriptor(descriptor, seed=seed)
    if model.architecture != "naive":
        params = model.named_parameters()
        for name, p in params.items():
            p.data = arrays[name].astype(p.data.dtype)
        model.set_buffers(arrays)
    return model


def train(config: TrainConfig, rows: list[ManifestRow], out_dir,
          base_dir=None, cache_dir=None, threads: int = 1,
          log_fn=None) -> TrainResult:
    """Train per the config and write final/best checkpoints plus a CSV
    epoch log (best = highest validation misfire accuracy)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_clips, train_labels, val_clips, val_labels = _build_training_data(
        config, rows, base_dir)

    kind = config.feature_kind
    train_x = features_for_clips(train_clips, kind, cache_dir, threads)
    val_x = features_for_clips(val_clips, kind, cache_dir, threads)
    train_targets, train_masks = _targets_and_masks(train_labels)

    final_path = out_dir / "final.ckpt"
    best_path = out_dir / "best.ckpt"
    log_path = out_dir / "train_log.csv"
    history: list[dict] = []

    if config.architecture == "naive":
        model = models_mod.NaiveBaseline().fit(train_labels)
        _save_model(final_path, model)
        _save_model(best_path, model)
        preds = predict_classes(model, val_x, val_labels)
        report = metrics_from_predictions(preds, val_labels)
        entry = {"epoch": 0, "train_loss": 0.0}
        entry.update({f"acc_{t}": report.accuracy(t) if t in report.tasks else ""
                      for t in _LOG_TASKS})
        history.append(entry)
        _write_log(log_path, history)
        return TrainResult(final_path, best_path, log_path, history,
                           len(train_clips), len(val_clips))

    builder = (models_mod.build_cascade if config.architecture == "cascade"
               else models_mod.build_parallel)
    model = builder(kind, config.dropout_p, seed=config.seed)
    model.reseed_dropout(config.seed)
    params = model.named_parameters()
    optimizer = nn.Adam(list(params.values()), lr=config.learning_rate)

    batch_size = config.effective_batch_size()
    n = len(train_clips)
    best_misfire = -1.0
    for epoch in range(config.epochs):
        order = np.random.default_rng(config.seed + epoch).permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            x = train_x[batch]
            batch_labels = [train_labels[i] for i in batch]
            outs = _forward(model, x, training=True, labels=batch_labels,
                            cascade_mode=config.cascade_mode)
            total = 0.0
            grads = {}
            for task in TASK_NAMES:
                mask = train_masks[task][batch]
                if not mask.any():
                    continue
                loss, g = nn.nll_loss(outs[task], train_targets[task][batch], mask)
                total += loss
                grads[task] = g
            if not np.isfinite(total):
                ids = [c.source_id for c in (train_clips[i] for i in batch[:8])]
                raise NonFiniteLoss(
                    f"loss {total} at epoch {epoch}, batch {n_batches}; "
                    f"first clips: {ids}")
            optimizer.zero_grad()
            model.backward(grads)
            optimizer.step()
            epoch_loss += total
            n_batches += 1

        preds = predict_classes(model, val_x, val_labels,
                                cascade_mode=config.cascade_mode)
        report = metrics_from_predictions(preds, val_labels)
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        entry.update({f"acc_{t}": report.accuracy(t) if t in report.tasks else ""
                      for t in _LOG_TASKS})
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)

        misfire_acc = report.accuracy("misfire") if "misfire" in report.tasks else 0.0
        if misfire_acc > best_misfire:
            best_misfire = misfire_acc
            _save_model(best_path, model, optimizer)

    _save_model(final_path, model, optimizer)
    if best_misfire < 0:  # zero epochs: final weights are the best seen
        _save_model(best_path, model, optimizer)
    _write_log(log_path, history)
    return TrainResult(final_path, best_path, log_path, history,
                       len(train_clips), len(val_clips))


def _write_log(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_HEADER)
        for entry in history:
            writer.writerow([entry["epoch"], entry["train_loss"]] +
                            [entry[f"acc_{t}"] for t in _LOG_TASKS])


def evaluate(checkpoint_path, rows: list[ManifestRow], split: str,
             base_dir=None, cache_dir=None, threads: int = 1,
             cascade_mode: str = "soft") -> MetricsReport:
    """Metrics of a checkpointed model over one manifest split."""
    model = load_model(checkpoint_path)
    clips, labels = load_split(rows, split, base_dir)
    if model.architecture == "naive":
        preds = model.predict(len(clips))
    else:
        x = features_for_clips(clips, model.feature_kind, cache_dir, threads)
        preds = predict_classes(model, x, labels, cascade_mode=cascade_mode)
    return metrics_from_predictions(preds, labels)


def sweep(base_config: TrainConfig, grid: dict, rows: list[ManifestRow],
          out_dir, base_dir=None, cache_dir=None, threads: int = 1) -> list[dict]:
    """Full train+evaluate per grid point, sorted by validation misfire
    accuracy (grid keys: epochs, learning_rate, dropout_p)."""
    out_dir = Path(out_dir)
    allowed = ("epochs", "learning_rate", "dropout_p")
    for key in grid:
        if key not in allowed:
            raise ValueError(f"sweep grid key {key!r} not one of {allowed}")
    keys = sorted(grid)
    results = []
    for i, values in enumerate(product(*(grid[k] for k in keys))):
        overrides = dict(zip(keys, values))
        config = replace(base_config, **overrides)
        result = train(config, rows, out_dir / f"run{i:03d}",
                       base_dir, cache_dir, threads)
        report = evaluate(result.best_checkpoint, rows, "validation",
                          base_dir, cache_dir, threads,
                          cascade_mode=config.cascade_mode)
        entry = {
            "run": i,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "dropout_p": config.dropout_p,
            "architecture": config.architecture,
            "feature_kind": config.feature_kind,
            "seed": config.seed,
            "checkpoint": str(result.best_checkpoint),
        }
        for task in TASK_NAMES:
            entry[f"acc_{task}"] = (report.accuracy(task)
                                    if task in report.tasks else None)
        results.append(entry)
    results.sort(key=lambda e: -(e["acc_misfire"] or 0.0))
    return results
