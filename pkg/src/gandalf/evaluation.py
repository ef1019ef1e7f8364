"""Confusion-matrix metrics, split evaluation and the model comparison harness."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .core import TASK_CLASSES, Manifest, Split, read_manifest
from .errors import EmptyEvaluation, LabelError
from .nets import Discriminator, init_weights
from .train import LoadedModel, RunConfig, apply_norm_statistics, fit_classifier, load_split, norm_statistics

BETA = 2.0


def fbeta(precision: float, recall: float, beta: float = BETA) -> float:
    b2 = beta * beta
    denom = b2 * precision + recall
    return (1 + b2) * precision * recall / denom if denom > 0 else 0.0


def confusion(preds: Sequence[int], labels: Sequence[int], arity: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise LabelError("predictions and labels differ in length")
    for arr in (preds, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= arity):
            raise LabelError(f"class index outside [0, {arity})")
    m = np.zeros((arity, arity), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


@dataclass
class MetricsReport:
    task: int
    confusion: np.ndarray
    accuracy: float
    precision: float
    recall: float
    f2: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f2: list[float]
    n_samples: int
    zero_division: list[int] = field(default_factory=list)

    @property
    def class_names(self) -> tuple[str, ...]:
        return TASK_CLASSES.get(self.task, tuple(str(i) for i in range(self.task)))

    def to_record(self, name: str = "") -> dict:
        return {
            "name": name,
            "task": self.task,
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "f2": self.f2,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": self.confusion.tolist(),
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "per_class_f2": self.per_class_f2,
            "zero_division": self.zero_division,
        }

    def to_line(self, name: str = "") -> str:
        return json.dumps(self.to_record(name))

    def to_table(self) -> str:
        names = self.class_names
        w = max(6, *(len(n) for n in names))
        lines = [f"{self.task}-class task, {self.n_samples} subjects",
                 " " * (w + 2) + " ".join(f"{n:>{w}}" for n in names) + "   (predicted)"]
        for name, row in zip(names, self.confusion):
            lines.append(f"{name:>{w}}  " + " ".join(f"{v:>{w}d}" for v in row))
        lines.append("")
        lines.append(f"{'class':>{w}}  {'Prec':>6} {'Rec':>6} {'F2':>6}")
        for name, p, r, f in zip(names, self.per_class_precision, self.per_class_recall, self.per_class_f2):
            lines.append(f"{name:>{w}}  {p:6.3f} {r:6.3f} {f:6.3f}")
        lines.append("")
        lines.append(f"Acc {100 * self.accuracy:.1f}  F2 {self.f2:.2f}  Prec {self.precision:.2f}  Rec {self.recall:.2f}")
        return "\n".join(lines)


def metrics_from_confusion(matrix) -> MetricsReport:
    """Macro precision/recall over classes with support; F2 from the macro pair."""
    m = np.asarray(matrix, dtype=np.int64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or (m < 0).any():
        raise LabelError("confusion matrix must be square and nonnegative")
    n = int(m.sum())
    if n == 0:
        raise EmptyEvaluation("confusion matrix is empty")
    diag = np.diag(m).astype(float)
    rows = m.sum(axis=1).astype(float)
    cols = m.sum(axis=0).astype(float)
    zero_div = [int(j) for j in np.flatnonzero(cols == 0)]
    prec = np.divide(diag, cols, out=np.zeros_like(diag), where=cols > 0)
    rec = np.divide(diag, rows, out=np.zeros_like(diag), where=rows > 0)
    support = rows > 0
    macro_p = float(prec[support].mean())
    macro_r = float(rec[support].mean())
    return MetricsReport(
        task=m.shape[0],
        confusion=m,
        accuracy=float(diag.sum() / n),
        precision=macro_p,
        recall=macro_r,
        f2=fbeta(macro_p, macro_r),
        per_class_precision=[float(x) for x in prec],
        per_class_recall=[float(x) for x in rec],
        per_class_f2=[fbeta(p, r) for p, r in zip(prec, rec)],
        n_samples=n,
        zero_division=zero_div,
    )


def _manifest(manifest) -> Manifest:
    return manifest if isinstance(manifest, Manifest) else read_manifest(manifest)


def predict(model: LoadedModel, mri: torch.Tensor, batch: int = 1) -> np.ndarray:
    probs = [model.probabilities(mri[i:i + batch]) for i in range(0, len(mri), batch)]
    return torch.cat(probs).argmax(dim=-1).numpy()


def evaluate(checkpoint, manifest, split: Split | str = "test", task: int | None = None) -> MetricsReport:
    model = checkpoint if isinstance(checkpoint, LoadedModel) else LoadedModel(checkpoint)
    task = model.task if task is None else int(task)
    if task != model.task:
        raise LabelError(f"checkpoint was trained for the {model.task}-class task, not {task}")
    data = load_split(_manifest(manifest), split, task, model.g_spec.tracer)
    if len(data) == 0:
        raise EmptyEvaluation(f"split {Split(split).value!r} has no subjects for the {task}-class task")
    preds = predict(model, data.mri)
    return metrics_from_confusion(confusion(preds, data.labels.numpy(), task))


def probe_classifier(manifest, task: int = 4, use_pet: bool = False, cfg: RunConfig | None = None,
                     split: Split | str = "test") -> MetricsReport:
    """Train the discriminator architecture as a plain classifier and score ``split``.

    With ``use_pet=False`` the PET branch sees zeros, which measures how much
    stage information a classifier of this size extracts from MRI alone.
    """
    cfg = cfg or RunConfig(task=task)
    manifest = _manifest(manifest)
    train = load_split(manifest, Split.TRAIN, task, cfg.tracer)
    test = load_split(manifest, split, task, cfg.tracer)
    if len(train) == 0 or len(test) == 0:
        raise EmptyEvaluation("probe needs nonempty train and evaluation splits")
    from .nets import build_discriminator

    torch.manual_seed(cfg.seed)
    spec = build_discriminator(cfg.scale, n_classes=task, width=cfg.width)
    clf = init_weights(Discriminator(spec), 2 * cfg.seed + 5)

    def pet_of(d):
        return d.pet if use_pet else torch.zeros_like(d.pet)

    rng = np.random.default_rng([cfg.seed, 0x9B0B])
    fit_classifier(clf, train.mri, pet_of(train), train.labels, cfg.epochs, cfg, rng)
    apply_norm_statistics(clf, norm_statistics(clf, train.mri, pet_of(train)))
    clf.eval()
    with torch.no_grad():
        preds = torch.cat([clf(test.mri[i:i + 1], pet_of(test)[i:i + 1])[1] for i in range(len(test))])
    return metrics_from_confusion(confusion(preds.argmax(-1).numpy(), test.labels.numpy(), task))


def mri_probe_baseline(manifest, task: int = 4, cfg: RunConfig | None = None) -> MetricsReport:
    return probe_classifier(manifest, task, use_pet=False, cfg=cfg)


def comparison_table(reports: Mapping[str, MetricsReport]) -> str:
    """Side-by-side summary in the column order Acc, F2, Prec, Rec."""
    name_w = max(8, *(len(n) for n in reports))
    head = f"{'Method':<{name_w}}  {'N':>5}  {'Acc':>5}  {'F2':>5}  {'Prec':>5}  {'Rec':>5}"
    lines = [head, "-" * len(head)]
    for name, r in reports.items():
        lines.append(f"{name:<{name_w}}  {r.n_samples:>5d}  {100 * r.accuracy:5.1f}  {r.f2:5.2f}  "
                     f"{r.precision:5.2f}  {r.recall:5.2f}")
    return "\n".join(lines)


def write_reports(path: str | Path, reports: Mapping[str, MetricsReport]) -> Path:
    path = Path(path)
    path.write_text("".join(r.to_line(name) + "\n" for name, r in reports.items()), encoding="utf-8")
    return path
