"""Training loop, evaluation metrics, and whole-model gradient checking.

Metrics come from the integer confusion matrix alone and are computed in
exact rational arithmetic before one final float conversion, so fixed
confusion matrices yield bit-exact expected values. UAR and macro-F1
average over classes with nonzero support.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, DatasetSplit
from .errors import DivergenceError, ValidationError
from .tensor import add, backward, cross_entropy_logits, finite_diff_grad, scale, zero_grads
from .tokens import SALT_SHUFFLE, assemble, mix_seed

_METRIC_KEYS = ("uar", "acc", "f1")


@dataclass
class TrainConfig:
    """Optimizer and loop settings; defaults follow the reference setup
    (Adam, lr 1e-4, batch 32, 30 epochs)."""

    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1
    early_metric: str = "uar"

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ValidationError("batch_size, epochs, eval_every must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValidationError("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.early_metric not in _METRIC_KEYS:
            raise ValidationError(f"early_metric must be one of {_METRIC_KEYS}")


@dataclass
class MetricsReport:
    accuracy: float
    uar: float
    macro_f1: float
    per_class_recall: List[Optional[float]]
    confusion: np.ndarray

    def metric(self, key: str) -> float:
        if key == "uar":
            return self.uar
        if key == "acc":
            return self.accuracy
        if key == "f1":
            return self.macro_f1
        raise ValidationError(f"unknown metric {key!r}")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "uar": self.uar,
            "macro_f1": self.macro_f1,
            "per_class_recall": self.per_class_recall,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        lines = []
        lines.append(f"{'accuracy':<12} {self.accuracy:.6f}")
        lines.append(f"{'uar':<12} {self.uar:.6f}")
        lines.append(f"{'macro_f1':<12} {self.macro_f1:.6f}")
        for c, r in enumerate(self.per_class_recall):
            shown = "n/a" if r is None else f"{r:.6f}"
            lines.append(f"{f'recall[{c}]':<12} {shown}")
        lines.append("confusion (rows = true, cols = predicted):")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(x):>6d}" for x in row))
        return "\n".join(lines)


def metrics_from_confusion(confusion) -> MetricsReport:
    """Exact metrics from an integer confusion matrix (rows = true class)."""
    c = np.asarray(confusion, dtype=np.int64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError(f"confusion matrix must be square, got {c.shape}")
    if (c < 0).any():
        raise ValidationError("confusion counts must be non-negative")
    total = int(c.sum())
    if total == 0:
        raise ValidationError("confusion matrix is empty")
    supports = c.sum(axis=1)
    predicted = c.sum(axis=0)
    accuracy = Fraction(int(np.trace(c)), total)
    recalls: List[Optional[Fraction]] = []
    f1s: List[Fraction] = []
    for i in range(c.shape[0]):
        tp = int(c[i, i])
        support = int(supports[i])
        if support == 0:
            recalls.append(None)
            continue
        recalls.append(Fraction(tp, support))
        fp = int(predicted[i]) - tp
        fn = support - tp
        f1s.append(Fraction(2 * tp, 2 * tp + fp + fn))
    present = [r for r in recalls if r is not None]
    if not present:
        raise ValidationError("no class has support > 0")
    uar = sum(present, Fraction(0)) / len(present)
    macro_f1 = sum(f1s, Fraction(0)) / len(f1s)
    return MetricsReport(
        accuracy=float(accuracy),
        uar=float(uar),
        macro_f1=float(macro_f1),
        per_class_recall=[None if r is None else float(r) for r in recalls],
        confusion=c,
    )


def _predict_one(model, sample) -> int:
    if hasattr(model, "predict_sample"):
        return int(model.predict_sample(sample))
    return int(np.argmax(model.forward_sample(sample).data))


def evaluate(model, dataset: Dataset, split_ids: Sequence[int], seed: int = 0) -> MetricsReport:
    """Deterministic evaluation: fixed variant 0, fixed token seed."""
    ids = list(split_ids)
    if not ids:
        raise ValidationError("evaluation split is empty")
    num_classes = dataset.header.num_classes
    by_id = {r.sample_id: r for r in dataset.records}
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for sid in ids:
        rec = by_id.get(sid)
        if rec is None:
            raise ValidationError(f"split references unknown sample_id {sid}")
        if not 0 <= rec.label < num_classes:
            raise ValidationError(f"label {rec.label} out of range [0, {num_classes})")
        ts = assemble(rec, model.config, seed, eval_mode=True)
        confusion[rec.label, _predict_one(model, ts)] += 1
    return metrics_from_confusion(confusion)


def _adam_state(tconfig: TrainConfig):
    from .tensor import AdamState

    return AdamState(lr=tconfig.lr, beta1=tconfig.beta1, beta2=tconfig.beta2, epsilon=tconfig.eps)


def train(
    model,
    dataset: Dataset,
    splits: DatasetSplit,
    tconfig: TrainConfig,
) -> Tuple[object, List[dict]]:
    """Mini-batch cross-entropy training with Adam and per-epoch resampling.

    Fully deterministic in tconfig.seed: shuffles, variant choices, and row
    sampling all derive from it. Returns (checkpoint with the best dev
    metric, per-epoch history). With an empty dev split the final model is
    returned and history carries no dev entries.
    """
    from .tensor import adam_step

    train_ids = list(splits.train)
    if not train_ids:
        raise ValidationError("training split is empty")
    by_id = {r.sample_id: r for r in dataset.records}
    for sid in train_ids:
        if sid not in by_id:
            raise ValidationError(f"split references unknown sample_id {sid}")

    state = _adam_state(tconfig)
    history: List[dict] = []
    best_metric = -math.inf
    best_model = None

    for epoch in range(tconfig.epochs):
        order_rng = np.random.default_rng(mix_seed(tconfig.seed, epoch, SALT_SHUFFLE))
        order = [train_ids[i] for i in order_rng.permutation(len(train_ids))]
        epoch_seed = mix_seed(tconfig.seed, epoch)
        loss_sum = 0.0
        for b0 in range(0, len(order), tconfig.batch_size):
            batch = order[b0 : b0 + tconfig.batch_size]
            zero_grads(model.params)
            losses = []
            for sid in batch:
                rec = by_id[sid]
                ts = assemble(rec, model.config, epoch_seed, eval_mode=False)
                losses.append(cross_entropy_logits(model.forward_sample(ts), rec.label))
            total = losses[0]
            for loss in losses[1:]:
                total = add(total, loss)
            mean_loss = scale(total, 1.0 / len(batch))
            value = float(mean_loss.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b0 // tconfig.batch_size}",
                    epoch=epoch,
                    batch=b0 // tconfig.batch_size,
                )
            backward(mean_loss)
            adam_step(model.params, state, zero_grads_after=True)
            loss_sum += value * len(batch)
        entry = {"epoch": epoch, "train_loss": loss_sum / len(order), "dev": None}
        is_last = epoch == tconfig.epochs - 1
        if splits.dev and (epoch % tconfig.eval_every == 0 or is_last):
            report = evaluate(model, dataset, splits.dev, seed=tconfig.seed)
            entry["dev"] = report.to_dict()
            value = report.metric(tconfig.early_metric)
            if value > best_metric:
                best_metric = value
                best_model = copy.deepcopy(model)
        history.append(entry)

    if best_model is None:
        best_model = copy.deepcopy(model)
    return best_model, history


def write_history(history: List[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for entry in history:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


@dataclass
class GradCheckReport:
    """Backward-vs-finite-difference comparison over every parameter.

    Relative error per parameter is ||g_ad - g_fd|| / max(||g_ad||,
    ||g_fd||, 1e-12) in the 2-norm; the check passes when the max over
    parameters stays below tolerance.
    """

    tolerance: float
    max_rel_error: float
    worst_param: str
    per_param: Dict[str, float] = field(default_factory=dict)
    failing: List[str] = field(default_factory=list)
    passed: bool = False

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"gradient check: {status} "
            f"(max rel error {self.max_rel_error:.3e} vs tolerance {self.tolerance:.1e}, "
            f"worst parameter {self.worst_param})"
        ]
        for name in self.failing:
            lines.append(f"  exceeds tolerance: {name} ({self.per_param[name]:.3e})")
        return "\n".join(lines)


def grad_check_model(model, sample, tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare backward() gradients against central finite differences.

    Intended for tiny models (a few thousand parameters); runs two forward
    passes per scalar parameter. Failures are reported, never raised.
    """
    names = sorted(model.params)
    zero_grads(model.params)
    loss = cross_entropy_logits(model.forward_sample(sample), sample.label)
    backward(loss)
    analytic = {}
    for n in names:
        t = model.params[n].tensor
        analytic[n] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
    zero_grads(model.params)

    sizes = [model.params[n].tensor.data.size for n in names]
    x0 = np.concatenate([model.params[n].tensor.data.ravel() for n in names])

    def set_vector(x):
        off = 0
        for n, s in zip(names, sizes):
            t = model.params[n].tensor
            t.data[...] = x[off : off + s].reshape(t.data.shape)
            off += s

    def f(x):
        set_vector(x)
        return float(cross_entropy_logits(model.forward_sample(sample), sample.label).data)

    try:
        fd = finite_diff_grad(f, x0, h)
    finally:
        set_vector(x0)

    per_param: Dict[str, float] = {}
    off = 0
    for n, s in zip(names, sizes):
        g_fd = fd[off : off + s]
        g_ad = analytic[n].ravel()
        off += s
        denom = max(float(np.linalg.norm(g_ad)), float(np.linalg.norm(g_fd)), 1e-12)
        per_param[n] = float(np.linalg.norm(g_ad - g_fd)) / denom
    worst = max(per_param, key=per_param.get)
    failing = sorted(n for n, e in per_param.items() if e >= tolerance)
    return GradCheckReport(
        tolerance=tolerance,
        max_rel_error=per_param[worst],
        worst_param=worst,
        per_param=per_param,
        failing=failing,
        passed=per_param[worst] < tolerance,
    )
