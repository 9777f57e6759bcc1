"""Training loop, optimizers, evaluation and the finite-difference harness.

One dataset record is one unit: its m schema instances are scored in a
single step and their tables flattened jointly for the loss.  Evaluation
decodes every unit and reports exact-match micro metrics per task.
"""

from __future__ import annotations

import math
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .data import DatasetRecord, Vocabulary
from .errors import TrainingDiverged, ValidationError
from .model import ModelConfig, UbertModel, bce_loss
from .schema import SchemaInstance, TaskKind, build_batch
from .tables import (
    ROLES_FOR_TASK,
    Annotation,
    EntitySet,
    LabelFlag,
    RelationSet,
    StructureTable,
    decode_annotation,
    empty_annotation,
    encode_annotation,
    is_coupling_ambiguous,
    logits_from_targets,
)

OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_unit_size: int = 1
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float | None = 5.0
    seed: int = 0
    threshold: float = 0.5
    pos_weight: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ValidationError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not isinstance(self.batch_unit_size, int) or self.batch_unit_size < 1:
            raise ValidationError(f"batch_unit_size must be a positive integer, got {self.batch_unit_size!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValidationError(f"grad_clip_norm must be positive or None, got {self.grad_clip_norm}")
        if self.pos_weight <= 0:
            raise ValidationError(f"pos_weight must be positive, got {self.pos_weight}")

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown train config fields: {', '.join(sorted(unknown))}")
        return cls(**obj)


# --------------------------- dataset compilation ---------------------------


@dataclass
class CompiledInstance:
    instance: SchemaInstance
    token_ids: np.ndarray
    target_tables: list[StructureTable]
    gold: Annotation


@dataclass
class CompiledUnit:
    record_index: int
    task: TaskKind
    instances: list[CompiledInstance]


def compile_units(records: Sequence[DatasetRecord], vocab: Vocabulary) -> list[CompiledUnit]:
    """Tokenize, id-encode and gold-encode every record once, up front."""
    units = []
    for idx, record in enumerate(records):
        batch = build_batch(record.task, list(record.categories), record.text)
        instances = []
        for instance in batch:
            gold = record.gold.get(instance.category, empty_annotation(record.task))
            instances.append(
                CompiledInstance(
                    instance=instance,
                    token_ids=vocab.encode_instance(instance),
                    target_tables=encode_annotation(record.task, gold, instance),
                    gold=gold,
                )
            )
        units.append(CompiledUnit(record_index=idx, task=record.task, instances=instances))
    return units


def max_unit_length(records: Sequence[DatasetRecord]) -> int:
    longest = 0
    for record in records:
        for instance in build_batch(record.task, list(record.categories), record.text):
            longest = max(longest, len(instance))
    return longest


# --------------------------- optimizers ---------------------------


class _Sgd:
    def step(self, params: OrderedDict, lr: float) -> None:
        for t in params.values():
            if t.grad is not None:
                t.data -= lr * t.grad


class _Adam:
    def __init__(self, beta1: float, beta2: float, eps: float):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: OrderedDict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in params.items():
            if tensor.grad is None:
                continue
            g = tensor.grad
            m = self.m.setdefault(name, np.zeros_like(tensor.data))
            v = self.v.setdefault(name, np.zeros_like(tensor.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return _Sgd()
    return _Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)


def _clip_gradients(params: OrderedDict, max_norm: float | None) -> float:
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = math.sqrt(total)
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= factor
    return norm


def _unit_loss(tape: Tape, model: UbertModel, unit: CompiledUnit, pos_weight: float) -> Tensor:
    scores = []
    targets = []
    for ci in unit.instances:
        scores.extend(model.score_logits(tape, ci.token_ids, ROLES_FOR_TASK[unit.task]))
        targets.extend(ci.target_tables)
    return bce_loss(tape, scores, targets, pos_weight)


def train(
    model: UbertModel,
    records: Sequence[DatasetRecord],
    config: TrainConfig,
    vocab: Vocabulary,
) -> tuple[UbertModel, list[float]]:
    """Optimize the model in place; returns it with the per-epoch loss history.

    Shuffling is unit-level and seeded; each step scores `batch_unit_size`
    units and applies one optimizer update.  A non-finite loss aborts with
    diagnostics.
    """
    units = compile_units(records, vocab)
    if not units:
        raise ValidationError("training requires at least one record")
    optimizer = _make_optimizer(config)
    rng = random.Random(config.seed)
    order = list(range(len(units)))
    history = []
    for epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_unit_size):
            tape = Tape()
            model.zero_grads()
            total = None
            for idx in order[start:start + config.batch_unit_size]:
                unit = units[idx]
                loss = _unit_loss(tape, model, unit, config.pos_weight)
                value = float(loss.data)
                if not math.isfinite(value):
                    norms = {
                        group: float(np.linalg.norm(t.data))
                        for group, t in model.params.items()
                    }
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch}, unit {unit.record_index}; "
                        f"parameter norms: {norms}"
                    )
                epoch_loss += value
                total = loss if total is None else tape.add(total, loss)
            tape.backward(total)
            _clip_gradients(model.params, config.grad_clip_norm)
            optimizer.step(model.params, config.learning_rate)
        history.append(epoch_loss / len(units))
    return model, history


# --------------------------- metrics ---------------------------


def span_f1(pred: set, gold: set) -> tuple[float, float, float]:
    """Exact-match micro precision/recall/F1 over two item sets.

    Empty denominators follow the undefined-as-zero convention.
    """
    pred = set(pred)
    gold = set(gold)
    tp = len(pred & gold)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(gold) if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


@dataclass
class TaskMetrics:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EvalReport:
    task_metrics: dict[str, TaskMetrics]
    classification_accuracy: float | None
    relation_ambiguity_rate: float | None
    loss_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tasks": {name: m.to_dict() for name, m in self.task_metrics.items()},
            "classification_accuracy": self.classification_accuracy,
            "relation_ambiguity_rate": self.relation_ambiguity_rate,
            "loss_curve": list(self.loss_curve),
        }

    def format_lines(self) -> list[str]:
        lines = []
        for name in sorted(self.task_metrics):
            m = self.task_metrics[name]
            lines.append(
                f"{name}: P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f} "
                f"(tp={m.true_positives} fp={m.false_positives} fn={m.false_negatives})"
            )
        if self.classification_accuracy is not None:
            lines.append(f"classification accuracy: {self.classification_accuracy:.4f}")
        if self.relation_ambiguity_rate is not None:
            lines.append(f"relation ambiguity rate: {self.relation_ambiguity_rate:.4f}")
        if self.loss_curve:
            lines.append(f"mean unit loss: {self.loss_curve[-1]:.6f}")
        return lines


def _annotation_items(task: TaskKind, annotation: Annotation) -> set:
    if task is TaskKind.CLASSIFICATION:
        return {"applies"} if annotation.applies else set()
    if task is TaskKind.RELATION_EXTRACTION:
        return set(annotation.relations)
    return set(annotation.spans)


class _Counts:
    __slots__ = ("tp", "fp", "fn")

    def __init__(self):
        self.tp = self.fp = self.fn = 0

    def update(self, pred: set, gold: set) -> None:
        self.tp += len(pred & gold)
        self.fp += len(pred - gold)
        self.fn += len(gold - pred)

    def metrics(self) -> TaskMetrics:
        p = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        r = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return TaskMetrics(p, r, f1, self.tp, self.fp, self.fn)


def _evaluate_units(units: Sequence[CompiledUnit], scorer, threshold: float) -> EvalReport:
    counts: dict[TaskKind, _Counts] = {}
    cls_total = cls_correct = 0
    re_total = re_ambiguous = 0
    for unit in units:
        for ci in unit.instances:
            tables = scorer(unit, ci)
            predicted = decode_annotation(unit.task, tables, ci.instance, threshold)
            counts.setdefault(unit.task, _Counts()).update(
                _annotation_items(unit.task, predicted),
                _annotation_items(unit.task, ci.gold),
            )
            if unit.task is TaskKind.CLASSIFICATION:
                cls_total += 1
                cls_correct += int(predicted.applies == ci.gold.applies)
            if unit.task is TaskKind.RELATION_EXTRACTION:
                re_total += 1
                re_ambiguous += int(is_coupling_ambiguous(ci.gold))
    return EvalReport(
        task_metrics={task.value: c.metrics() for task, c in counts.items()},
        classification_accuracy=(cls_correct / cls_total) if cls_total else None,
        relation_ambiguity_rate=(re_ambiguous / re_total) if re_total else None,
    )


def evaluate(
    model: UbertModel,
    records: Sequence[DatasetRecord],
    vocab: Vocabulary,
    threshold: float = 0.5,
) -> EvalReport:
    """Decode every unit with the model and compare against gold.

    Relations match if both spans match within the category's instance;
    classification is scored both as micro PRF over positive flags and as
    plain accuracy.
    """
    units = compile_units(records, vocab)

    def scorer(unit, ci):
        return model.score_tables_for_task(
            ci.token_ids, unit.task, ci.instance.text_token_offset
        )

    report = _evaluate_units(units, scorer, threshold)
    total = 0.0
    for unit in units:
        tape = Tape()
        total += float(_unit_loss(tape, model, unit, 1.0).data)
    report.loss_curve = [total / len(units)] if units else []
    return report


def evaluate_gold_ceiling(records: Sequence[DatasetRecord], threshold: float = 0.5) -> EvalReport:
    """Score the codec itself: decode saturated gold logits instead of a model."""
    units = compile_units(records, _IdentityVocab())

    def scorer(unit, ci):
        return [logits_from_targets(t) for t in ci.target_tables]

    return _evaluate_units(units, scorer, threshold)


class _IdentityVocab:
    """Stand-in vocabulary for codec-only paths that never touch the model."""

    def encode_instance(self, instance) -> np.ndarray:
        return np.zeros(len(instance), dtype=np.int64)


def predict_record(
    model: UbertModel,
    vocab: Vocabulary,
    record: DatasetRecord,
    threshold: float = 0.5,
) -> dict:
    """Decode one record into a category -> annotation mapping."""
    batch = build_batch(record.task, list(record.categories), record.text)
    out = {}
    for instance in batch:
        tables = model.score_tables_for_task(
            vocab.encode_instance(instance), record.task, instance.text_token_offset
        )
        out[instance.category] = decode_annotation(record.task, tables, instance, threshold)
    return out


# --------------------------- gradient checking ---------------------------


@dataclass
class GradCheckReport:
    group_errors: dict[str, float]
    max_error: float

    def to_dict(self) -> dict:
        return {"groups": dict(self.group_errors), "max_rel_err": self.max_error}


GradCheckCase = tuple[np.ndarray, list[StructureTable]]


def _cases_loss_value(model: UbertModel, cases: Sequence[GradCheckCase], pos_weight: float) -> float:
    total = 0.0
    for ids, targets in cases:
        tape = Tape()
        scores = model.score_logits(tape, ids, [t.role for t in targets])
        total += float(bce_loss(tape, scores, targets, pos_weight).data)
    return total


def finite_difference_check(
    model: UbertModel,
    cases: Sequence[GradCheckCase],
    pos_weight: float = 1.0,
    epsilon: float = 1e-5,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Every element of every parameter is perturbed by +-epsilon.  The error
    of one element is |analytic - numeric| / max(|analytic|, |numeric|,
    floor); the floor keeps float-difference noise on near-zero gradients
    from registering as relative error.
    """
    tape = Tape()
    total = None
    for ids, targets in cases:
        scores = model.score_logits(tape, ids, [t.role for t in targets])
        loss = bce_loss(tape, scores, targets, pos_weight)
        total = loss if total is None else tape.add(total, loss)
    model.zero_grads()
    tape.backward(total)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in model.params.items()
    }

    group_errors: dict[str, float] = {}
    for name, tensor in model.params.items():
        group = model.parameter_group(name)
        worst = group_errors.get(group, 0.0)
        flat = tensor.data.reshape(-1)
        grads = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            plus = _cases_loss_value(model, cases, pos_weight)
            flat[i] = original - epsilon
            minus = _cases_loss_value(model, cases, pos_weight)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            a = float(grads[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > worst:
                worst = err
        group_errors[group] = float(worst)
    return GradCheckReport(group_errors=group_errors, max_error=float(max(group_errors.values())))
