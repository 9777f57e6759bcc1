"""Structure tables: encoding annotations to l*l grids and decoding back.

A structure table scores, for every (row, col) cell of a schema unit, the
hypothesis that a target span starts at token `row` and ends at token
`col`.  Activated cells are locating designators.  Four task families map
onto tables:

  classification        one table; the designator sits at (0, 0), the
                        intersection of the [CLS] head and tail positions
  span extraction       one table; each entity span (s, e) activates (s, e)
  relation extraction   three tables; head and tail entities plus a
                        coupling table activating (s_h, s_t) and (e_h, e_t)
  event extraction      two stages of span extraction: trigger first, then
                        one argument table per role

Gold tables are boolean; model output is real-valued and decoded with a
sigmoid threshold.  Non-coupling tables are upper-triangular and span
designators are confined to the raw-text token block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import CoverageError, ValidationError
from .schema import (
    EventRole,
    EventRoleWithTrigger,
    SchemaInstance,
    TaskKind,
)

Span = tuple[int, int]


class TableRole(Enum):
    SINGLE = "single"
    HEAD_ENTITY = "head_entity"
    TAIL_ENTITY = "tail_entity"
    COUPLING = "coupling"
    TRIGGER = "trigger"
    ARGUMENT = "argument"


#: roles whose designators denote spans (start <= end, raw-text block only)
SPAN_ROLES = frozenset(
    {TableRole.SINGLE, TableRole.HEAD_ENTITY, TableRole.TAIL_ENTITY, TableRole.TRIGGER, TableRole.ARGUMENT}
)

#: tables each task family scores and decodes, in canonical order
ROLES_FOR_TASK = {
    TaskKind.CLASSIFICATION: (TableRole.SINGLE,),
    TaskKind.NER: (TableRole.SINGLE,),
    TaskKind.RELATION_EXTRACTION: (TableRole.HEAD_ENTITY, TableRole.TAIL_ENTITY, TableRole.COUPLING),
    TaskKind.EVENT_TRIGGER: (TableRole.TRIGGER,),
    TaskKind.EVENT_ARGUMENT: (TableRole.ARGUMENT,),
}


@dataclass(eq=False)
class StructureTable:
    """An l*l grid of boolean targets or real-valued scores.

    `text_start` is the index of the first raw-text token of the unit the
    table belongs to; span designators are only legal at or beyond it.
    """

    cells: np.ndarray
    role: TableRole
    text_start: int = 0

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ValidationError(f"structure table must be square, got shape {cells.shape}")
        if not (0 <= self.text_start <= cells.shape[0]):
            raise ValidationError(
                f"text_start {self.text_start} outside table of size {cells.shape[0]}"
            )
        if cells.dtype == bool and self.role is not TableRole.COUPLING:
            rows, cols = np.nonzero(cells)
            if np.any(rows > cols):
                raise ValidationError(
                    f"boolean {self.role.value} table has a designator below the diagonal"
                )
        self.cells = cells

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @property
    def is_boolean(self) -> bool:
        return self.cells.dtype == bool


@dataclass(frozen=True)
class LocatingDesignator:
    """An activated cell of a structure table."""

    row: int
    col: int
    table_role: TableRole


# --------------------------- annotations ---------------------------


@dataclass(frozen=True)
class LabelFlag:
    """Whether the category applies to the text."""

    applies: bool


@dataclass(frozen=True)
class EntitySet:
    """Spans of one entity category, inclusive token coordinates."""

    spans: frozenset[Span]

    def __init__(self, spans: Iterable[Span] = ()):
        object.__setattr__(self, "spans", frozenset((int(s), int(e)) for s, e in spans))


@dataclass(frozen=True)
class RelationSet:
    """(head span, tail span) pairs of one relation category."""

    relations: frozenset[tuple[Span, Span]]

    def __init__(self, relations: Iterable[tuple[Span, Span]] = ()):
        object.__setattr__(
            self,
            "relations",
            frozenset(((int(h[0]), int(h[1])), (int(t[0]), int(t[1]))) for h, t in relations),
        )


@dataclass(frozen=True)
class EventStructure:
    """A trigger span and its (role, span) arguments.

    The trigger is in trigger-instance coordinates; each argument span is
    in the coordinates of the argument instance matching its role.
    """

    trigger: Span
    args: frozenset[tuple[str, Span]] = field(default_factory=frozenset)

    def __init__(self, trigger: Span, args: Iterable[tuple[str, Span]] = ()):
        object.__setattr__(self, "trigger", (int(trigger[0]), int(trigger[1])))
        object.__setattr__(
            self, "args", frozenset((role, (int(s), int(e))) for role, (s, e) in args)
        )


Annotation = Union[LabelFlag, EntitySet, RelationSet, EventStructure]


def _check_span(span: Span, instance: SchemaInstance, what: str) -> None:
    s, e = span
    size = len(instance)
    if not (instance.text_token_offset <= s <= e < size):
        raise ValidationError(
            f"{what} span ({s}, {e}) outside the raw-text block "
            f"[{instance.text_token_offset}, {size}) of the unit"
        )


# --------------------------- encoding ---------------------------


def _span_table(spans: Iterable[Span], instance: SchemaInstance, role: TableRole, what: str) -> StructureTable:
    size = len(instance)
    cells = np.zeros((size, size), dtype=bool)
    for span in spans:
        _check_span(span, instance, what)
        cells[span[0], span[1]] = True
    return StructureTable(cells, role, instance.text_token_offset)


def encode_classification(applies: bool, instance: SchemaInstance) -> StructureTable:
    """Boolean table with cell (0, 0) set iff the category applies."""
    if instance.task is not TaskKind.CLASSIFICATION:
        raise ValidationError(f"expected a classification instance, got {instance.task.value}")
    size = len(instance)
    cells = np.zeros((size, size), dtype=bool)
    cells[0, 0] = bool(applies)
    return StructureTable(cells, TableRole.SINGLE, instance.text_token_offset)


def encode_ner(spans: EntitySet, instance: SchemaInstance) -> StructureTable:
    """Boolean table activating (start, end) for every entity span."""
    if instance.task is not TaskKind.NER:
        raise ValidationError(f"expected a ner instance, got {instance.task.value}")
    return _span_table(spans.spans, instance, TableRole.SINGLE, "entity")


def encode_relation(
    relations: RelationSet, instance: SchemaInstance
) -> tuple[StructureTable, StructureTable, StructureTable]:
    """Head, tail and coupling tables for one relation category.

    The coupling table ties each head span (s_h, e_h) to its tail span
    (s_t, e_t) by activating (s_h, s_t) and (e_h, e_t).
    """
    if instance.task is not TaskKind.RELATION_EXTRACTION:
        raise ValidationError(f"expected a relation instance, got {instance.task.value}")
    size = len(instance)
    coupling = np.zeros((size, size), dtype=bool)
    heads = set()
    tails = set()
    for head, tail in relations.relations:
        _check_span(head, instance, "head entity")
        _check_span(tail, instance, "tail entity")
        heads.add(head)
        tails.add(tail)
        coupling[head[0], tail[0]] = True
        coupling[head[1], tail[1]] = True
    head_table = _span_table(heads, instance, TableRole.HEAD_ENTITY, "head entity")
    tail_table = _span_table(tails, instance, TableRole.TAIL_ENTITY, "tail entity")
    return head_table, tail_table, StructureTable(coupling, TableRole.COUPLING, instance.text_token_offset)


def _instance_role(instance: SchemaInstance) -> str:
    category = instance.category
    if not isinstance(category, (EventRole, EventRoleWithTrigger)):
        raise ValidationError("event instance category must carry a role")
    return category.role


def encode_event(
    ev: EventStructure,
    trigger_instance: SchemaInstance,
    arg_instances: Sequence[SchemaInstance],
) -> tuple[StructureTable, list[StructureTable]]:
    """Two-stage encoding: a trigger table plus one argument table per role.

    Argument spans land in the table of the instance whose category role
    matches; roles of `ev.args` with no matching instance raise
    CoverageError.
    """
    if trigger_instance.task is not TaskKind.EVENT_TRIGGER:
        raise ValidationError(f"expected an event_trigger instance, got {trigger_instance.task.value}")
    for inst in arg_instances:
        if inst.task is not TaskKind.EVENT_ARGUMENT:
            raise ValidationError(f"expected event_argument instances, got {inst.task.value}")

    trigger_table = _span_table([ev.trigger], trigger_instance, TableRole.TRIGGER, "trigger")

    trigger_text = " ".join(
        trigger_instance.tokens[i].text for i in range(ev.trigger[0], ev.trigger[1] + 1)
    )
    instance_roles = []
    for inst in arg_instances:
        category = inst.category
        if isinstance(category, EventRoleWithTrigger) and category.trigger_text != trigger_text:
            raise ValidationError(
                f"argument category conditions on trigger {category.trigger_text!r} "
                f"but the event trigger reads {trigger_text!r}"
            )
        instance_roles.append(_instance_role(inst))

    needed = {role for role, _ in ev.args}
    missing = sorted(needed - set(instance_roles))
    if missing:
        raise CoverageError(f"no argument instance for roles: {', '.join(missing)}")

    arg_tables = []
    for inst, role in zip(arg_instances, instance_roles):
        spans = [span for r, span in ev.args if r == role]
        arg_tables.append(_span_table(spans, inst, TableRole.ARGUMENT, f"argument role {role!r}"))
    return trigger_table, arg_tables


def encode_annotation(task: TaskKind, annotation: Annotation, instance: SchemaInstance) -> list[StructureTable]:
    """Gold tables of one (category, annotation) pair, in ROLES_FOR_TASK order."""
    if task is TaskKind.CLASSIFICATION:
        if not isinstance(annotation, LabelFlag):
            raise ValidationError(f"classification gold must be a LabelFlag, got {type(annotation).__name__}")
        return [encode_classification(annotation.applies, instance)]
    if task is TaskKind.NER:
        if not isinstance(annotation, EntitySet):
            raise ValidationError(f"ner gold must be an EntitySet, got {type(annotation).__name__}")
        return [encode_ner(annotation, instance)]
    if task is TaskKind.RELATION_EXTRACTION:
        if not isinstance(annotation, RelationSet):
            raise ValidationError(f"relation gold must be a RelationSet, got {type(annotation).__name__}")
        return list(encode_relation(annotation, instance))
    if task in (TaskKind.EVENT_TRIGGER, TaskKind.EVENT_ARGUMENT):
        if not isinstance(annotation, EntitySet):
            raise ValidationError(f"event-stage gold must be an EntitySet, got {type(annotation).__name__}")
        role = TableRole.TRIGGER if task is TaskKind.EVENT_TRIGGER else TableRole.ARGUMENT
        return [_span_table(annotation.spans, instance, role, task.value)]
    raise ValidationError(f"unknown task {task!r}")


def empty_annotation(task: TaskKind) -> Annotation:
    """The annotation meaning "nothing to extract" for a task."""
    if task is TaskKind.CLASSIFICATION:
        return LabelFlag(False)
    if task is TaskKind.RELATION_EXTRACTION:
        return RelationSet()
    return EntitySet()


def logits_from_targets(table: StructureTable, positive: float = 10.0, negative: float = -10.0) -> StructureTable:
    """Map a boolean target table to saturated logits (0 -> -10, 1 -> +10)."""
    if not table.is_boolean:
        raise ValidationError("logits_from_targets expects a boolean target table")
    cells = np.where(table.cells, positive, negative).astype(np.float64)
    return StructureTable(cells, table.role, table.text_start)


# --------------------------- decoding ---------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def decode_table(scores: StructureTable, threshold: float) -> set[LocatingDesignator]:
    """All cells with sigmoid(score) > threshold, masked by role rules.

    Non-coupling roles are restricted to the upper triangle and to the
    raw-text token block; coupling tables are read unmasked.
    """
    if scores.is_boolean:
        raise ValidationError("decode_table expects real-valued scores; encode gold via logits_from_targets")
    active = _sigmoid(scores.cells.astype(np.float64)) > threshold
    if scores.role is not TableRole.COUPLING:
        size = scores.size
        active &= np.triu(np.ones((size, size), dtype=bool))
        active[: scores.text_start, :] = False
        active[:, : scores.text_start] = False
    return {
        LocatingDesignator(int(r), int(c), scores.role)
        for r, c in np.argwhere(active)
    }


def sorted_designators(designators: Iterable[LocatingDesignator]) -> list[LocatingDesignator]:
    """Canonical row-major listing."""
    return sorted(designators, key=lambda d: (d.row, d.col))


def decode_classification(scores: StructureTable, instance: SchemaInstance, threshold: float) -> LabelFlag:
    """Read only cell (0, 0), the [CLS] head/tail intersection."""
    if scores.size != len(instance):
        raise ValidationError(f"table size {scores.size} does not match unit length {len(instance)}")
    return LabelFlag(bool(_sigmoid(np.float64(scores.cells[0, 0])) > threshold))


def decode_ner(scores: StructureTable, instance: SchemaInstance, threshold: float) -> EntitySet:
    """Span set read back from the activated cells."""
    if scores.size != len(instance):
        raise ValidationError(f"table size {scores.size} does not match unit length {len(instance)}")
    return EntitySet((d.row, d.col) for d in decode_table(scores, threshold))


def decode_relation(
    head: StructureTable,
    tail: StructureTable,
    coupling: StructureTable,
    threshold: float,
) -> RelationSet:
    """Pair head and tail candidates through the coupling table.

    A candidate pair (h, t) becomes a relation iff the coupling table
    activates both (s_h, s_t) and (e_h, e_t); candidates failing either
    test are dropped.
    """
    if not (head.size == tail.size == coupling.size):
        raise ValidationError(
            f"relation tables must share a size, got {head.size}/{tail.size}/{coupling.size}"
        )
    head_spans = [(d.row, d.col) for d in decode_table(head, threshold)]
    tail_spans = [(d.row, d.col) for d in decode_table(tail, threshold)]
    coupling_cells = {(d.row, d.col) for d in decode_table(coupling, threshold)}
    out = []
    for h in head_spans:
        for t in tail_spans:
            if (h[0], t[0]) in coupling_cells and (h[1], t[1]) in coupling_cells:
                out.append((h, t))
    return RelationSet(out)


def decode_event(
    trigger_scores: StructureTable,
    arg_scores: Sequence[StructureTable],
    arg_instances: Sequence[SchemaInstance],
    threshold: float,
) -> frozenset[EventStructure]:
    """One event per decoded trigger span, all sharing the decoded arguments."""
    if len(arg_scores) != len(arg_instances):
        raise ValidationError("one argument table per argument instance is required")
    triggers = [(d.row, d.col) for d in decode_table(trigger_scores, threshold)]
    args = []
    for table, inst in zip(arg_scores, arg_instances):
        role = _instance_role(inst)
        for d in decode_table(table, threshold):
            args.append((role, (d.row, d.col)))
    return frozenset(EventStructure(t, args) for t in triggers)


def decode_annotation(
    task: TaskKind,
    tables: Sequence[StructureTable],
    instance: SchemaInstance,
    threshold: float,
) -> Annotation:
    """Decode one instance's score tables into its annotation."""
    expected = ROLES_FOR_TASK[task]
    if len(tables) != len(expected):
        raise ValidationError(f"task {task.value} decodes {len(expected)} tables, got {len(tables)}")
    if task is TaskKind.CLASSIFICATION:
        return decode_classification(tables[0], instance, threshold)
    if task is TaskKind.NER:
        return decode_ner(tables[0], instance, threshold)
    if task is TaskKind.RELATION_EXTRACTION:
        return decode_relation(tables[0], tables[1], tables[2], threshold)
    # event stages decode as span extraction over their own table
    return EntitySet((d.row, d.col) for d in decode_table(tables[0], threshold))


# --------------------------- exhaustive oracle ---------------------------
#
# Deliberately naive re-statement of the decoding rules, scanning every
# cell (and for relations every candidate quadruple) in pure Python.  Kept
# independent of the vectorized decoders above so the two can be checked
# against each other.


def _oracle_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _oracle_active(table: StructureTable, row: int, col: int, threshold: float) -> bool:
    value = table.cells[row, col]
    if table.is_boolean:
        return bool(value)
    return _oracle_sigmoid(float(value)) > threshold


def oracle_decode_table(table: StructureTable, threshold: float) -> set[LocatingDesignator]:
    out = set()
    for row in range(table.size):
        for col in range(table.size):
            if table.role is not TableRole.COUPLING:
                if row > col:
                    continue
                if row < table.text_start or col < table.text_start:
                    continue
            if _oracle_active(table, row, col, threshold):
                out.add(LocatingDesignator(row, col, table.role))
    return out


def oracle_decode_relation(
    head: StructureTable,
    tail: StructureTable,
    coupling: StructureTable,
    threshold: float,
) -> RelationSet:
    size = head.size

    def grid(table):
        return [
            [_oracle_active(table, r, c, threshold) for c in range(size)]
            for r in range(size)
        ]

    head_active = grid(head)
    tail_active = grid(tail)
    coupling_active = grid(coupling)
    found = []
    for hs in range(size):
        for he in range(size):
            for ts in range(size):
                for te in range(size):
                    if hs > he or ts > te:
                        continue
                    if hs < head.text_start or ts < tail.text_start:
                        continue
                    if not head_active[hs][he]:
                        continue
                    if not tail_active[ts][te]:
                        continue
                    if coupling_active[hs][ts] and coupling_active[he][te]:
                        found.append(((hs, he), (ts, te)))
    return RelationSet(found)


def oracle_decode(
    task: TaskKind,
    tables: Sequence[StructureTable],
    threshold: float,
) -> Annotation:
    """Exhaustive-enumeration decoder; must agree with the production path."""
    if task is TaskKind.CLASSIFICATION:
        return LabelFlag(_oracle_active(tables[0], 0, 0, threshold))
    if task is TaskKind.RELATION_EXTRACTION:
        return oracle_decode_relation(tables[0], tables[1], tables[2], threshold)
    return EntitySet((d.row, d.col) for d in oracle_decode_table(tables[0], threshold))


def is_coupling_ambiguous(relations: RelationSet) -> bool:
    """True if some non-gold head/tail pairing is licensed by the coupling cells.

    Distinct relation sets can encode to identical table triples; such sets
    cannot be decoded exactly and are reported rather than guessed at.
    """
    rels = relations.relations
    heads = {h for h, _ in rels}
    tails = {t for _, t in rels}
    cells = set()
    for h, t in rels:
        cells.add((h[0], t[0]))
        cells.add((h[1], t[1]))
    for h in heads:
        for t in tails:
            if (h, t) in rels:
                continue
            if (h[0], t[0]) in cells and (h[1], t[1]) in cells:
                return True
    return False
