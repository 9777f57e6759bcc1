"""Uniform input units: ``[CLS] [task] t [category] c [text] s``.

Every task presents each category hypothesis to the model as one schema
instance; the m instances for a single text form a schema batch that is
trained and decoded together.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

from .errors import ValidationError
from .tokenizer import Token, TokenSequence, tokenize

CLS_TOKEN = "[CLS]"
TASK_MARKER = "[task]"
CATEGORY_MARKER = "[category]"
TEXT_MARKER = "[text]"
CATEGORY_SEPARATOR = ";"


class TaskKind(Enum):
    CLASSIFICATION = "classification"
    NER = "ner"
    RELATION_EXTRACTION = "relation_extraction"
    EVENT_TRIGGER = "event_trigger"
    EVENT_ARGUMENT = "event_argument"

    @property
    def schema_token(self) -> str:
        """Single word standing for this task inside the unit."""
        return _TASK_TOKENS[self]


_TASK_TOKENS = {
    TaskKind.CLASSIFICATION: "classification",
    TaskKind.NER: "ner",
    TaskKind.RELATION_EXTRACTION: "relation",
    TaskKind.EVENT_TRIGGER: "trigger",
    TaskKind.EVENT_ARGUMENT: "argument",
}


def _canonical_component(value: str) -> str:
    """Normalize a label component to its space-joined token form.

    Labels are identified by their token content, so two spellings that
    tokenize identically are the same label.  The separator ";" is reserved
    and may not appear inside a component.
    """
    if not isinstance(value, str):
        raise ValidationError(f"label component must be a string, got {type(value).__name__}")
    toks = tokenize(value).tokens
    if not toks:
        raise ValidationError("label component must contain at least one token")
    if any(t.text == CATEGORY_SEPARATOR for t in toks):
        raise ValidationError(
            f"label component {value!r} contains the reserved separator {CATEGORY_SEPARATOR!r}"
        )
    return " ".join(t.text for t in toks)


@dataclass(frozen=True)
class PlainLabel:
    """Classification / emotion category."""

    name: str

    def __post_init__(self):
        object.__setattr__(self, "name", _canonical_component(self.name))

    @property
    def components(self) -> tuple[str, ...]:
        return (self.name,)


@dataclass(frozen=True)
class EntityType:
    """Entity category for span extraction."""

    name: str

    def __post_init__(self):
        object.__setattr__(self, "name", _canonical_component(self.name))

    @property
    def components(self) -> tuple[str, ...]:
        return (self.name,)


@dataclass(frozen=True)
class RelationTriple:
    """Head type, relation name and tail type, e.g. {PER, Originator, ORG}."""

    head_type: str
    relation: str
    tail_type: str

    def __post_init__(self):
        object.__setattr__(self, "head_type", _canonical_component(self.head_type))
        object.__setattr__(self, "relation", _canonical_component(self.relation))
        object.__setattr__(self, "tail_type", _canonical_component(self.tail_type))

    @property
    def components(self) -> tuple[str, ...]:
        return (self.head_type, self.relation, self.tail_type)


@dataclass(frozen=True)
class EventRole:
    """Event type plus a slot name, e.g. {attack, victim}.

    Stage one of event extraction uses the conventional slot "trigger".
    """

    event_type: str
    role: str

    def __post_init__(self):
        object.__setattr__(self, "event_type", _canonical_component(self.event_type))
        object.__setattr__(self, "role", _canonical_component(self.role))

    @property
    def components(self) -> tuple[str, ...]:
        return (self.event_type, self.role)


@dataclass(frozen=True)
class EventRoleWithTrigger:
    """Stage-two event category conditioning on the stage-one trigger."""

    event_type: str
    trigger_text: str
    role: str

    def __post_init__(self):
        object.__setattr__(self, "event_type", _canonical_component(self.event_type))
        object.__setattr__(self, "trigger_text", _canonical_component(self.trigger_text))
        object.__setattr__(self, "role", _canonical_component(self.role))

    @property
    def components(self) -> tuple[str, ...]:
        return (self.event_type, self.trigger_text, self.role)


CategoryLabel = Union[PlainLabel, EntityType, RelationTriple, EventRole, EventRoleWithTrigger]

_ALLOWED_CATEGORY_KINDS = {
    TaskKind.CLASSIFICATION: (PlainLabel,),
    TaskKind.NER: (EntityType,),
    TaskKind.RELATION_EXTRACTION: (RelationTriple,),
    TaskKind.EVENT_TRIGGER: (EventRole,),
    TaskKind.EVENT_ARGUMENT: (EventRole, EventRoleWithTrigger),
}


def check_category_for_task(task: TaskKind, category: CategoryLabel) -> None:
    allowed = _ALLOWED_CATEGORY_KINDS[task]
    if not isinstance(category, allowed):
        names = " or ".join(k.__name__ for k in allowed)
        raise ValidationError(
            f"task {task.value} requires a {names} category, got {type(category).__name__}"
        )


def category_key(category: CategoryLabel) -> str:
    """Serialization key: components joined by the reserved separator."""
    return CATEGORY_SEPARATOR.join(category.components)


def category_token_texts(category: CategoryLabel) -> tuple[str, ...]:
    """Token texts of the category segment, separators included."""
    out: list[str] = []
    for k, comp in enumerate(category.components):
        if k:
            out.append(CATEGORY_SEPARATOR)
        out.extend(comp.split(" "))
    return tuple(out)


@dataclass(frozen=True)
class SchemaInstance:
    """One uniform unit presenting a single category hypothesis.

    `tokens` covers the whole unit including marker tokens;
    `text_token_offset` is the index of the first raw-text token.
    """

    task: TaskKind
    category: CategoryLabel
    text: str
    tokens: TokenSequence
    text_token_offset: int

    def __len__(self) -> int:
        return len(self.tokens.tokens)

    @property
    def token_texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens.tokens)


@dataclass(frozen=True)
class SchemaBatch:
    """The m instances of one text, one per category."""

    instances: tuple[SchemaInstance, ...]
    shared_text: str

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)


def build_instance(task: TaskKind, category: CategoryLabel, text: str) -> SchemaInstance:
    """Assemble one unit: [CLS] [task] t [category] c [text] s."""
    if not text or not tokenize(text).tokens:
        raise ValidationError("text must contain at least one token")
    check_category_for_task(task, category)

    pieces: list[str] = []
    tokens: list[Token] = []
    cursor = 0

    def _piece(s: str) -> int:
        nonlocal cursor
        if pieces:
            cursor += 1
        start = cursor
        pieces.append(s)
        cursor += len(s)
        return start

    def _special(s: str) -> None:
        _piece(s)
        tokens.append(Token(s, 0, 0, is_special=True))

    def _words(s: str) -> None:
        start = _piece(s)
        for t in tokenize(s).tokens:
            tokens.append(Token(t.text, t.char_start + start, t.char_end + start))

    _special(CLS_TOKEN)
    _special(TASK_MARKER)
    _words(task.schema_token)
    _special(CATEGORY_MARKER)
    for k, comp in enumerate(category.components):
        if k:
            _special(CATEGORY_SEPARATOR)
        _words(comp)
    _special(TEXT_MARKER)
    text_token_offset = len(tokens)
    _words(text)

    return SchemaInstance(
        task=task,
        category=category,
        text=text,
        tokens=TokenSequence(tuple(tokens), " ".join(pieces)),
        text_token_offset=text_token_offset,
    )


def build_batch(task: TaskKind, categories: list[CategoryLabel], text: str) -> SchemaBatch:
    """Build the m instances of one text, in the given category order."""
    if not categories:
        raise ValidationError("categories must be non-empty")
    seen = set()
    for cat in categories:
        if cat in seen:
            raise ValidationError(f"duplicate category {category_key(cat)!r}")
        seen.add(cat)
    instances = tuple(build_instance(task, cat, text) for cat in categories)
    return SchemaBatch(instances=instances, shared_text=text)
