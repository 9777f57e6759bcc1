"""Dataset records, JSON-lines serialization, vocabulary and synthetic corpora.

On disk a dataset is newline-delimited JSON, one record per line:

    {"task": "ner",
     "text": "bob visits acme",
     "categories": [{"kind": "entity_type", "name": "person"}],
     "gold": {"person": {"spans": [[0, 3]]}}}

Spans are stored as [start, end) character offsets into the raw text and
converted to unit-token coordinates at load time, so files survive
tokenizer-independent edits.  Gold entries may be omitted for categories
with nothing to extract.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ValidationError
from .schema import (
    CategoryLabel,
    EntityType,
    EventRole,
    EventRoleWithTrigger,
    PlainLabel,
    RelationTriple,
    SchemaInstance,
    TaskKind,
    build_batch,
    category_key,
)
from .tokenizer import TokenSequence, token_span_of_char_span, tokenize
from .tables import (
    Annotation,
    EntitySet,
    LabelFlag,
    RelationSet,
    empty_annotation,
    encode_annotation,
)

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
PAD_ID = 0
UNK_ID = 1


class Vocabulary:
    """Token -> id mapping with padding id 0 and unknown-token fallback id 1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
            raise ValidationError(f"vocabulary must start with {PAD_TOKEN}, {UNK_TOKEN}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def build(cls, records: Sequence["DatasetRecord"]) -> "Vocabulary":
        """Collect every unit token of the corpus, in sorted order."""
        texts = set()
        for record in records:
            for instance in build_batch(record.task, list(record.categories), record.text):
                texts.update(instance.token_texts)
        texts.discard(PAD_TOKEN)
        texts.discard(UNK_TOKEN)
        return cls([PAD_TOKEN, UNK_TOKEN] + sorted(texts))

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def id_of(self, token_text: str) -> int:
        return self._ids.get(token_text, UNK_ID)

    def encode_instance(self, instance: SchemaInstance) -> np.ndarray:
        return np.array([self.id_of(t) for t in instance.token_texts], dtype=np.int64)


@dataclass
class DatasetRecord:
    """One supervised text: task, category set, and per-category gold."""

    task: TaskKind
    text: str
    categories: tuple[CategoryLabel, ...]
    gold: dict[CategoryLabel, Annotation]

    def __post_init__(self):
        self.categories = tuple(self.categories)
        extra = set(self.gold) - set(self.categories)
        if extra:
            keys = ", ".join(sorted(category_key(c) for c in extra))
            raise ValidationError(f"gold refers to categories not listed: {keys}")

    def validate(self) -> None:
        """Re-check that every gold annotation encodes against its instance."""
        for instance in build_batch(self.task, list(self.categories), self.text):
            gold = self.gold.get(instance.category, empty_annotation(self.task))
            encode_annotation(self.task, gold, instance)


# --------------------------- JSON conversion ---------------------------

_CATEGORY_KINDS = {
    "label": PlainLabel,
    "entity_type": EntityType,
    "relation_triple": RelationTriple,
    "event_role": EventRole,
    "event_role_with_trigger": EventRoleWithTrigger,
}
_KIND_NAMES = {cls: kind for kind, cls in _CATEGORY_KINDS.items()}


def category_to_json(category: CategoryLabel) -> dict:
    kind = _KIND_NAMES[type(category)]
    out = {"kind": kind}
    for field_name in type(category).__dataclass_fields__:
        out[field_name] = getattr(category, field_name)
    return out


def category_from_json(obj: dict) -> CategoryLabel:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValidationError("category must be an object with a 'kind' field")
    kind = obj["kind"]
    cls = _CATEGORY_KINDS.get(kind)
    if cls is None:
        raise ValidationError(f"unknown category kind {kind!r}")
    fields = {k: v for k, v in obj.items() if k != "kind"}
    expected = set(cls.__dataclass_fields__)
    if set(fields) != expected:
        raise ValidationError(
            f"category kind {kind!r} requires fields {sorted(expected)}, got {sorted(fields)}"
        )
    return cls(**fields)


def _unit_span_to_chars(span: tuple[int, int], instance: SchemaInstance, raw: TokenSequence) -> list[int]:
    offset = instance.text_token_offset
    s, e = span[0] - offset, span[1] - offset
    if not (0 <= s <= e < len(raw.tokens)):
        raise ValidationError(f"span {span} leaves the raw-text token block")
    return [raw.tokens[s].char_start, raw.tokens[e].char_end]


def _char_span_to_unit(pair, instance: SchemaInstance, raw: TokenSequence) -> tuple[int, int]:
    if (
        not isinstance(pair, (list, tuple))
        or len(pair) != 2
        or not all(isinstance(v, int) for v in pair)
    ):
        raise ValidationError(f"span must be a [start, end) integer pair, got {pair!r}")
    cs, ce = pair
    if ce > len(raw.source_text):
        raise AlignmentError(f"char span [{cs}, {ce}) extends beyond the text (length {len(raw.source_text)})")
    s, e = token_span_of_char_span(raw, cs, ce)
    offset = instance.text_token_offset
    return (s + offset, e + offset)


def annotation_to_json(task: TaskKind, annotation: Annotation, instance: SchemaInstance, raw: TokenSequence) -> dict:
    if task is TaskKind.CLASSIFICATION:
        return {"applies": annotation.applies}
    if task is TaskKind.RELATION_EXTRACTION:
        pairs = sorted(annotation.relations)
        return {
            "relations": [
                {
                    "head": _unit_span_to_chars(h, instance, raw),
                    "tail": _unit_span_to_chars(t, instance, raw),
                }
                for h, t in pairs
            ]
        }
    return {"spans": [_unit_span_to_chars(s, instance, raw) for s in sorted(annotation.spans)]}


def annotation_from_json(task: TaskKind, obj, instance: SchemaInstance, raw: TokenSequence) -> Annotation:
    if not isinstance(obj, dict):
        raise ValidationError(f"annotation must be an object, got {type(obj).__name__}")
    if task is TaskKind.CLASSIFICATION:
        if not isinstance(obj.get("applies"), bool):
            raise ValidationError("classification annotation requires a boolean 'applies'")
        return LabelFlag(obj["applies"])
    if task is TaskKind.RELATION_EXTRACTION:
        rels = obj.get("relations")
        if not isinstance(rels, list):
            raise ValidationError("relation annotation requires a 'relations' list")
        out = []
        for rel in rels:
            if not isinstance(rel, dict) or "head" not in rel or "tail" not in rel:
                raise ValidationError("each relation requires 'head' and 'tail' spans")
            out.append(
                (
                    _char_span_to_unit(rel["head"], instance, raw),
                    _char_span_to_unit(rel["tail"], instance, raw),
                )
            )
        return RelationSet(out)
    spans = obj.get("spans")
    if not isinstance(spans, list):
        raise ValidationError(f"{task.value} annotation requires a 'spans' list")
    return EntitySet(_char_span_to_unit(pair, instance, raw) for pair in spans)


def record_to_json(record: DatasetRecord) -> dict:
    raw = tokenize(record.text)
    instances = {
        inst.category: inst
        for inst in build_batch(record.task, list(record.categories), record.text)
    }
    gold = {}
    for category in record.categories:
        if category in record.gold:
            gold[category_key(category)] = annotation_to_json(
                record.task, record.gold[category], instances[category], raw
            )
    return {
        "task": record.task.value,
        "text": record.text,
        "categories": [category_to_json(c) for c in record.categories],
        "gold": gold,
    }


def record_from_json(obj: dict, line_no: int | None = None) -> DatasetRecord:
    where = f"line {line_no}: " if line_no is not None else ""
    try:
        if not isinstance(obj, dict):
            raise ValidationError(f"record must be an object, got {type(obj).__name__}")
        for field_name in ("task", "text", "categories", "gold"):
            if field_name not in obj:
                raise ValidationError(f"record is missing field {field_name!r}")
        try:
            task = TaskKind(obj["task"])
        except ValueError:
            raise ValidationError(f"unknown task {obj['task']!r}") from None
        text = obj["text"]
        if not isinstance(text, str) or not text:
            raise ValidationError("field 'text' must be a non-empty string")
        if not isinstance(obj["categories"], list) or not obj["categories"]:
            raise ValidationError("field 'categories' must be a non-empty list")
        categories = [category_from_json(c) for c in obj["categories"]]
        if not isinstance(obj["gold"], dict):
            raise ValidationError("field 'gold' must be an object keyed by category")
        by_key = {category_key(c): c for c in categories}
        raw = tokenize(text)
        instances = {
            inst.category: inst for inst in build_batch(task, categories, text)
        }
        gold = {}
        for key, ann_obj in obj["gold"].items():
            category = by_key.get(key)
            if category is None:
                raise ValidationError(f"gold key {key!r} does not name a listed category")
            gold[category] = annotation_from_json(task, ann_obj, instances[category], raw)
        record = DatasetRecord(task=task, text=text, categories=tuple(categories), gold=gold)
        record.validate()
        return record
    except AlignmentError as exc:
        raise AlignmentError(f"{where}{exc}") from None
    except ValidationError as exc:
        raise ValidationError(f"{where}{exc}") from None


def save_dataset(records: Sequence[DatasetRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), ensure_ascii=False))
            fh.write("\n")


def load_dataset(path) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {line_no}: invalid JSON: {exc}") from None
            records.append(record_from_json(obj, line_no))
    return records


# --------------------------- synthetic corpora ---------------------------

_MIN_TEXT_LEN = {
    TaskKind.CLASSIFICATION: 2,
    TaskKind.NER: 3,
    TaskKind.RELATION_EXTRACTION: 5,
    TaskKind.EVENT_TRIGGER: 2,
    TaskKind.EVENT_ARGUMENT: 8,
}


@dataclass
class SyntheticSpec:
    """Deterministic rule-based corpus parameters; every rule is decodable
    with perfect scores by construction."""

    task: TaskKind
    vocab_size: int = 60
    num_records: int = 500
    max_text_len: int = 12
    num_categories: int = 3
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.task, str):
            try:
                self.task = TaskKind(self.task)
            except ValueError:
                raise ValidationError(f"unknown task {self.task!r}") from None
        for name in ("vocab_size", "num_records", "max_text_len", "num_categories"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        minimum = _MIN_TEXT_LEN[self.task]
        if self.max_text_len < minimum:
            raise ValidationError(
                f"max_text_len must be at least {minimum} for task {self.task.value}"
            )

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["task"] = self.task.value
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown synthetic spec fields: {', '.join(sorted(unknown))}")
        if "task" not in obj:
            raise ValidationError("synthetic spec requires a task")
        return cls(**obj)


def _fillers(count: int) -> list[str]:
    return [f"w{u}" for u in range(count)]


def _require_budget(spec: SyntheticSpec, reserved: int) -> list[str]:
    remaining = spec.vocab_size - reserved
    if remaining < 3:
        raise ValidationError(
            f"vocab_size {spec.vocab_size} too small for task {spec.task.value}: "
            f"{reserved} tokens are reserved for markers, at least 3 fillers are needed"
        )
    return _fillers(remaining)


def _record(task: TaskKind, words: list[str], categories: list[CategoryLabel], gold_fn) -> DatasetRecord:
    """Assemble a record; gold is derived by scanning the final word list."""
    text = " ".join(words)
    gold = {}
    for instance in build_batch(task, categories, text):
        gold[instance.category] = gold_fn(instance)
    return DatasetRecord(task=task, text=text, categories=tuple(categories), gold=gold)


def _generate_classification(spec: SyntheticSpec, rng: random.Random) -> list[DatasetRecord]:
    k = spec.num_categories
    keywords = [f"kw{j}" for j in range(k)]
    fillers = _require_budget(spec, k)
    categories: list[CategoryLabel] = [PlainLabel(f"topic{j}") for j in range(k)]
    records = []
    for i in range(spec.num_records):
        length = rng.randint(max(2, spec.max_text_len // 2), spec.max_text_len)
        words = [rng.choice(fillers) for _ in range(length)]
        for j in range(k):
            if rng.random() < 0.45:
                words[rng.randrange(length)] = keywords[j]

        def gold(instance, words=words):
            j = categories.index(instance.category)
            return LabelFlag(keywords[j] in words)

        records.append(_record(spec.task, words, categories, gold))
    return records


def _generate_ner(spec: SyntheticSpec, rng: random.Random) -> list[DatasetRecord]:
    k = spec.num_categories
    per_cat = max(2, (spec.vocab_size // 2) // k)
    markers = [[f"kind{j}x{u}" for u in range(per_cat)] for j in range(k)]
    marker_sets = [set(m) for m in markers]
    fillers = _require_budget(spec, k * per_cat)
    categories: list[CategoryLabel] = [EntityType(f"kind{j}") for j in range(k)]
    records = []
    for i in range(spec.num_records):
        length = rng.randint(3, spec.max_text_len)
        words = []
        for _ in range(length):
            if rng.random() < 0.25:
                j = rng.randrange(k)
                words.append(rng.choice(markers[j]))
            else:
                words.append(rng.choice(fillers))
        forced = i % k
        if not any(w in marker_sets[forced] for w in words):
            words[rng.randrange(length)] = rng.choice(markers[forced])

        def gold(instance, words=words):
            j = categories.index(instance.category)
            offset = instance.text_token_offset
            return EntitySet(
                (p + offset, p + offset) for p, w in enumerate(words) if w in marker_sets[j]
            )

        records.append(_record(spec.task, words, categories, gold))
    return records


def _generate_relations(spec: SyntheticSpec, rng: random.Random) -> list[DatasetRecord]:
    k = spec.num_categories
    per_side = max(1, spec.vocab_size // (4 * k))
    heads = [[f"src{j}x{u}" for u in range(per_side)] for j in range(k)]
    tails = [[f"dst{j}x{u}" for u in range(per_side)] for j in range(k)]
    connectors = [f"link{j}" for j in range(k)]
    head_sets = [set(h) for h in heads]
    tail_sets = [set(t) for t in tails]
    fillers = _require_budget(spec, k * (2 * per_side + 1))
    categories: list[CategoryLabel] = [
        RelationTriple(f"srckind{j}", f"rel{j}", f"dstkind{j}") for j in range(k)
    ]
    records = []
    for i in range(spec.num_records):
        length = rng.randint(5, spec.max_text_len)
        words = [rng.choice(fillers) for _ in range(length)]
        j = i % k
        while True:
            ph, pt = rng.randrange(length), rng.randrange(length)
            if abs(ph - pt) >= 2:
                break
        words[ph] = rng.choice(heads[j])
        words[pt] = rng.choice(tails[j])
        if rng.random() < 0.5:
            lo, hi = min(ph, pt), max(ph, pt)
            words[rng.randint(lo + 1, hi - 1)] = connectors[j]

        def gold(instance, words=words):
            jc = categories.index(instance.category)
            offset = instance.text_token_offset
            head_pos = [p for p, w in enumerate(words) if w in head_sets[jc]]
            tail_pos = [p for p, w in enumerate(words) if w in tail_sets[jc]]
            conn_pos = [p for p, w in enumerate(words) if w == connectors[jc]]
            rels = []
            for ph_ in head_pos:
                for pt_ in tail_pos:
                    lo, hi = min(ph_, pt_), max(ph_, pt_)
                    if any(lo < pc < hi for pc in conn_pos):
                        rels.append(
                            ((ph_ + offset, ph_ + offset), (pt_ + offset, pt_ + offset))
                        )
            return RelationSet(rels)

        records.append(_record(spec.task, words, categories, gold))
    return records


def _generate_event_triggers(spec: SyntheticSpec, rng: random.Random) -> list[DatasetRecord]:
    k = spec.num_categories
    per_type = max(2, spec.vocab_size // (3 * k))
    trigger_words = [[f"evt{j}x{u}" for u in range(per_type)] for j in range(k)]
    trigger_sets = [set(t) for t in trigger_words]
    fillers = _require_budget(spec, k * per_type)
    categories: list[CategoryLabel] = [EventRole(f"etype{j}", "trigger") for j in range(k)]
    records = []
    for i in range(spec.num_records):
        length = rng.randint(2, spec.max_text_len)
        words = [rng.choice(fillers) for _ in range(length)]
        j = i % k
        words[rng.randrange(length)] = rng.choice(trigger_words[j])

        def gold(instance, words=words):
            jc = categories.index(instance.category)
            offset = instance.text_token_offset
            return EntitySet(
                (p + offset, p + offset) for p, w in enumerate(words) if w in trigger_sets[jc]
            )

        records.append(_record(spec.task, words, categories, gold))
    return records


def _generate_event_arguments(spec: SyntheticSpec, rng: random.Random) -> list[DatasetRecord]:
    k = spec.num_categories
    roles = ("who", "where")
    per_type = max(1, spec.vocab_size // (6 * k))
    trigger_words = [[f"evt{j}x{u}" for u in range(per_type)] for j in range(k)]
    cues = {(j, r): f"cue{j}{r}" for j in range(k) for r in roles}
    arg_words = [f"arg{u}" for u in range(max(3, spec.vocab_size // 6))]
    reserved = k * per_type + len(cues) + len(arg_words)
    fillers = _require_budget(spec, reserved)
    records = []
    for i in range(spec.num_records):
        j = i % k
        trig = rng.choice(trigger_words[j])
        base = rng.randint(1, spec.max_text_len - 1 - 2 * len(roles))
        words = [rng.choice(fillers) for _ in range(base)]
        words.insert(rng.randint(0, len(words)), trig)
        for role in roles:
            if rng.random() < 0.6:
                at = rng.randint(0, len(words))
                words.insert(at, rng.choice(arg_words))
                words.insert(at, cues[(j, role)])
        categories: list[CategoryLabel] = [
            EventRoleWithTrigger(f"etype{j}", trig, role) for role in roles
        ]

        def gold(instance, words=words, j=j):
            role = instance.category.role
            cue = cues[(j, role)]
            offset = instance.text_token_offset
            return EntitySet(
                (p + 1 + offset, p + 1 + offset)
                for p, w in enumerate(words[:-1])
                if w == cue
            )

        records.append(_record(spec.task, words, categories, gold))
    return records


def generate_synthetic(spec: SyntheticSpec) -> list[DatasetRecord]:
    """Produce a learnable corpus for one task family.

    NER: a token from the j-th marker vocabulary is an entity of type j.
    Relations: a head and tail marker are related iff the category's
    connector token sits strictly between them.  Classification: label j
    applies iff its keyword occurs.  Events: trigger words per event type,
    arguments are the tokens right after a role's cue token.
    """
    rng = random.Random(spec.seed)
    generators = {
        TaskKind.CLASSIFICATION: _generate_classification,
        TaskKind.NER: _generate_ner,
        TaskKind.RELATION_EXTRACTION: _generate_relations,
        TaskKind.EVENT_TRIGGER: _generate_event_triggers,
        TaskKind.EVENT_ARGUMENT: _generate_event_arguments,
    }
    return generators[spec.task](spec, rng)
