"""Command-line entry point.

Subcommands: generate, encode, decode, train, eval, roundtrip, gradcheck.
Exit codes: 0 success, 1 usage error, 2 validation or data error,
3 property failure (roundtrip or gradcheck above tolerance).  Payloads go
to stdout as JSON lines; diagnostics go to stderr.  The environment
variable UBERT_SEED overrides any --seed flag.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import (
    SyntheticSpec,
    Vocabulary,
    annotation_to_json,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import CheckpointError, ValidationError
from .model import ModelConfig, UbertModel, load_model, save_model
from .schema import TaskKind, build_batch, category_key
from .tables import (
    StructureTable,
    TableRole,
    decode_annotation,
    empty_annotation,
    encode_annotation,
    is_coupling_ambiguous,
    logits_from_targets,
)
from .tokenizer import tokenize
from .training import (
    TrainConfig,
    evaluate,
    finite_difference_check,
    max_unit_length,
    predict_record,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROPERTY = 3

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse variant honoring the exit-code contract (usage errors are 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._usage_exit(message))

    def _usage_exit(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return EXIT_USAGE


def _resolve_seed(flag_value, fallback: int) -> int:
    env = os.environ.get("UBERT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"UBERT_SEED must be an integer, got {env!r}") from None
    if flag_value is not None:
        return int(flag_value)
    return int(fallback)


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path}: invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return obj


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False))


# --------------------------- commands ---------------------------


def _cmd_generate(args) -> int:
    spec = SyntheticSpec.from_dict(_load_config(args.spec))
    spec.seed = _resolve_seed(args.seed, spec.seed)
    records = generate_synthetic(spec)
    save_dataset(records, args.out)
    _emit({"records": len(records), "out": str(args.out), "task": spec.task.value, "seed": spec.seed})
    return EXIT_OK


def _record_at(records, index: int):
    if not (0 <= index < len(records)):
        raise ValidationError(f"record index {index} out of range [0, {len(records)})")
    return records[index]


def _cmd_encode(args) -> int:
    records = load_dataset(args.data)
    record = _record_at(records, args.record)
    batch = build_batch(record.task, list(record.categories), record.text)
    for instance in batch:
        gold = record.gold.get(instance.category, empty_annotation(record.task))
        for table in encode_annotation(record.task, gold, instance):
            if args.dense and table.size > 20:
                raise ValidationError(
                    f"--dense only renders tables up to size 20, this unit has {table.size} tokens"
                )
            cells = [[int(r), int(c)] for r, c in np.argwhere(table.cells)]
            _emit(
                {
                    "record": args.record,
                    "category": category_key(instance.category),
                    "role": table.role.value,
                    "size": table.size,
                    "text_start": table.text_start,
                    "designators": cells,
                }
            )
            if args.dense:
                for row in table.cells.astype(int).tolist():
                    print(" ".join(str(v) for v in row))
    return EXIT_OK


def _cmd_decode(args) -> int:
    records = load_dataset(args.data)
    model, vocab_tokens = load_model(args.ckpt)
    vocab = Vocabulary(vocab_tokens)
    indices = [args.record] if args.record is not None else range(len(records))
    for i in indices:
        record = _record_at(records, i)
        raw = tokenize(record.text)
        batch = build_batch(record.task, list(record.categories), record.text)
        instances = {inst.category: inst for inst in batch}
        predicted = predict_record(model, vocab, record, args.threshold)
        for category in record.categories:
            _emit(
                {
                    "record": i,
                    "category": category_key(category),
                    "annotation": annotation_to_json(
                        record.task, predicted[category], instances[category], raw
                    ),
                }
            )
    return EXIT_OK


def _split_config(path) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    obj = _load_config(path)
    unknown = set(obj) - {"model", "train"}
    if unknown:
        raise ValidationError(f"config file sections must be 'model'/'train', got {sorted(unknown)}")
    return dict(obj.get("model", {})), dict(obj.get("train", {}))


def _cmd_train(args) -> int:
    model_section, train_section = _split_config(args.config)
    records = load_dataset(args.data)
    if not records:
        raise ValidationError("training data is empty")

    if args.epochs is not None:
        train_section["epochs"] = args.epochs
    if args.lr is not None:
        train_section["learning_rate"] = args.lr
    train_section["seed"] = _resolve_seed(args.seed, train_section.get("seed", 0))
    if not isinstance(train_section.get("epochs", 1), int) or train_section.get("epochs", 1) < 1:
        print(f"{args.prog_name}: error: --epochs must be a positive integer", file=sys.stderr)
        return EXIT_USAGE
    train_config = TrainConfig.from_dict(train_section)

    vocab = Vocabulary.build(records)
    needed = max_unit_length(records)
    model_section.setdefault("max_len", needed)
    if args.max_len is not None:
        model_section["max_len"] = args.max_len
    if model_section["max_len"] < needed:
        raise ValidationError(
            f"max_len {model_section['max_len']} is below the longest unit ({needed})"
        )
    model_section["vocab_size"] = vocab.size
    model_section["seed"] = train_config.seed
    model_config = ModelConfig.from_dict(model_section)

    model = UbertModel(model_config)
    _, history = train(model, records, train_config, vocab)
    save_model(args.out, model, vocab.tokens)

    history_path = f"{args.out}.history.json"
    with open(history_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"loss_history": history, "seed": train_config.seed}, fh)
        fh.write("\n")
    log_path = f"{args.out}.log"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        for epoch, loss in enumerate(history, 1):
            fh.write(f"epoch {epoch} loss {loss:.6f}\n")

    _emit(
        {
            "checkpoint": str(args.out),
            "epochs": train_config.epochs,
            "final_loss": history[-1],
            "history": history_path,
            "log": log_path,
        }
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    records = load_dataset(args.data)
    model, vocab_tokens = load_model(args.ckpt)
    vocab = Vocabulary(vocab_tokens)
    report = evaluate(model, records, vocab, args.threshold)
    for line in report.format_lines():
        print(line, file=sys.stderr)
    _emit(report.to_dict())
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report.to_dict(), fh)
            fh.write("\n")
        with open(f"{args.out}.log", "w", encoding="utf-8", newline="\n") as fh:
            for line in report.format_lines():
                fh.write(line + "\n")
    return EXIT_OK


def _cmd_roundtrip(args) -> int:
    records = load_dataset(args.data)
    pairs = 0
    failures = 0
    ambiguous = 0
    for record in records:
        for instance in build_batch(record.task, list(record.categories), record.text):
            gold = record.gold.get(instance.category, empty_annotation(record.task))
            tables = [
                logits_from_targets(t)
                for t in encode_annotation(record.task, gold, instance)
            ]
            decoded = decode_annotation(record.task, tables, instance, 0.5)
            pairs += 1
            if record.task is TaskKind.RELATION_EXTRACTION and is_coupling_ambiguous(gold):
                ambiguous += 1
            if decoded != gold:
                failures += 1
    _emit(
        {
            "records": len(records),
            "pairs": pairs,
            "failures": failures,
            "relation_ambiguous": ambiguous,
        }
    )
    return EXIT_PROPERTY if failures else EXIT_OK


def _gradcheck_cases(config: ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    length = 6
    ids = rng.integers(0, config.vocab_size, size=length)
    targets = []
    for role in TableRole:
        cells = rng.random((length, length)) < 0.15
        if role is not TableRole.COUPLING:
            cells = np.triu(cells)
        targets.append(StructureTable(cells, role, 0))
    return [(ids, targets)]


def _cmd_gradcheck(args) -> int:
    model_section, _ = _split_config(args.config)
    defaults = {
        "vocab_size": 16,
        "hidden_dim": 8,
        "ffn_dim": 16,
        "encoder_layers": 1,
        "encoder_heads": 2,
        "max_len": 8,
    }
    defaults.update(model_section)
    defaults["seed"] = _resolve_seed(args.seed, defaults.get("seed", 0))
    config = ModelConfig.from_dict(defaults)
    model = UbertModel(config)
    report = finite_difference_check(model, _gradcheck_cases(config, config.seed))
    payload = report.to_dict()
    payload["tolerance"] = GRADCHECK_TOLERANCE
    payload["passed"] = report.max_error < GRADCHECK_TOLERANCE
    _emit(payload)
    return EXIT_OK if payload["passed"] else EXIT_PROPERTY


# --------------------------- wiring ---------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="ubert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic corpus from a spec file")
    p.add_argument("--spec", required=True, help="JSON file with SyntheticSpec fields")
    p.add_argument("--out", required=True, help="output dataset path (JSON lines)")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("encode", help="print gold structure tables of one record")
    p.add_argument("--data", required=True)
    p.add_argument("--record", type=int, required=True)
    p.add_argument("--dense", action="store_true", help="print full grids (size <= 20)")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="print model predictions for records")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--record", type=int, default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON with 'model'/'train' sections")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=_cmd_train, prog_name="ubert train")

    p = sub.add_parser("eval", help="evaluate a checkpoint against gold data")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="also write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("roundtrip", help="verify encode/decode identity over a corpus")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_roundtrip)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config", default=None, help="JSON with a 'model' section")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"ubert: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, CheckpointError) as exc:
        print(f"ubert: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
