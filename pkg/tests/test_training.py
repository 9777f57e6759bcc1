import numpy as np
import pytest

from ubert.data import DatasetRecord, SyntheticSpec, Vocabulary, generate_synthetic
from ubert.errors import TrainingDiverged, ValidationError
from ubert.model import ModelConfig, UbertModel
from ubert.schema import EntityType, PlainLabel, TaskKind
from ubert.tables import EntitySet, LabelFlag, StructureTable, TableRole
from ubert.training import (
    TrainConfig,
    compile_units,
    evaluate,
    evaluate_gold_ceiling,
    finite_difference_check,
    max_unit_length,
    predict_record,
    span_f1,
    train,
)


def tiny_ner_records(n=6, seed=0):
    spec = SyntheticSpec(
        task=TaskKind.NER, vocab_size=24, num_records=n, max_text_len=6,
        num_categories=2, seed=seed,
    )
    return generate_synthetic(spec)


def make_model(records, seed=0, **overrides):
    vocab = Vocabulary.build(records)
    cfg = ModelConfig(
        vocab_size=vocab.size,
        max_len=max_unit_length(records),
        seed=seed,
        **overrides,
    )
    return UbertModel(cfg), vocab


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValidationError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValidationError):
        TrainConfig(threshold=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_unit_size=0)


def test_zero_lr_leaves_parameters_untouched():
    records = tiny_ner_records()
    model, vocab = make_model(records)
    before = {k: v.data.copy() for k, v in model.params.items()}
    train(model, records, TrainConfig(learning_rate=0.0, epochs=1), vocab)
    for name, value in before.items():
        assert np.array_equal(model.params[name].data, value), name


def test_single_unit_memorization():
    records = tiny_ner_records(n=1)
    model, vocab = make_model(records)
    _, history = train(model, records, TrainConfig(epochs=200, learning_rate=1e-3), vocab)
    assert history[-1] < 0.01
    assert history[-1] < history[0]


def test_fixed_seed_reproduces_history():
    records = tiny_ner_records(n=4)
    config = TrainConfig(epochs=3, seed=13)
    model1, vocab = make_model(records, seed=2)
    _, h1 = train(model1, records, config, vocab)
    model2, _ = make_model(records, seed=2)
    _, h2 = train(model2, records, config, vocab)
    assert h1 == h2
    for name in model1.params:
        assert np.array_equal(model1.params[name].data, model2.params[name].data)


def test_sgd_optimizer_changes_parameters():
    records = tiny_ner_records(n=2)
    model, vocab = make_model(records)
    before = model.params["proj_start.w"].data.copy()
    train(model, records, TrainConfig(epochs=1, optimizer="sgd", learning_rate=0.1), vocab)
    assert not np.array_equal(before, model.params["proj_start.w"].data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_diagnostics():
    records = tiny_ner_records(n=2)
    model, vocab = make_model(records)
    model.params["biaffine.single.u"].data[:] = np.inf
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(model, records, TrainConfig(epochs=1), vocab)


def test_empty_dataset_rejected():
    records = tiny_ner_records(n=2)
    model, vocab = make_model(records)
    with pytest.raises(ValidationError):
        train(model, [], TrainConfig(epochs=1), vocab)


def test_span_f1_conventions():
    assert span_f1({"a"}, {"a"}) == (1.0, 1.0, 1.0)
    assert span_f1(set(), {"a"}) == (0.0, 0.0, 0.0)
    assert span_f1({"a", "b"}, {"b", "c"}) == (0.5, 0.5, 0.5)
    assert span_f1(set(), set()) == (0.0, 0.0, 0.0)


def test_span_f1_swap_symmetry():
    import random

    rng = random.Random(0)
    universe = list(range(12))
    for _ in range(200):
        pred = set(rng.sample(universe, rng.randint(0, 8)))
        gold = set(rng.sample(universe, rng.randint(0, 8)))
        p, r, f1 = span_f1(pred, gold)
        rp, rr, rf1 = span_f1(gold, pred)
        assert (p, r) == (rr, rp)
        assert abs(f1 - rf1) < 1e-15
        assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0 and 0.0 <= f1 <= 1.0


def test_gold_ceiling_is_perfect_on_generated_data():
    for task in TaskKind:
        spec = SyntheticSpec(task=task, vocab_size=30, num_records=12,
                             max_text_len=9, num_categories=2, seed=3)
        report = evaluate_gold_ceiling(generate_synthetic(spec))
        metrics = report.task_metrics[task.value]
        if metrics.true_positives + metrics.false_negatives > 0:
            assert metrics.f1 == 1.0
        assert metrics.false_positives == 0


def test_untrained_model_evaluates_without_crashing():
    records = tiny_ner_records(n=4)
    model, vocab = make_model(records)
    report = evaluate(model, records, vocab)
    m = report.task_metrics["ner"]
    for value in (m.precision, m.recall, m.f1):
        assert 0.0 <= value <= 1.0
    assert report.loss_curve and report.loss_curve[0] > 0


def test_untrained_predictions_stay_in_legal_region():
    records = tiny_ner_records(n=4)
    model, vocab = make_model(records)
    for record in records:
        from ubert.schema import build_batch

        for instance, (category, ann) in zip(
            build_batch(record.task, list(record.categories), record.text),
            predict_record(model, vocab, record).items(),
        ):
            for s, e in ann.spans:
                assert instance.text_token_offset <= s <= e < len(instance)


def test_classification_accuracy_reported():
    spec = SyntheticSpec(task=TaskKind.CLASSIFICATION, vocab_size=20, num_records=10,
                         max_text_len=6, num_categories=2, seed=1)
    records = generate_synthetic(spec)
    model, vocab = make_model(records)
    report = evaluate(model, records, vocab)
    assert report.classification_accuracy is not None
    assert 0.0 <= report.classification_accuracy <= 1.0
    assert report.relation_ambiguity_rate is None


def test_compile_units_fills_missing_gold_with_empty():
    record = DatasetRecord(
        task=TaskKind.CLASSIFICATION,
        text="alpha beta",
        categories=(PlainLabel("x"), PlainLabel("y")),
        gold={PlainLabel("x"): LabelFlag(True)},
    )
    vocab = Vocabulary.build([record])
    units = compile_units([record], vocab)
    golds = {ci.instance.category: ci.gold for ci in units[0].instances}
    assert golds[PlainLabel("y")] == LabelFlag(False)


def test_report_serialization_roundtrip():
    records = tiny_ner_records(n=3)
    model, vocab = make_model(records)
    report = evaluate(model, records, vocab)
    payload = report.to_dict()
    assert set(payload) == {"tasks", "classification_accuracy", "relation_ambiguity_rate", "loss_curve"}
    assert "ner" in payload["tasks"]
    assert isinstance(report.format_lines(), list)


def test_finite_difference_check_small_model():
    rng = np.random.default_rng(3)
    config = ModelConfig(vocab_size=10, hidden_dim=8, ffn_dim=12,
                         encoder_layers=1, encoder_heads=2, max_len=8, seed=3)
    model = UbertModel(config)
    ids = rng.integers(0, 10, size=5)
    targets = []
    for role in (TableRole.SINGLE, TableRole.COUPLING):
        cells = rng.random((5, 5)) < 0.2
        if role is not TableRole.COUPLING:
            cells = np.triu(cells)
        targets.append(StructureTable(cells, role, 0))
    report = finite_difference_check(model, [(ids, targets)])
    assert report.max_error < 1e-4
    assert {"embedding", "encoder", "proj_start", "proj_end", "biaffine"} <= set(report.group_errors)
