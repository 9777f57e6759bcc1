import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ubert.data import SyntheticSpec, generate_synthetic
from ubert.errors import ValidationError
from ubert.estimator import UbertExtractor
from ubert.schema import TaskKind
from ubert.tables import EntitySet


@pytest.fixture(scope="module")
def corpus():
    spec = SyntheticSpec(task=TaskKind.NER, vocab_size=30, num_records=40,
                         max_text_len=8, num_categories=2, seed=6)
    return generate_synthetic(spec)


@pytest.fixture(scope="module")
def fitted(corpus):
    est = UbertExtractor(epochs=20, seed=0)
    est.fit(corpus)
    return est


def test_get_set_params_and_clone():
    est = UbertExtractor(hidden_dim=16, epochs=3)
    params = est.get_params()
    assert params["hidden_dim"] == 16
    assert params["epochs"] == 3
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(learning_rate=0.5)
    assert est.learning_rate == 0.5


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        UbertExtractor().predict([])


def test_fit_rejects_y(corpus):
    with pytest.raises(ValidationError):
        UbertExtractor(epochs=1).fit(corpus, y=[1, 2, 3])


def test_fit_rejects_garbage():
    with pytest.raises(ValidationError):
        UbertExtractor(epochs=1).fit(["not a record"])
    with pytest.raises(ValidationError):
        UbertExtractor(epochs=1).fit([])


def test_fit_sets_attributes(fitted, corpus):
    assert fitted.model_.config.vocab_size == fitted.vocab_.size
    assert len(fitted.loss_history_) == 20
    assert fitted.n_records_ == len(corpus)


def test_predict_shapes(fitted, corpus):
    predictions = fitted.predict(corpus[:5])
    assert len(predictions) == 5
    for record, by_category in zip(corpus[:5], predictions):
        assert set(by_category) == set(record.categories)
        for ann in by_category.values():
            assert isinstance(ann, EntitySet)


def test_evaluate_and_score(fitted, corpus):
    report = fitted.evaluate(corpus)
    assert "ner" in report.task_metrics
    score = fitted.score(corpus)
    assert 0.0 <= score <= 1.0
    assert abs(score - report.task_metrics["ner"].f1) < 1e-12


def test_max_len_too_small(corpus):
    with pytest.raises(ValidationError, match="max_len"):
        UbertExtractor(epochs=1, max_len=4).fit(corpus)


def test_save_load_predictions_identical(tmp_path, fitted, corpus):
    path = tmp_path / "est.ubrt"
    fitted.save(path)
    loaded = UbertExtractor.load(path)
    a = fitted.predict(corpus[:8])
    b = loaded.predict(corpus[:8])
    assert a == b
    for name in fitted.model_.params:
        assert np.array_equal(
            fitted.model_.params[name].data, loaded.model_.params[name].data
        )
