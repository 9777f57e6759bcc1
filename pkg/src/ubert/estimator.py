"""Scikit-learn style front door: fit on records, predict annotations.

The estimator wires the schema builder, table codec, scoring model and
training loop together behind the usual fit/predict surface, so it clones
and grid-searches like any other estimator.  X is a list of DatasetRecord;
gold annotations travel inside the records, so y is always None.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Vocabulary
from .errors import ValidationError
from .model import ModelConfig, UbertModel, load_model, save_model
from .schema import TaskKind
from .training import (
    EvalReport,
    TrainConfig,
    evaluate,
    max_unit_length,
    predict_record,
    train,
)
from .validation import check_probability, check_records


class UbertExtractor(BaseEstimator):
    """Unified span extractor over biaffine-scored structure tables.

    Parameters
    ----------
    hidden_dim, ffn_dim, encoder_layers, encoder_heads : int
        Encoder geometry.
    max_len : int or None
        Longest unit accepted; None sizes it from the training data.
    projection_activation : str
        "relu" (default) or "linear" start/end projections.
    learning_rate, epochs, batch_unit_size, optimizer : training loop knobs.
    grad_clip_norm : float or None
        Global gradient-norm cap.
    threshold : float
        Sigmoid decoding threshold.
    pos_weight : float
        Weight of positive cells in the loss; 1.0 leaves the objective
        unweighted.
    seed : int
        Controls initialization and shuffling; fixed seed, fixed run.
    """

    def __init__(
        self,
        hidden_dim=32,
        ffn_dim=64,
        encoder_layers=2,
        encoder_heads=2,
        max_len=None,
        projection_activation="relu",
        learning_rate=1e-3,
        epochs=50,
        batch_unit_size=1,
        optimizer="adam",
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_eps=1e-8,
        grad_clip_norm=5.0,
        threshold=0.5,
        pos_weight=1.0,
        seed=0,
    ):
        self.hidden_dim = hidden_dim
        self.ffn_dim = ffn_dim
        self.encoder_layers = encoder_layers
        self.encoder_heads = encoder_heads
        self.max_len = max_len
        self.projection_activation = projection_activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_unit_size = batch_unit_size
        self.optimizer = optimizer
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.grad_clip_norm = grad_clip_norm
        self.threshold = threshold
        self.pos_weight = pos_weight
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_unit_size=self.batch_unit_size,
            optimizer=self.optimizer,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            grad_clip_norm=self.grad_clip_norm,
            seed=self.seed,
            threshold=self.threshold,
            pos_weight=self.pos_weight,
        )

    def fit(self, X, y=None):
        """Train on a list of DatasetRecord; returns self."""
        if y is not None:
            raise ValidationError("gold annotations travel inside the records; pass y=None")
        records = check_records(X)
        check_probability(self.threshold, "threshold")
        vocab = Vocabulary.build(records)
        needed = max_unit_length(records)
        max_len = self.max_len if self.max_len is not None else needed
        if max_len < needed:
            raise ValidationError(f"max_len {max_len} is below the longest unit ({needed})")
        config = ModelConfig(
            vocab_size=vocab.size,
            hidden_dim=self.hidden_dim,
            ffn_dim=self.ffn_dim,
            encoder_layers=self.encoder_layers,
            encoder_heads=self.encoder_heads,
            max_len=max_len,
            seed=self.seed,
            projection_activation=self.projection_activation,
        )
        model = UbertModel(config)
        _, history = train(model, records, self._train_config(), vocab)
        self.model_ = model
        self.vocab_ = vocab
        self.loss_history_ = history
        self.n_records_ = len(records)
        return self

    def predict(self, X):
        """Per-record category -> annotation mappings."""
        check_is_fitted(self, "model_")
        records = check_records(X)
        return [
            predict_record(self.model_, self.vocab_, record, self.threshold)
            for record in records
        ]

    def evaluate(self, X) -> EvalReport:
        """Exact-match micro metrics against the records' gold."""
        check_is_fitted(self, "model_")
        records = check_records(X)
        return evaluate(self.model_, records, self.vocab_, self.threshold)

    def score(self, X, y=None) -> float:
        """Mean of per-task headline metrics (accuracy for classification,
        micro-F1 otherwise); a single float for model selection."""
        report = self.evaluate(X)
        values = []
        for name, metrics in report.task_metrics.items():
            if name == TaskKind.CLASSIFICATION.value and report.classification_accuracy is not None:
                values.append(report.classification_accuracy)
            else:
                values.append(metrics.f1)
        if not values:
            raise ValidationError("nothing to score: no supported tasks in the records")
        return sum(values) / len(values)

    def save(self, path) -> None:
        """Write the fitted model and vocabulary as a checkpoint."""
        check_is_fitted(self, "model_")
        save_model(path, self.model_, self.vocab_.tokens)

    @classmethod
    def load(cls, path) -> "UbertExtractor":
        """Rebuild a fitted estimator (inference-ready) from a checkpoint."""
        model, vocab_tokens = load_model(path)
        est = cls(
            hidden_dim=model.config.hidden_dim,
            ffn_dim=model.config.ffn_dim,
            encoder_layers=model.config.encoder_layers,
            encoder_heads=model.config.encoder_heads,
            max_len=model.config.max_len,
            projection_activation=model.config.projection_activation,
            seed=model.config.seed,
        )
        est.model_ = model
        est.vocab_ = Vocabulary(vocab_tokens)
        est.loss_history_ = []
        est.n_records_ = 0
        return est
