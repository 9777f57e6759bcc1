"""Unified text-to-structure span extraction over biaffine-scored tables.

Every supported task (classification, entity recognition, relation
extraction, two-stage event extraction) is phrased as span extraction over
l*l structure tables built from uniform schema units, scored by a biaffine
head and trained with a flattened binary cross-entropy objective.
"""

from .autodiff import Tape, Tensor, load_tensors, save_tensors
from .data import (
    DatasetRecord,
    SyntheticSpec,
    Vocabulary,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import (
    AlignmentError,
    CheckpointError,
    CoverageError,
    ShapeError,
    TrainingDiverged,
    ValidationError,
)
from .estimator import UbertExtractor
from .model import ModelConfig, UbertModel, bce_loss, load_model, save_model
from .schema import (
    CategoryLabel,
    EntityType,
    EventRole,
    EventRoleWithTrigger,
    PlainLabel,
    RelationTriple,
    SchemaBatch,
    SchemaInstance,
    TaskKind,
    build_batch,
    build_instance,
    category_key,
)
from .tables import (
    Annotation,
    EntitySet,
    EventStructure,
    LabelFlag,
    LocatingDesignator,
    RelationSet,
    StructureTable,
    TableRole,
    decode_annotation,
    decode_classification,
    decode_event,
    decode_ner,
    decode_relation,
    decode_table,
    encode_annotation,
    encode_classification,
    encode_event,
    encode_ner,
    encode_relation,
    is_coupling_ambiguous,
    logits_from_targets,
    oracle_decode,
)
from .tokenizer import Token, TokenSequence, token_span_of_char_span, tokenize
from .training import (
    EvalReport,
    TrainConfig,
    evaluate,
    evaluate_gold_ceiling,
    finite_difference_check,
    predict_record,
    span_f1,
    train,
)

__version__ = "0.1.0"
