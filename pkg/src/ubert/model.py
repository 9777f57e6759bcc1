"""The scoring model: a small bidirectional encoder, start/end span
projections, and a per-role biaffine head emitting l*l score tables.

Start and end representations come from two separate feed-forward maps so
the two ends of a span are learned independently; a constant-1 column is
appended to each so a single bilinear tensor per table role expresses
bilinear, linear and constant terms at once.  Training minimizes summed
binary cross-entropy over the flattened tables of a unit.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tape, Tensor, load_tensors, save_tensors
from .errors import CheckpointError, ShapeError, ValidationError
from .tables import ROLES_FOR_TASK, StructureTable, TableRole

PROJECTION_ACTIVATIONS = ("relu", "linear")


@dataclass
class ModelConfig:
    vocab_size: int
    hidden_dim: int = 32
    ffn_dim: int = 64
    encoder_layers: int = 2
    encoder_heads: int = 2
    max_len: int = 128
    seed: int = 0
    projection_activation: str = "relu"

    def __post_init__(self):
        for name in ("vocab_size", "hidden_dim", "ffn_dim", "encoder_layers", "encoder_heads", "max_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_dim % self.encoder_heads != 0:
            raise ValidationError(
                f"hidden_dim {self.hidden_dim} must be divisible by encoder_heads {self.encoder_heads}"
            )
        if self.projection_activation not in PROJECTION_ACTIVATIONS:
            raise ValidationError(
                f"projection_activation must be one of {PROJECTION_ACTIVATIONS}, got {self.projection_activation!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown model config fields: {', '.join(sorted(unknown))}")
        if "vocab_size" not in obj:
            raise ValidationError("model config requires vocab_size")
        return cls(**obj)


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / dim)
    enc = np.zeros((max_len, dim), dtype=np.float64)
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


class UbertModel:
    """Encoder + span projections + one biaffine tensor per table role."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.hidden_dim
        bound = 1.0 / math.sqrt(d)
        params: OrderedDict[str, Tensor] = OrderedDict()

        def weight(name, shape):
            params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        def zeros(name, shape):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)

        def ones(name, shape):
            params[name] = Tensor(np.ones(shape), requires_grad=True)

        weight("embed.tokens", (config.vocab_size, d))
        head_dim = d // config.encoder_heads
        for i in range(config.encoder_layers):
            ones(f"enc{i}.ln_attn.gamma", (d,))
            zeros(f"enc{i}.ln_attn.beta", (d,))
            for j in range(config.encoder_heads):
                weight(f"enc{i}.attn.h{j}.wq", (d, head_dim))
                weight(f"enc{i}.attn.h{j}.wk", (d, head_dim))
                weight(f"enc{i}.attn.h{j}.wv", (d, head_dim))
            weight(f"enc{i}.attn.wo", (d, d))
            ones(f"enc{i}.ln_ffn.gamma", (d,))
            zeros(f"enc{i}.ln_ffn.beta", (d,))
            weight(f"enc{i}.ffn.w1", (d, config.ffn_dim))
            zeros(f"enc{i}.ffn.b1", (config.ffn_dim,))
            weight(f"enc{i}.ffn.w2", (config.ffn_dim, d))
            zeros(f"enc{i}.ffn.b2", (d,))
        ones("encoder.ln_out.gamma", (d,))
        zeros("encoder.ln_out.beta", (d,))
        weight("proj_start.w", (d, d))
        zeros("proj_start.b", (d,))
        weight("proj_end.w", (d, d))
        zeros("proj_end.b", (d,))
        for role in TableRole:
            weight(f"biaffine.{role.value}.u", (d + 1, 1, d + 1))

        self.params = params
        self.positional = sinusoidal_positions(config.max_len, d)

    # ----- parameter bookkeeping -----

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    @staticmethod
    def parameter_group(name: str) -> str:
        """Coarse grouping used by gradient checks and diagnostics."""
        if name.startswith("embed"):
            return "embedding"
        if name.startswith("enc"):
            return "encoder"
        return name.split(".")[0]

    # ----- forward passes -----

    def _check_ids(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValidationError(f"token ids must be a non-empty 1-D sequence, got shape {ids.shape}")
        if ids.size > self.config.max_len:
            raise ValidationError(f"unit length {ids.size} exceeds max_len {self.config.max_len}")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValidationError(
                f"token id out of range [0, {self.config.vocab_size}): {ids.min()}..{ids.max()}"
            )
        return ids

    def encode(self, tape: Tape, token_ids) -> Tensor:
        """Contextual representations, one row per unit token."""
        ids = self._check_ids(token_ids)
        p = self.params
        x = tape.embedding(p["embed.tokens"], ids)
        x = tape.add(x, Tensor(self.positional[: ids.size]))
        head_dim = self.config.hidden_dim // self.config.encoder_heads
        inv_sqrt = 1.0 / math.sqrt(head_dim)
        for i in range(self.config.encoder_layers):
            a = tape.layer_norm(x, p[f"enc{i}.ln_attn.gamma"], p[f"enc{i}.ln_attn.beta"])
            heads = []
            for j in range(self.config.encoder_heads):
                q = tape.matmul(a, p[f"enc{i}.attn.h{j}.wq"])
                k = tape.matmul(a, p[f"enc{i}.attn.h{j}.wk"])
                v = tape.matmul(a, p[f"enc{i}.attn.h{j}.wv"])
                att = tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt))
                heads.append(tape.matmul(att, v))
            mixed = heads[0] if len(heads) == 1 else tape.concat(heads, axis=1)
            x = tape.add(x, tape.matmul(mixed, p[f"enc{i}.attn.wo"]))
            f = tape.layer_norm(x, p[f"enc{i}.ln_ffn.gamma"], p[f"enc{i}.ln_ffn.beta"])
            u = tape.relu(tape.add(tape.matmul(f, p[f"enc{i}.ffn.w1"]), p[f"enc{i}.ffn.b1"]))
            x = tape.add(x, tape.add(tape.matmul(u, p[f"enc{i}.ffn.w2"]), p[f"enc{i}.ffn.b2"]))
        return tape.layer_norm(x, p["encoder.ln_out.gamma"], p["encoder.ln_out.beta"])

    def _project(self, tape: Tape, x: Tensor, which: str) -> Tensor:
        h = tape.add(tape.matmul(x, self.params[f"{which}.w"]), self.params[f"{which}.b"])
        if self.config.projection_activation == "relu":
            h = tape.relu(h)
        ones = Tensor(np.ones((x.shape[0], 1)))
        return tape.concat([h, ones], axis=1)

    def span_projections(self, tape: Tape, x: Tensor) -> tuple[Tensor, Tensor]:
        """Start/end representations with the constant-1 column appended."""
        return self._project(tape, x, "proj_start"), self._project(tape, x, "proj_end")

    def score_logits(self, tape: Tape, token_ids, roles: Sequence[TableRole]) -> list[Tensor]:
        """One l*l logit tensor per requested role, sharing a single encode."""
        x = self.encode(tape, token_ids)
        h_s, h_e = self.span_projections(tape, x)
        return [
            tape.biaffine_contract(h_s, self.params[f"biaffine.{role.value}.u"], h_e)
            for role in roles
        ]

    def score_table(self, token_ids, role: TableRole = TableRole.SINGLE, text_start: int = 0) -> StructureTable:
        """Score a unit into a role-tagged structure table (inference path)."""
        tape = Tape()
        logits = self.score_logits(tape, token_ids, [role])[0]
        return StructureTable(logits.data.copy(), role, text_start)

    def score_tables_for_task(self, token_ids, task, text_start: int = 0) -> list[StructureTable]:
        """All tables a task decodes, computed in one pass."""
        roles = ROLES_FOR_TASK[task]
        tape = Tape()
        logits = self.score_logits(tape, token_ids, roles)
        return [
            StructureTable(t.data.copy(), role, text_start)
            for t, role in zip(logits, roles)
        ]


def bce_loss(
    tape: Tape,
    scores: Sequence,
    targets: Sequence[StructureTable],
    pos_weight: float = 1.0,
) -> Tensor:
    """Summed binary cross-entropy over all tables of a unit, flattened
    into one logit/target vector pair.

    `scores` may hold tape-connected Tensors (training) or real-valued
    StructureTables (analysis); shapes must match the targets pairwise.
    """
    if len(scores) != len(targets):
        raise ShapeError(f"{len(scores)} score tables against {len(targets)} target tables")
    flat_scores = []
    flat_targets = []
    for s, t in zip(scores, targets):
        tensor = Tensor(s.cells) if isinstance(s, StructureTable) else s
        if tensor.shape != t.cells.shape:
            raise ShapeError(f"score shape {tensor.shape} does not match target shape {t.cells.shape}")
        flat_scores.append(tape.flatten(tensor))
        flat_targets.append(t.cells.astype(np.float64).reshape(-1))
    joined = flat_scores[0] if len(flat_scores) == 1 else tape.concat(flat_scores, axis=0)
    return tape.bce_with_logits_sum(joined, np.concatenate(flat_targets), pos_weight)


# --------------------------- checkpointing ---------------------------


def save_model(path, model: UbertModel, vocab_tokens: Sequence[str]) -> None:
    """Write config, vocabulary and all parameters; round trips bit-exact."""
    header = json.dumps(
        {"config": model.config.to_dict(), "vocab": list(vocab_tokens)},
        ensure_ascii=False,
    ).encode("utf-8")
    save_tensors(path, model.params, header=header)


def load_model(path) -> tuple[UbertModel, list[str]]:
    header, tensors = load_tensors(path)
    try:
        meta = json.loads(header.decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        vocab = list(meta["vocab"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    model = UbertModel(config)
    if set(tensors) != set(model.params):
        raise CheckpointError("checkpoint parameters do not match the model layout")
    for name, stored in tensors.items():
        current = model.params[name]
        if stored.data.shape != current.data.shape:
            raise CheckpointError(
                f"parameter {name} has shape {stored.data.shape}, expected {current.data.shape}"
            )
        current.data = stored.data
    return model, vocab
