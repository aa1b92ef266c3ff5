"""Shared bottoms (DCN-V2, FT-Transformer), MMoE heads, the multi-task loss and training."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .datamodel import BINARY_TASKS, EmbeddingTable, EncodedBatch, EncodedExample, FeatureSchema
from .errors import ConfigError, DataError, DimensionError, NumericalError
from .layers import MLP, LayerNorm, Linear, Module, TransformerBlock
from .numerics import Tensor
from .textmatch import TextEncoder, TextEncoderConfig, match_cross, match_dot

log = logging.getLogger(__name__)

ALL_TASKS = (*BINARY_TASKS, "relevance")
# per-component seed offsets; components draw from independent streams so that
# toggling one (matching mode, relevance task) leaves the others bit-identical
_SEED_TEXT, _SEED_EMBED, _SEED_BOTTOM, _SEED_EXPERTS, _SEED_GATES, _SEED_TOWERS = range(6)


# -- configs ----------------------------------------------------------------

@dataclass(frozen=True)
class DcnConfig:
    cross_layers: int = 2
    deep_widths: tuple[int, ...] = (128, 64)

    def __post_init__(self):
        object.__setattr__(self, "deep_widths", tuple(self.deep_widths))
        if self.cross_layers < 1 or len(self.deep_widths) < 1:
            raise ConfigError("DCN needs at least one cross layer and one deep layer")

    @property
    def deep_layers(self) -> int:
        return len(self.deep_widths)


@dataclass(frozen=True)
class FttConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 2
    ff_dim: int = 64
    out_dim: int = 64

    def __post_init__(self):
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"FT-T dim {self.dim} not divisible by {self.heads} heads")
        if self.layers < 0:
            raise ConfigError("FT-T layer count must be >= 0")


@dataclass(frozen=True)
class MmoeConfig:
    num_experts: int = 4
    expert_widths: tuple[int, ...] = (64, 32)
    tower_widths: tuple[int, ...] = (32,)
    tasks: tuple[str, ...] = BINARY_TASKS
    task_weights: tuple[float, ...] = (0.4, 0.1, 0.5)
    relevance_classes: int = 5

    def __post_init__(self):
        for name in ("expert_widths", "tower_widths", "tasks", "task_weights"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = set(self.tasks) - set(ALL_TASKS)
        if unknown or len(set(self.tasks)) != len(self.tasks) or not self.tasks:
            raise ConfigError(f"tasks must be distinct members of {ALL_TASKS}, got {self.tasks}")
        if len(self.task_weights) != len(self.tasks):
            raise ConfigError(f"{len(self.tasks)} tasks but {len(self.task_weights)} weights")
        if any(w < 0 for w in self.task_weights):
            raise ConfigError(f"task weights must be >= 0, got {self.task_weights}")
        if not any(w > 0 for w in self.task_weights):
            raise ConfigError("at least one task weight must be positive")
        if self.num_experts <= len(self.tasks):
            raise ConfigError(f"need more experts ({self.num_experts}) than tasks ({len(self.tasks)})")
        if "relevance" in self.tasks and self.relevance_classes < 2:
            raise ConfigError("relevance task needs at least 2 classes")
        if not self.expert_widths:
            raise ConfigError("experts need at least one layer")

    @property
    def weights(self) -> dict[str, float]:
        return dict(zip(self.tasks, self.task_weights))


@dataclass(frozen=True)
class ModelConfig:
    bottom: str = "dcn"
    matching: str = "cross"
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    dcn: DcnConfig = field(default_factory=DcnConfig)
    ftt: FttConfig = field(default_factory=FttConfig)
    mmoe: MmoeConfig = field(default_factory=MmoeConfig)
    seed: int = 0

    def __post_init__(self):
        if self.bottom not in ("dcn", "ftt"):
            raise ConfigError(f"bottom must be 'dcn' or 'ftt', got {self.bottom!r}")
        if self.matching not in ("cross", "dot", "off"):
            raise ConfigError(f"matching must be 'cross', 'dot' or 'off', got {self.matching!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(bottom=d["bottom"], matching=d["matching"], text=TextEncoderConfig(**d["text"]),
                   dcn=DcnConfig(**d["dcn"]), ftt=FttConfig(**d["ftt"]), mmoe=MmoeConfig(**d["mmoe"]),
                   seed=d["seed"])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 256
    patience: int = 2
    min_delta: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError(f"invalid training config {self}")


# -- layer functions --------------------------------------------------------

def cross_layer(h0, hn, weight, bias) -> Tensor:
    """h0 * (W hn + b) + hn."""
    h0, hn = nx.as_tensor(h0), nx.as_tensor(hn)
    if h0.shape != hn.shape:
        raise DimensionError(f"cross_layer: h0 {h0.shape} and hn {hn.shape} differ")
    return nx.add(nx.mul(h0, nx.linear(hn, weight, bias)), hn)


def assemble_x0_dcn(continuous, matching, interaction, embeddings: Sequence) -> Tensor:
    """Concatenate [continuous, matching, interaction, embed_1..embed_n]; empty segments drop out."""
    parts = [nx.as_tensor(p) for p in (continuous, matching, interaction, *embeddings) if p is not None]
    parts = [p for p in parts if p.shape[-1] > 0]
    lead = {p.shape[:-1] for p in parts}
    if len(lead) > 1:
        raise DimensionError(f"x0 segments have mismatched batch shapes {sorted(lead)}")
    return nx.concat(parts, axis=-1)


def ftt_tokenize_numeric(x, weight, bias) -> Tensor:
    """Per-feature scalar-to-token map W_i * x_i + b_i.

    ``x`` is (..., k) and ``weight``/``bias`` are (k, d); the result is (..., k, d).
    """
    x = nx.as_tensor(x)
    w, b = nx.as_tensor(weight), nx.as_tensor(bias)
    if x.ndim == 0:
        return nx.add(nx.mul(w, x), b)
    if w.shape != b.shape or w.ndim != 2 or w.shape[0] != x.shape[-1]:
        raise DimensionError(f"numeric tokenizer: x {x.shape}, W {w.shape}, b {b.shape}")
    return nx.add(nx.mul(nx.reshape(x, (*x.shape, 1)), w), b)


def ftt_project_matching(x_matching, weight, bias) -> Tensor:
    return nx.linear(x_matching, weight, bias)


def gate_forward(x_final, weight) -> Tensor:
    """softmax(W x_final) over experts; ``weight`` is (n_experts, len(x_final))."""
    x_final, weight = nx.as_tensor(x_final), nx.as_tensor(weight)
    if weight.ndim != 2 or weight.shape[1] != x_final.shape[-1]:
        raise DimensionError(f"gate: weight {weight.shape} vs x_final {x_final.shape}")
    return nx.softmax(nx.matmul(x_final, nx.transpose(weight)), axis=-1)


def mix_experts(expert_outputs: Sequence[Tensor], gate: Tensor) -> Tensor:
    """Gate-weighted sum of precomputed expert outputs (each (..., h))."""
    shapes = {e.shape for e in expert_outputs}
    if len(shapes) != 1:
        raise DimensionError(f"expert outputs differ in shape: {sorted(shapes)}")
    gate = nx.as_tensor(gate)
    if gate.shape[-1] != len(expert_outputs):
        raise DimensionError(f"gate has {gate.shape[-1]} entries for {len(expert_outputs)} experts")
    stacked = nx.stack(expert_outputs, axis=-2)
    return nx.tsum(nx.mul(nx.reshape(gate, (*gate.shape, 1)), stacked), axis=-2)


# -- bottoms ----------------------------------------------------------------

class DcnBottom(Module):
    """Parallel cross and deep networks over x0; output [cross_out, deep_out]."""

    def __init__(self, in_dim: int, config: DcnConfig, rng: np.random.Generator):
        self.cross = [Linear(in_dim, in_dim, rng) for _ in range(config.cross_layers)]
        self.deep = MLP(in_dim, list(config.deep_widths), rng, activate_last=True)
        self._in_dim = in_dim

    @property
    def out_dim(self) -> int:
        return self._in_dim + self.deep.out_dim

    def cross_forward(self, x0: Tensor) -> Tensor:
        h = x0
        for layer in self.cross:
            h = cross_layer(x0, h, layer.weight, layer.bias)
        return h

    def forward(self, x0: Tensor) -> Tensor:
        if x0.shape[-1] != self._in_dim:
            raise DimensionError(f"DCN expects x0 of width {self._in_dim}, got {x0.shape}")
        return nx.concat([self.cross_forward(x0), self.deep(x0)], axis=-1)


class FttBottom(Module):
    """Feature tokens + [CLS] through transformer blocks; Linear(ReLU(LN(CLS)))."""

    def __init__(self, n_numeric: int, match_dim: int, config: FttConfig, rng: np.random.Generator):
        d = config.dim
        self.cls_token = nx.parameter(nx.embedding_normal(rng, d))
        self.numeric_weight = nx.parameter(nx.glorot_uniform(rng, n_numeric, d)) if n_numeric else None
        self.numeric_bias = nx.parameter(np.zeros((n_numeric, d))) if n_numeric else None
        self.match_proj = Linear(match_dim, d, rng) if match_dim else None
        self.blocks = [TransformerBlock(d, config.heads, config.ff_dim, rng) for _ in range(config.layers)]
        self.norm = LayerNorm(d)
        self.head = Linear(d, config.out_dim, rng)
        self._dim = d

    @property
    def out_dim(self) -> int:
        return self.head.out_dim

    def tokens(self, numeric: Tensor | None, embeddings: Sequence[Tensor], matching: Tensor | None,
               batch: int) -> Tensor:
        d = self._dim
        cls = nx.add(nx.Tensor(np.zeros((batch, 1, d))), nx.reshape(self.cls_token, (1, 1, d)))
        parts = [cls]
        if numeric is not None and self.numeric_weight is not None:
            parts.append(ftt_tokenize_numeric(numeric, self.numeric_weight, self.numeric_bias))
        for emb in embeddings:
            if emb.shape[-1] != d:
                raise DimensionError(f"categorical token has width {emb.shape[-1]}, expected {d}")
            parts.append(nx.reshape(emb, (batch, 1, d)))
        if matching is not None and self.match_proj is not None:
            parts.append(nx.reshape(ftt_project_matching(matching, self.match_proj.weight,
                                                         self.match_proj.bias), (batch, 1, d)))
        return nx.concat(parts, axis=1)

    def forward(self, tokens: Tensor) -> Tensor:
        x = tokens
        for block in self.blocks:
            x = block(x)
        cls = x[:, 0, :]
        return self.head(nx.relu(self.norm(cls)))


# -- full model -------------------------------------------------------------

class RankingModel(Module):
    """Text matching + shared bottom + MMoE experts, per-task gates and towers."""

    def __init__(self, schema: FeatureSchema, config: ModelConfig, vocab_size: int):
        self._schema = schema
        self._config = config
        self._schema_hash = schema.hash()
        streams = [np.random.default_rng([config.seed, k]) for k in range(6)]
        mm = config.mmoe

        self.text_encoder = (TextEncoder(config.text, vocab_size, streams[_SEED_TEXT])
                             if config.matching != "off" else None)
        ftt = config.bottom == "ftt"
        self.embeddings = EmbeddingTable(schema, streams[_SEED_EMBED], dim=config.ftt.dim if ftt else None)
        self._inter_cols = [i for i, n in enumerate(schema.interaction) if n not in schema.masked]
        self._match_dim = {"cross": config.text.dim, "dot": 1, "off": 0}[config.matching]
        n_cont, n_inter = len(schema.continuous), len(self._inter_cols)
        if ftt:
            self.bottom = FttBottom(n_cont + n_inter, self._match_dim, config.ftt, streams[_SEED_BOTTOM])
        else:
            self._x0_dim = n_cont + self._match_dim + n_inter + sum(self.embeddings.dims)
            self.bottom = DcnBottom(self._x0_dim, config.dcn, streams[_SEED_BOTTOM])
        final = self.bottom.out_dim
        self.experts = [MLP(final, list(mm.expert_widths), streams[_SEED_EXPERTS], activate_last=True)
                        for _ in range(mm.num_experts)]
        self.gates: dict[str, Tensor] = {}
        self.towers: dict[str, MLP] = {}
        for task in mm.tasks:
            k = ALL_TASKS.index(task)
            self.gates[task] = nx.parameter(nx.glorot_uniform(
                np.random.default_rng([config.seed, _SEED_GATES, k]), mm.num_experts, final))
            out = mm.relevance_classes if task == "relevance" else 1
            self.towers[task] = MLP(mm.expert_widths[-1], [*mm.tower_widths, out],
                                    np.random.default_rng([config.seed, _SEED_TOWERS, k]),
                                    activate_last=False)

    @property
    def schema(self) -> FeatureSchema:
        return self._schema

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def schema_hash(self) -> str:
        return self._schema_hash

    @property
    def tasks(self) -> tuple[str, ...]:
        return self._config.mmoe.tasks

    def x0_layout(self) -> dict[str, slice]:
        """Column ranges of each DCN x0 segment."""
        widths = [("continuous", len(self._schema.continuous)), ("matching", self._match_dim),
                  ("interaction", len(self._inter_cols))]
        widths += [(f.name, d) for f, d in zip(self._schema.categorical, self.embeddings.dims)]
        out, start = {}, 0
        for name, w in widths:
            out[name] = slice(start, start + w)
            start += w
        return out

    def _check_batch(self, batch: EncodedBatch) -> None:
        s = self._schema
        if (batch.categorical.shape[1] != len(s.categorical) or batch.continuous.shape[1] != len(s.continuous)
                or batch.interaction.shape[1] != len(s.interaction)):
            raise ConfigError("encoded batch does not match the model's training schema")

    def x_matching(self, batch: EncodedBatch) -> Tensor | None:
        if self.text_encoder is None:
            return None
        lq = self.text_encoder(batch.query_tokens, batch.query_mask)
        lp = self.text_encoder(batch.product_tokens, batch.product_mask)
        return match_cross(lq, lp) if self._config.matching == "cross" else match_dot(lq, lp)

    def _embedded(self, batch: EncodedBatch) -> list[Tensor]:
        return [self.embeddings.lookup(i, batch.categorical[:, i]) for i in range(len(self._schema.categorical))]

    def x0(self, batch: EncodedBatch) -> Tensor:
        """DCN input for a batch."""
        inter = nx.Tensor(batch.interaction[:, self._inter_cols])
        return assemble_x0_dcn(nx.Tensor(batch.continuous), self.x_matching(batch), inter, self._embedded(batch))

    def x_final(self, batch: EncodedBatch) -> Tensor:
        self._check_batch(batch)
        if isinstance(self.bottom, DcnBottom):
            return self.bottom(self.x0(batch))
        numeric = np.concatenate([batch.continuous, batch.interaction[:, self._inter_cols]], axis=1)
        tokens = self.bottom.tokens(nx.Tensor(numeric) if numeric.shape[1] else None,
                                    self._embedded(batch), self.x_matching(batch), len(batch))
        return self.bottom(tokens)

    def heads(self, x_final: Tensor) -> dict[str, Tensor]:
        expert_out = [e(x_final) for e in self.experts]
        out = {}
        for task in self.tasks:
            h = mix_experts(expert_out, gate_forward(x_final, self.gates[task]))
            out[task] = tower_forward(self, h, task)
        return out

    def forward(self, batch: EncodedBatch) -> dict[str, Tensor]:
        """Per-task outputs: (B,) probabilities for binary tasks, (B, c) logits for relevance."""
        return self.heads(self.x_final(batch))


def tower_forward(model: RankingModel, h: Tensor, task: str) -> Tensor:
    if task not in model.towers:
        raise ConfigError(f"model has no tower for task {task!r}")
    out = model.towers[task](h)
    if task == "relevance":
        return out
    return nx.sigmoid(nx.reshape(out, out.shape[:-1]))


# -- loss -------------------------------------------------------------------

def mtl_loss(predictions: dict[str, Tensor], labels: dict[str, np.ndarray], weights: dict[str, float]) -> Tensor:
    """Weighted sum of per-task batch-mean losses (BCE for binary tasks, CE for relevance)."""
    if set(weights) != set(predictions):
        raise ConfigError(f"weights cover {sorted(weights)} but predictions cover {sorted(predictions)}")
    if any(w < 0 for w in weights.values()):
        raise ConfigError(f"task weights must be >= 0, got {weights}")
    total = None
    for task in ALL_TASKS:
        if task not in weights or weights[task] == 0:
            continue
        if task == "relevance":
            cls = np.asarray(labels[task], dtype=np.int64)
            if (cls < 0).any():
                raise DataError("relevance task is active but some examples have no relevance class")
            term = nx.categorical_ce(predictions[task], cls).mean()
        else:
            term = nx.bce(predictions[task], labels[task]).mean()
        term = term * weights[task]
        total = term if total is None else total + term
    return total


def batch_labels(batch: EncodedBatch, tasks: Sequence[str]) -> dict[str, np.ndarray]:
    return {t: batch.labels(t) for t in tasks}


# -- training ---------------------------------------------------------------

@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_loss: float = float("inf")
    stopped_early: bool = False
    seconds: float = 0.0


class TrainingDiverged(NumericalError):
    """Non-finite loss; ``checkpoint`` holds the last good parameter state."""

    def __init__(self, message: str, checkpoint: dict[str, np.ndarray]):
        super().__init__(message)
        self.checkpoint = checkpoint


def evaluate_loss(model: RankingModel, batch: EncodedBatch, batch_size: int = 1024) -> float:
    weights = model.config.mmoe.weights
    total, n = 0.0, len(batch)
    with nx.no_grad():
        for start in range(0, n, batch_size):
            part = batch.take(np.arange(start, min(n, start + batch_size)))
            loss = mtl_loss(model(part), batch_labels(part, model.tasks), weights)
            total += loss.item() * len(part)
    return total / n


def train(model: RankingModel, train_examples: Sequence[EncodedExample] | EncodedBatch,
          valid_examples: Sequence[EncodedExample] | EncodedBatch,
          config: TrainConfig = TrainConfig()) -> TrainingLog:
    """Adam with early stopping on validation loss; leaves the best-validation parameters in ``model``."""
    train_b = train_examples if isinstance(train_examples, EncodedBatch) else EncodedBatch.collate(train_examples)
    valid_b = valid_examples if isinstance(valid_examples, EncodedBatch) else EncodedBatch.collate(valid_examples)
    if not len(train_b) or not len(valid_b):
        raise DataError("train and validation splits must be non-empty")
    rng = np.random.default_rng([config.seed, 99])
    params = model.trainable_parameters()
    opt = nx.Adam(params, lr=config.learning_rate)
    weights = model.config.mmoe.weights
    logbook = TrainingLog()
    best_state = model.state_dict()
    good_state = best_state
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_b))
        losses = []
        for start in range(0, len(order), config.batch_size):
            part = train_b.take(order[start:start + config.batch_size])
            try:
                opt.zero_grad()
                loss = mtl_loss(model(part), batch_labels(part, model.tasks), weights)
                nx.backward(loss, params)
                for p in params:
                    if not np.all(np.isfinite(p.grad)):
                        raise NumericalError(f"non-finite gradient for a parameter of shape {p.shape}")
                opt.step()
            except NumericalError as exc:
                model.load_state_dict(good_state)
                raise TrainingDiverged(f"epoch {epoch}, batch at {start}: {exc}", good_state) from exc
            losses.append(loss.item())
            logbook.batch_losses.append(loss.item())
        good_state = model.state_dict()
        valid_loss = evaluate_loss(model, valid_b)
        logbook.epochs.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_loss": valid_loss})
        log.info("epoch %d train %.5f valid %.5f", epoch, np.mean(losses), valid_loss)
        if valid_loss < logbook.best_valid_loss - config.min_delta:
            logbook.best_valid_loss = valid_loss
            logbook.best_epoch = epoch
            best_state = good_state
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logbook.stopped_early = True
                break
    model.load_state_dict(best_state)
    logbook.seconds = time.perf_counter() - t0
    return logbook


_PROB_LO, _PROB_HI = np.finfo(float).tiny, np.nextafter(1.0, 0.0)


def predict_scores(model: RankingModel, examples: Sequence[EncodedExample] | EncodedBatch,
                   batch_size: int = 1024) -> dict[str, np.ndarray]:
    """Per-task outputs as numpy arrays, computed without touching model state."""
    batch = examples if isinstance(examples, EncodedBatch) else EncodedBatch.collate(examples)
    model._check_batch(batch)
    chunks: dict[str, list[np.ndarray]] = {t: [] for t in model.tasks}
    with nx.no_grad():
        for start in range(0, len(batch), batch_size):
            out = model(batch.take(np.arange(start, min(len(batch), start + batch_size))))
            for t, v in out.items():
                chunks[t].append(v.data)
    out = {t: np.concatenate(v, axis=0) for t, v in chunks.items()}
    for t in out:
        if t != "relevance":
            # saturated sigmoids round to 0 or 1 in float64; keep scores strictly inside
            out[t] = np.clip(out[t], _PROB_LO, _PROB_HI)
    return out


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path: str | Path, model: RankingModel, seed: int, extra: dict | None = None) -> None:
    """JSON container: config echo, schema and its hash, seed, every tensor, plus ``extra`` state."""
    blob = {
        "format": "mtlrank-checkpoint",
        "version": 1,
        "config": model.config.to_dict(),
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema_hash,
        "seed": seed,
        "vocab_size": (model.text_encoder.token_embedding.shape[1] if model.text_encoder else 0),
        "params": {name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
                   for name, p in model.named_parameters()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(blob))


def load_checkpoint(path: str | Path, expected_schema_hash: str | None = None) -> tuple[RankingModel, dict]:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != "mtlrank-checkpoint":
        raise ConfigError(f"{path} is not a checkpoint file")
    schema = FeatureSchema.from_dict(blob["schema"])
    if schema.hash() != blob["schema_hash"]:
        raise ConfigError("checkpoint schema does not match its recorded hash")
    if expected_schema_hash is not None and expected_schema_hash != blob["schema_hash"]:
        raise ConfigError(f"checkpoint schema {blob['schema_hash']} != expected {expected_schema_hash}")
    config = ModelConfig.from_dict(blob["config"])
    model = RankingModel(schema, config, max(blob["vocab_size"], 3))
    model.load_state_dict({k: np.array(v["data"]).reshape(v["shape"]) for k, v in blob["params"].items()})
    return model, blob


def with_tasks(config: ModelConfig, tasks: Sequence[str], weights: Sequence[float]) -> ModelConfig:
    return replace(config, mmoe=replace(config.mmoe, tasks=tuple(tasks), task_weights=tuple(weights)))
