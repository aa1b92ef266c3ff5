"""Text side of the model: tokenizer, transformer text encoder, matching ops, semantic scorer."""

from __future__ import annotations

import json
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import numerics as nx
from .datamodel import ProductRecord, word_tokens
from .errors import ConfigError, DimensionError
from .layers import Module, TransformerBlock
from .numerics import Tensor

PAD, UNK, CLS = 0, 1, 2
_RESERVED = {"[PAD]": PAD, "[UNK]": UNK, "[CLS]": CLS}


class Vocabulary:
    """Word-level token ids; 0/1/2 are PAD/UNK/CLS."""

    def __init__(self, token_to_id: dict[str, int]):
        for tok, idx in _RESERVED.items():
            if token_to_id.get(tok) != idx:
                raise ConfigError(f"reserved token {tok} must map to {idx}")
        if sorted(token_to_id.values()) != list(range(len(token_to_id))):
            raise ConfigError("vocabulary ids must be dense in [0, size)")
        self.token_to_id = dict(token_to_id)

    @classmethod
    def build(cls, texts: Iterable[str], max_vocab: int = 8192) -> "Vocabulary":
        counts = Counter(tok for text in texts for tok in word_tokens(text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: max(0, max_vocab - len(_RESERVED))]
        mapping = dict(_RESERVED)
        for tok, _ in ranked:
            mapping[tok] = len(mapping)
        return cls(mapping)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __getitem__(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "Vocabulary":
        return cls(json.loads(blob))


def tokenize(text: str, vocab: Vocabulary, max_len: int = 32) -> list[int]:
    """Lowercased word ids, UNK for misses, truncated to ``max_len``. No CLS is added."""
    return [vocab[t] for t in word_tokens(text)][:max_len]


@dataclass(frozen=True)
class TextEncoderConfig:
    layers: int = 2
    dim: int = 32
    heads: int = 2
    ff_dim: int = 64
    max_len: int = 32
    trainable_layers: int = 1

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"text encoder dim {self.dim} not divisible by {self.heads} heads")
        if not 0 <= self.trainable_layers <= self.layers:
            raise ConfigError(f"trainable_layers must be in [0, {self.layers}], got {self.trainable_layers}")


class TextEncoder(Module):
    """Token + position embeddings, pre-norm transformer blocks, max pooling over tokens.

    Only the top ``trainable_layers`` blocks receive gradient; the embedding
    tables train only when every block does.
    """

    def __init__(self, config: TextEncoderConfig, vocab_size: int, rng: np.random.Generator):
        self.token_embedding = nx.parameter(nx.embedding_normal(rng, (config.dim, vocab_size)))
        self.position_embedding = nx.parameter(nx.embedding_normal(rng, (config.dim, config.max_len)))
        self.blocks = [TransformerBlock(config.dim, config.heads, config.ff_dim, rng)
                       for _ in range(config.layers)]
        self._config = config
        self._truncated = 0
        self.apply_freeze()

    @property
    def config(self) -> TextEncoderConfig:
        return self._config

    @property
    def truncated_count(self) -> int:
        return self._truncated

    def apply_freeze(self) -> None:
        cfg = self._config
        frozen = cfg.layers - cfg.trainable_layers
        all_trainable = cfg.trainable_layers == cfg.layers
        self.token_embedding.requires_grad = all_trainable
        self.position_embedding.requires_grad = all_trainable
        for i, block in enumerate(self.blocks):
            block.set_trainable(i >= frozen)

    def forward(self, tokens: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        """Encode a (batch, tokens) id matrix into (batch, dim) pooled vectors."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise DimensionError(f"expected (batch, tokens) ids, got shape {tokens.shape}")
        if tokens.shape[1] > self._config.max_len:
            self._truncated += int(tokens.shape[0])
            tokens = tokens[:, : self._config.max_len]
            mask = None if mask is None else np.asarray(mask)[:, : self._config.max_len]
        if mask is None:
            mask = np.ones(tokens.shape, dtype=bool)
        t = tokens.shape[1]
        x = nx.embed_columns(self.token_embedding, tokens)
        x = x + nx.embed_columns(self.position_embedding, np.arange(t))
        for block in self.blocks:
            x = block(x, mask)
        return nx.max_pool_rows(x, mask)

    def encode_text(self, token_ids: list[int]) -> Tensor:
        """One sequence to one vector; an empty sequence encodes a lone PAD."""
        ids = list(token_ids)[: self._config.max_len] or [PAD]
        return self.forward(np.array([ids]))[0]


def match_cross(query_vec, product_vec) -> Tensor:
    """Element-wise product of the two text vectors."""
    return nx.elementwise_mul(query_vec, product_vec)


def match_dot(query_vec, product_vec) -> Tensor:
    """Inner product over the last axis, kept as a trailing 1-wide feature."""
    q, p = nx.as_tensor(query_vec), nx.as_tensor(product_vec)
    if q.shape != p.shape:
        raise DimensionError(f"match_dot: shapes {q.shape} and {p.shape} differ")
    return nx.tsum(nx.mul(q, p), axis=-1, keepdims=True)


# -- semantic scorer --------------------------------------------------------

@dataclass(frozen=True)
class SemanticScorerConfig:
    variant: str = "hash_ngram"
    ngram: int = 3
    hash_dim: int = 256

    def __post_init__(self):
        if self.variant not in ("hash_ngram", "encoder_cosine"):
            raise ConfigError(f"unknown semantic scorer variant {self.variant!r}")
        if self.hash_dim < 16:
            raise ConfigError(f"hash_dim must be >= 16, got {self.hash_dim}")
        if self.ngram < 1:
            raise ConfigError("ngram must be >= 1")


def char_ngrams(text: str, n: int) -> list[str]:
    norm = " ".join(text.lower().split())
    if not norm:
        return []
    if len(norm) <= n:
        return [norm]
    return [norm[i:i + n] for i in range(len(norm) - n + 1)]


def hashed_ngram_vector(text: str, config: SemanticScorerConfig) -> np.ndarray:
    """L2-normalized counts of hashed character n-grams (zero vector for empty text)."""
    vec = np.zeros(config.hash_dim)
    for gram in char_ngrams(text, config.ngram):
        vec[zlib.crc32(gram.encode("utf-8")) % config.hash_dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def semantic_score(query_text: str, product: ProductRecord | str,
                   config: SemanticScorerConfig = SemanticScorerConfig(),
                   encoder: TextEncoder | None = None, vocab: Vocabulary | None = None) -> float:
    """Cosine similarity between query and product document embeddings, in [-1, 1]."""
    doc = product if isinstance(product, str) else product.document
    if config.variant == "hash_ngram":
        return _cosine(hashed_ngram_vector(query_text, config), hashed_ngram_vector(doc, config))
    if encoder is None or vocab is None:
        raise ConfigError("encoder_cosine scorer needs an encoder and a vocabulary")
    with nx.no_grad():
        qv = encoder.encode_text(tokenize(query_text, vocab, encoder.config.max_len)).data
        dv = encoder.encode_text(tokenize(doc, vocab, encoder.config.max_len)).data
    if not word_tokens(query_text) or not word_tokens(doc):
        return 0.0
    return _cosine(qv, dv)


class SemanticScorer:
    """Callable ``(query_text, product) -> score`` bound to one configuration."""

    def __init__(self, config: SemanticScorerConfig = SemanticScorerConfig(),
                 encoder: TextEncoder | None = None, vocab: Vocabulary | None = None):
        self.config = config
        self.encoder = encoder
        self.vocab = vocab

    def __call__(self, query_text: str, product: ProductRecord | str) -> float:
        return semantic_score(query_text, product, self.config, self.encoder, self.vocab)
