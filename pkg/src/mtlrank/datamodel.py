"""Domain records, the feature schema, categorical embeddings and JSONL IO.

Every categorical vocabulary reserves index 0 for UNKNOWN; that index is
also the "default value" used when user-specific features are reset.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DataError, DimensionError
from .layers import Module

log = logging.getLogger(__name__)

UNKNOWN = 0
BINARY_TASKS = ("click", "atc", "trx")
INTERACTION_FEATURES = ("query_item_ctr", "title_overlap", "semantic_score")


# -- records ----------------------------------------------------------------

@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"query {self.query_id!r} has empty text")


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    category_id: str
    title: str = ""
    brand: str = ""
    color: str = ""
    age_group: str = ""
    price: float = 0.0
    rating: float = 0.0
    extra_categorical: dict = field(default_factory=dict)
    extra_numeric: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.category_id in (None, ""):
            raise DataError(f"product {self.product_id!r} has no category")
        if self.price < 0:
            raise DataError(f"product {self.product_id!r} has negative price {self.price}")
        if not 0.0 <= self.rating <= 5.0:
            raise DataError(f"product {self.product_id!r} rating {self.rating} outside [0, 5]")

    @property
    def document(self) -> str:
        """Title, brand, color and target age group joined by single spaces."""
        return " ".join(part for part in (self.title, self.brand, self.color, self.age_group) if part)


@dataclass(frozen=True)
class CustomerRecord:
    customer_id: str
    demographic_categoricals: dict = field(default_factory=dict)
    history_numerics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ImpressionRecord:
    query_id: str
    product_id: str
    customer_id: str
    position: int
    y_click: int
    y_atc: int
    y_trx: int
    relevance_class: int | None = None

    def __post_init__(self):
        if self.position < 1:
            raise DataError(f"position must be >= 1, got {self.position}")
        for name in ("y_click", "y_atc", "y_trx"):
            if getattr(self, name) not in (0, 1):
                raise DataError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")

    @property
    def positive(self) -> bool:
        return bool(self.y_click or self.y_atc or self.y_trx)

    @property
    def hierarchy_ok(self) -> bool:
        return self.y_trx <= self.y_atc <= self.y_click

    def label(self, task: str) -> int:
        if task == "relevance":
            return -1 if self.relevance_class is None else self.relevance_class
        return getattr(self, f"y_{task}")

    def request_key(self) -> tuple[str, str]:
        return (self.query_id, self.customer_id)


@dataclass
class ClickLog:
    """Impressions plus the query/product/customer records they reference."""

    queries: dict[str, QueryRecord] = field(default_factory=dict)
    products: dict[str, ProductRecord] = field(default_factory=dict)
    customers: dict[str, CustomerRecord] = field(default_factory=dict)
    impressions: list[ImpressionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.impressions)

    def subset(self, impressions: Iterable[ImpressionRecord]) -> "ClickLog":
        return ClickLog(self.queries, self.products, self.customers, list(impressions))

    def lookup(self, imp: ImpressionRecord) -> tuple[QueryRecord, ProductRecord, CustomerRecord]:
        try:
            q = self.queries[imp.query_id]
        except KeyError:
            raise DataError(f"impression references unknown query id {imp.query_id!r}") from None
        try:
            p = self.products[imp.product_id]
        except KeyError:
            raise DataError(f"impression references unknown product id {imp.product_id!r}") from None
        try:
            c = self.customers[imp.customer_id]
        except KeyError:
            raise DataError(f"impression references unknown customer id {imp.customer_id!r}") from None
        return q, p, c


# -- JSONL IO ---------------------------------------------------------------

_KNOWN_TOP = {"query", "product", "customer", "position", "labels", "relevance_class"}
_KNOWN_PRODUCT = {"id", "title", "brand", "color", "age_group", "category", "price", "rating", "extra"}
_KNOWN_CUSTOMER = {"id", "demographics", "history"}


def _require(obj: dict, key: str, where: str, lineno: int):
    if not isinstance(obj, dict) or key not in obj:
        raise DataError(f"line {lineno}: missing required field '{where}{key}'")
    return obj[key]


def _split_extra(extra: dict) -> tuple[dict, dict]:
    cats, nums = {}, {}
    for k, v in extra.items():
        if isinstance(v, bool) or isinstance(v, str):
            cats[k] = str(v)
        elif isinstance(v, (int, float)):
            nums[k] = float(v)
        else:
            cats[k] = json.dumps(v, sort_keys=True)
    return cats, nums


def load_jsonl(path: str | Path) -> ClickLog:
    """Read a click log; one impression object per line."""
    out = ClickLog()
    unknown: set[str] = set()
    bad_hierarchy = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            unknown.update(f"{k}" for k in obj if k not in _KNOWN_TOP)
            q = _require(obj, "query", "", lineno)
            p = _require(obj, "product", "", lineno)
            c = _require(obj, "customer", "", lineno)
            labels = _require(obj, "labels", "", lineno)
            position = _require(obj, "position", "", lineno)
            qid = str(_require(q, "id", "query.", lineno))
            pid = str(_require(p, "id", "product.", lineno))
            cid = str(_require(c, "id", "customer.", lineno))
            unknown.update(f"product.{k}" for k in p if k not in _KNOWN_PRODUCT)
            unknown.update(f"customer.{k}" for k in c if k not in _KNOWN_CUSTOMER)
            try:
                if qid not in out.queries:
                    out.queries[qid] = QueryRecord(qid, str(_require(q, "text", "query.", lineno)))
                if pid not in out.products:
                    cats, nums = _split_extra(p.get("extra", {}))
                    out.products[pid] = ProductRecord(
                        product_id=pid,
                        category_id=str(_require(p, "category", "product.", lineno)),
                        title=p.get("title", ""), brand=p.get("brand", ""), color=p.get("color", ""),
                        age_group=p.get("age_group", ""), price=float(p.get("price", 0.0)),
                        rating=float(p.get("rating", 0.0)),
                        extra_categorical=cats, extra_numeric=nums)
                if cid not in out.customers:
                    out.customers[cid] = CustomerRecord(
                        cid,
                        {k: str(v) for k, v in c.get("demographics", {}).items()},
                        {k: float(v) for k, v in c.get("history", {}).items()})
                rel = obj.get("relevance_class")
                imp = ImpressionRecord(
                    qid, pid, cid, int(position),
                    int(_require(labels, "click", "labels.", lineno)),
                    int(_require(labels, "atc", "labels.", lineno)),
                    int(_require(labels, "trx", "labels.", lineno)),
                    None if rel is None else int(rel))
            except DataError as exc:
                if str(exc).startswith("line "):
                    raise
                raise DataError(f"line {lineno}: {exc}") from None
            except (TypeError, ValueError) as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            bad_hierarchy += not imp.hierarchy_ok
            out.impressions.append(imp)
    if unknown:
        log.warning("ignoring unknown fields in %s: %s", path, ", ".join(sorted(unknown)))
    if bad_hierarchy:
        log.warning("%d impressions violate trx => atc => click", bad_hierarchy)
    return out


def impression_to_json(imp: ImpressionRecord, logs: ClickLog) -> dict:
    q, p, c = logs.lookup(imp)
    extra = {**p.extra_categorical, **p.extra_numeric}
    product = {"id": p.product_id, "title": p.title, "brand": p.brand, "color": p.color,
               "age_group": p.age_group, "category": p.category_id, "price": p.price,
               "rating": p.rating}
    if extra:
        product["extra"] = extra
    obj = {
        "query": {"id": q.query_id, "text": q.text},
        "product": product,
        "customer": {"id": c.customer_id, "demographics": dict(c.demographic_categoricals),
                     "history": dict(c.history_numerics)},
        "position": imp.position,
        "labels": {"click": imp.y_click, "atc": imp.y_atc, "trx": imp.y_trx},
    }
    if imp.relevance_class is not None:
        obj["relevance_class"] = imp.relevance_class
    return obj


def save_jsonl(logs: ClickLog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for imp in logs.impressions:
            fh.write(json.dumps(impression_to_json(imp, logs), sort_keys=True) + "\n")


# -- schema -----------------------------------------------------------------

def resolve_value(source: str, product: ProductRecord, customer: CustomerRecord):
    """Fetch the raw value a feature ``source`` ("product.brand", "customer.region") names."""
    owner, _, attr = source.partition(".")
    if owner == "product":
        if attr == "category":
            return product.category_id
        if attr in ("title", "brand", "color", "age_group", "price", "rating"):
            return getattr(product, attr)
        if attr in product.extra_categorical:
            return product.extra_categorical[attr]
        return product.extra_numeric.get(attr)
    if owner == "customer":
        if attr in customer.demographic_categoricals:
            return customer.demographic_categoricals[attr]
        return customer.history_numerics.get(attr)
    raise ConfigError(f"feature source must start with 'product.' or 'customer.', got {source!r}")


@dataclass
class CategoricalFeature:
    name: str
    embed_dim: int
    vocab: dict[str, int] = field(default_factory=dict)
    user_specific: bool = False

    @property
    def vocab_size(self) -> int:
        return len(self.vocab) + 1

    def index(self, value) -> int:
        if value is None:
            return UNKNOWN
        return self.vocab.get(str(value), UNKNOWN)


@dataclass
class ContinuousFeature:
    name: str
    mean: float = 0.0
    std: float = 1.0
    user_specific: bool = False

    def standardize(self, value) -> float:
        if value is None:
            return 0.0
        return (float(value) - self.mean) / self.std


DEFAULT_CATEGORICAL = {
    "product.category": 8, "product.brand": 8, "product.color": 4, "product.age_group": 4,
    "customer.segment": 4, "customer.age_band": 4, "customer.region": 4,
}
DEFAULT_CONTINUOUS = ("product.price", "product.rating", "customer.past_clicks", "customer.price_affinity")


@dataclass
class FeatureSchema:
    """Feature layout shared by encoding, the networks and PD@K.

    Feature names are their sources ("product.brand"); customer-derived
    features are the user-specific ones.
    """

    categorical: list[CategoricalFeature]
    continuous: list[ContinuousFeature]
    interaction: list[str] = field(default_factory=lambda: list(INTERACTION_FEATURES))
    masked: list[str] = field(default_factory=list)
    text_dim: int = 32

    def __post_init__(self):
        names = [f.name for f in self.categorical] + [f.name for f in self.continuous] + list(self.interaction)
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ConfigError(f"feature names must be unique, duplicated: {sorted(dup)}")
        for f in self.categorical:
            if f.embed_dim < 1:
                raise ConfigError(f"{f.name}: embedding size must be >= 1")
        for f in [*self.categorical, *self.continuous]:
            if f.user_specific and not f.name.startswith("customer."):
                raise ConfigError(f"{f.name}: only customer features can be user-specific")
        unknown = set(self.masked) - set(self.interaction)
        if unknown:
            raise ConfigError(f"masked features not in the interaction list: {sorted(unknown)}")

    @classmethod
    def fit(cls, logs: ClickLog, categorical: dict[str, int] | None = None,
            continuous: Sequence[str] | None = None, masked: Sequence[str] = (),
            text_dim: int = 32) -> "FeatureSchema":
        """Build vocabularies and standardization statistics from ``logs`` (the train split)."""
        categorical = DEFAULT_CATEGORICAL if categorical is None else categorical
        continuous = DEFAULT_CONTINUOUS if continuous is None else continuous
        rows = [logs.lookup(imp) for imp in logs.impressions]
        cats = []
        for name, dim in categorical.items():
            values = sorted({str(v) for _, p, c in rows if (v := resolve_value(name, p, c)) is not None})
            cats.append(CategoricalFeature(name, dim, {v: i + 1 for i, v in enumerate(values)},
                                           name.startswith("customer.")))
        conts = []
        for name in continuous:
            vals = np.array([float(v) for _, p, c in rows if (v := resolve_value(name, p, c)) is not None])
            mu = float(vals.mean()) if vals.size else 0.0
            sd = float(vals.std()) if vals.size else 1.0
            conts.append(ContinuousFeature(name, mu, sd if sd > 1e-12 else 1.0, name.startswith("customer.")))
        return cls(cats, conts, list(INTERACTION_FEATURES), list(masked), text_dim)

    @property
    def user_categorical(self) -> list[int]:
        return [i for i, f in enumerate(self.categorical) if f.user_specific]

    @property
    def user_continuous(self) -> list[int]:
        return [i for i, f in enumerate(self.continuous) if f.user_specific]

    def with_mask(self, masked: Sequence[str]) -> "FeatureSchema":
        return FeatureSchema(self.categorical, self.continuous, list(self.interaction), list(masked),
                             self.text_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls([CategoricalFeature(**f) for f in d["categorical"]],
                   [ContinuousFeature(**f) for f in d["continuous"]],
                   list(d["interaction"]), list(d["masked"]), d["text_dim"])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- embeddings -------------------------------------------------------------

class EmbeddingTable(Module):
    """One learnable (e_i x v_i) matrix per categorical feature."""

    def __init__(self, schema: FeatureSchema, rng: np.random.Generator, dim: int | None = None):
        self.tables = [nx.parameter(nx.embedding_normal(rng, (dim or f.embed_dim, f.vocab_size)))
                       for f in schema.categorical]

    @property
    def dims(self) -> list[int]:
        return [t.shape[0] for t in self.tables]

    def lookup(self, feature_index: int, indices) -> nx.Tensor:
        table = self.tables[feature_index]
        idx = np.asarray(indices, dtype=np.int64)
        idx = np.where((idx < 0) | (idx >= table.shape[1]), UNKNOWN, idx)
        return nx.embed_columns(table, idx)


def embed_categorical(feature_index: int, category: int, tables: EmbeddingTable) -> nx.Tensor:
    """Column ``category`` of table ``feature_index``; out-of-vocabulary maps to UNKNOWN."""
    return tables.lookup(feature_index, category)


# -- interaction features ---------------------------------------------------

def word_tokens(text: str) -> list[str]:
    return re.findall(r"[0-9a-z]+", text.lower())


def title_overlap(query_text: str, title: str) -> float:
    """Share of distinct query tokens that appear in the title."""
    q = set(word_tokens(query_text))
    if not q:
        return 0.0
    return len(q & set(word_tokens(title))) / len(q)


@dataclass
class CtrTable:
    """Historical (query, product) impression and click counts."""

    counts: dict[tuple[str, str], list[int]] = field(default_factory=dict)

    @classmethod
    def from_impressions(cls, impressions: Iterable[ImpressionRecord]) -> "CtrTable":
        counts: dict[tuple[str, str], list[int]] = {}
        for imp in impressions:
            c = counts.setdefault((imp.query_id, imp.product_id), [0, 0])
            c[0] += 1
            c[1] += imp.y_click
        return cls(counts)

    def ctr(self, query_id: str, product_id: str, exclude: ImpressionRecord | None = None) -> float:
        """CTR of the pair; ``exclude`` removes one event (leave-one-out on training rows)."""
        n, k = self.counts.get((query_id, product_id), (0, 0))
        if exclude is not None and (exclude.query_id, exclude.product_id) == (query_id, product_id) and n:
            n, k = n - 1, k - exclude.y_click
        return k / n if n > 0 else 0.0

    def to_dict(self) -> dict:
        return {f"{q}\t{p}": v for (q, p), v in sorted(self.counts.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "CtrTable":
        return cls({tuple(k.split("\t", 1)): list(v) for k, v in d.items()})


def build_interaction_features(query: QueryRecord, product: ProductRecord, aggregates: CtrTable,
                               scorer: Callable[[str, ProductRecord], float],
                               schema: FeatureSchema | None = None,
                               exclude: ImpressionRecord | None = None) -> np.ndarray:
    """[query-item CTR, title-overlap ratio, semantic score] in schema order, masked slots zeroed."""
    order = schema.interaction if schema else list(INTERACTION_FEATURES)
    masked = set(schema.masked) if schema else set()
    out = np.zeros(len(order))
    for i, name in enumerate(order):
        if name in masked:
            continue
        if name == "query_item_ctr":
            out[i] = aggregates.ctr(query.query_id, product.product_id, exclude)
        elif name == "title_overlap":
            out[i] = title_overlap(query.text, product.title)
        elif name == "semantic_score":
            out[i] = scorer(query.text, product)
        else:
            raise ConfigError(f"unknown interaction feature {name!r}")
    return out


# -- encoding ---------------------------------------------------------------

@dataclass(frozen=True)
class EncodedExample:
    query_id: str
    product_id: str
    customer_id: str
    categorical: np.ndarray
    continuous: np.ndarray
    interaction: np.ndarray
    query_tokens: tuple[int, ...]
    product_tokens: tuple[int, ...]
    labels: dict

    def __eq__(self, other):
        if not isinstance(other, EncodedExample):
            return NotImplemented
        return (self.query_id, self.product_id, self.customer_id, self.query_tokens,
                self.product_tokens, self.labels) == (
                    other.query_id, other.product_id, other.customer_id, other.query_tokens,
                    other.product_tokens, other.labels) and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("categorical", "continuous", "interaction"))

    __hash__ = None


@dataclass
class ExampleEncoder:
    """Turns impressions into network inputs under a fixed schema.

    Holds no mutable state: statistics live in ``schema`` and ``ctr_table``
    and are only read here. ``tokenizer`` and ``scorer`` come from
    :mod:`mtlrank.textmatch`.
    """

    schema: FeatureSchema
    ctr_table: CtrTable
    tokenizer: Callable[[str], list[int]]
    scorer: Callable[[str, ProductRecord], float]

    def __post_init__(self):
        self._score_cache: dict[tuple[str, str], float] = {}
        self._token_cache: dict[str, tuple[int, ...]] = {}

    def _tokens(self, text: str) -> tuple[int, ...]:
        if text not in self._token_cache:
            self._token_cache[text] = tuple(self.tokenizer(text))
        return self._token_cache[text]

    def _score(self, q: QueryRecord, p: ProductRecord) -> float:
        key = (q.query_id, p.product_id)
        if key not in self._score_cache:
            self._score_cache[key] = float(self.scorer(q.text, p))
        return self._score_cache[key]

    def encode(self, imp: ImpressionRecord, stores: ClickLog, leave_one_out: bool = False) -> EncodedExample:
        q, p, c = stores.lookup(imp)
        cat = np.array([f.index(resolve_value(f.name, p, c)) for f in self.schema.categorical], dtype=np.int64)
        cont = np.array([f.standardize(resolve_value(f.name, p, c)) for f in self.schema.continuous])
        inter = build_interaction_features(q, p, self.ctr_table, lambda _t, _p: self._score(q, p),
                                           self.schema, imp if leave_one_out else None)
        labels = {"click": imp.y_click, "atc": imp.y_atc, "trx": imp.y_trx}
        if imp.relevance_class is not None:
            labels["relevance"] = imp.relevance_class
        return EncodedExample(imp.query_id, imp.product_id, imp.customer_id, cat, cont, inter,
                              self._tokens(q.text), self._tokens(p.document), labels)

    def encode_all(self, stores: ClickLog, leave_one_out: bool = False) -> list[EncodedExample]:
        return [self.encode(imp, stores, leave_one_out) for imp in stores.impressions]


def encode_example(impression: ImpressionRecord, stores: ClickLog, schema: FeatureSchema,
                   ctr_table: CtrTable, tokenizer, scorer) -> EncodedExample:
    return ExampleEncoder(schema, ctr_table, tokenizer, scorer).encode(impression, stores)


@dataclass
class EncodedBatch:
    """Column-stacked examples; token sequences are right-padded with PAD (0)."""

    examples: list[EncodedExample]
    categorical: np.ndarray
    continuous: np.ndarray
    interaction: np.ndarray
    query_tokens: np.ndarray
    query_mask: np.ndarray
    product_tokens: np.ndarray
    product_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.examples)

    @staticmethod
    def _pad(seqs: list[tuple[int, ...]]) -> tuple[np.ndarray, np.ndarray]:
        width = max(1, max((len(s) for s in seqs), default=1))
        ids = np.zeros((len(seqs), width), dtype=np.int64)
        mask = np.zeros((len(seqs), width), dtype=bool)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = s
            mask[i, :max(1, len(s))] = True
        return ids, mask

    @classmethod
    def collate(cls, examples: Sequence[EncodedExample]) -> "EncodedBatch":
        if not examples:
            raise DimensionError("cannot collate an empty batch")
        qt, qm = cls._pad([e.query_tokens for e in examples])
        pt, pm = cls._pad([e.product_tokens for e in examples])
        return cls(list(examples),
                   np.stack([e.categorical for e in examples]).reshape(len(examples), -1),
                   np.stack([e.continuous for e in examples]).reshape(len(examples), -1),
                   np.stack([e.interaction for e in examples]).reshape(len(examples), -1),
                   qt, qm, pt, pm)

    def take(self, indices) -> "EncodedBatch":
        """Row subset; token padding is trimmed to the longest kept sequence."""
        idx = np.asarray(indices, dtype=np.int64)
        qm, pm = self.query_mask[idx], self.product_mask[idx]
        qw = max(1, int(qm.sum(axis=1).max(initial=1)))
        pw = max(1, int(pm.sum(axis=1).max(initial=1)))
        return EncodedBatch([self.examples[i] for i in idx], self.categorical[idx],
                            self.continuous[idx], self.interaction[idx],
                            self.query_tokens[idx, :qw], qm[:, :qw],
                            self.product_tokens[idx, :pw], pm[:, :pw])

    def labels(self, task: str) -> np.ndarray:
        if task == "relevance":
            return np.array([e.labels.get("relevance", -1) for e in self.examples], dtype=np.int64)
        return np.array([e.labels[task] for e in self.examples], dtype=np.float64)
