"""Ranking and classification metrics: AUC-ROC, MRR@K and the PD@K personalization degree."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .datamodel import UNKNOWN, BINARY_TASKS, EncodedExample, FeatureSchema
from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Mann-Whitney AUC with midranks for ties; ``None`` when only one class is present."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores vs {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class RankedList:
    """Products of one request ordered by (score desc, product id asc)."""

    query_id: Hashable
    product_ids: tuple[str, ...]
    scores: tuple[float, ...]

    def top(self, k: int) -> tuple[str, ...]:
        return self.product_ids[:k]


def rank_scored(query_id: Hashable, product_ids: Sequence[str], scores: Sequence[float]) -> RankedList:
    if len(set(product_ids)) != len(product_ids):
        raise ContractError(f"duplicate products in ranking for {query_id!r}")
    order = sorted(range(len(product_ids)), key=lambda i: (-scores[i], product_ids[i]))
    return RankedList(query_id, tuple(product_ids[i] for i in order), tuple(float(scores[i]) for i in order))


@dataclass(frozen=True)
class MetricParams:
    k: int = 1
    task: str = "click"
    pd_sample: int = 200
    seed: int = 0
    ranking: str = "own"
    weights: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")
        if self.pd_sample < 1:
            raise ConfigError("PD sample size must be >= 1")
        if self.task not in BINARY_TASKS:
            raise ConfigError(f"task must be one of {BINARY_TASKS}, got {self.task!r}")
        if self.ranking not in ("own", "combined"):
            raise ConfigError(f"ranking must be 'own' or 'combined', got {self.ranking!r}")


def ranking_key(outputs: Mapping[str, np.ndarray], params: MetricParams) -> np.ndarray:
    """Per-example score used to order products: the task's own probability, or a weighted sum."""
    if params.ranking == "own":
        if params.task not in outputs:
            raise ConfigError(f"model has no output for task {params.task!r}")
        return np.asarray(outputs[params.task])
    total = np.zeros(len(next(iter(outputs.values()))))
    for task, w in zip(BINARY_TASKS, params.weights):
        if task in outputs:
            total = total + w * np.asarray(outputs[task])
    return total


def request_key(example: EncodedExample) -> tuple[str, str]:
    return (example.query_id, example.customer_id)


def group_requests(examples: Sequence[EncodedExample]) -> dict[tuple[str, str], list[int]]:
    """Row indices per request; repeated products inside a request keep their first row."""
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    seen: dict[tuple[str, str], set[str]] = defaultdict(set)
    for i, ex in enumerate(examples):
        key = request_key(ex)
        if ex.product_id in seen[key]:
            continue
        seen[key].add(ex.product_id)
        groups[key].append(i)
    return dict(sorted(groups.items()))


def relevant_sets(examples: Sequence[EncodedExample], task: str) -> dict[tuple[str, str], set[str]]:
    out: dict[tuple[str, str], set[str]] = defaultdict(set)
    for ex in examples:
        key = request_key(ex)
        out.setdefault(key, set())
        if ex.labels[task]:
            out[key].add(ex.product_id)
    return dict(out)


def rank_groups(examples: Sequence[EncodedExample], scores: np.ndarray) -> dict[tuple[str, str], RankedList]:
    return {key: rank_scored(key, [examples[i].product_id for i in rows], [scores[i] for i in rows])
            for key, rows in group_requests(examples).items()}


def rank_products(model, group: Sequence[EncodedExample], task: str = "click",
                  params: MetricParams | None = None) -> RankedList:
    """Score one query's products with ``model`` and order them."""
    from .networks import predict_scores

    if not group:
        raise ContractError("cannot rank an empty group")
    qids = {ex.query_id for ex in group}
    if len(qids) != 1:
        raise ContractError(f"group mixes query ids {sorted(qids)}")
    params = params or MetricParams(task=task)
    scores = ranking_key(predict_scores(model, group), replace(params, task=task))
    return rank_scored(group[0].query_id, [ex.product_id for ex in group], list(scores))


def mrr_at_k(rankings: Mapping[Hashable, RankedList], relevant: Mapping[Hashable, set], k: int) -> float:
    """Mean over queries of 1/rank of the first relevant product within the top K (0 if none)."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if not rankings:
        return 0.0
    total = 0.0
    for key, ranked in rankings.items():
        rel = relevant.get(key, set())
        for rank, pid in enumerate(ranked.top(k), start=1):
            if pid in rel:
                total += 1.0 / rank
                break
    return total / len(rankings)


def strip_user_features(example: EncodedExample, schema: FeatureSchema) -> EncodedExample:
    """User-specific numerics set to 0 (the train mean) and categoricals to UNKNOWN."""
    cat = example.categorical.copy()
    cont = example.continuous.copy()
    cat[schema.user_categorical] = UNKNOWN
    cont[schema.user_continuous] = 0.0
    return replace(example, categorical=cat, continuous=cont)


def overlap_at_k(a: RankedList, b: RankedList, k: int) -> float:
    """|TopK(a) & TopK(b)| / K, with K capped at the list length."""
    kk = min(k, len(a.product_ids))
    return len(set(a.top(kk)) & set(b.top(kk))) / kk


def pd_at_k(model, examples: Sequence[EncodedExample], params: MetricParams, schema: FeatureSchema,
            scorer: Callable | None = None) -> float:
    """Mean top-K overlap between rankings with and without user-specific features.

    ``scorer(examples) -> outputs`` defaults to :func:`networks.predict_scores`
    on ``model``.
    """
    from .networks import predict_scores

    score = scorer or (lambda exs: predict_scores(model, exs))
    if not schema.user_categorical and not schema.user_continuous:
        log.warning("schema has no user-specific features; PD@K is degenerate (1.0)")
        return 1.0
    groups = group_requests(examples)
    keys = list(groups)
    if not keys:
        raise ContractError("PD@K needs at least one request")
    rng = np.random.default_rng(params.seed)
    picked = sorted(rng.choice(len(keys), size=min(params.pd_sample, len(keys)), replace=False))
    rows = [i for j in picked for i in groups[keys[j]]]
    test_p = [examples[i] for i in rows]
    test_m = [strip_user_features(ex, schema) for ex in test_p]
    rank_p = rank_groups(test_p, ranking_key(score(test_p), params))
    rank_m = rank_groups(test_m, ranking_key(score(test_m), params))
    return float(np.mean([overlap_at_k(rank_p[k], rank_m[k], params.k) for k in rank_p]))


# -- baselines --------------------------------------------------------------

def popularity_scores(examples: Sequence[EncodedExample], train_clicks: Mapping[str, int]) -> np.ndarray:
    return np.array([float(train_clicks.get(ex.product_id, 0)) for ex in examples])


def random_scores(examples: Sequence[EncodedExample], seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(len(examples))


@dataclass
class MetricRecord:
    metric: str
    task: str
    k: int | None
    value: float | None
    n: int
    n_kind: str
    seed: int
    model: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"metric": self.metric, "task": self.task, "K": self.k, "value": self.value,
               self.n_kind: self.n, "seed": self.seed}
        if self.model:
            out["model"] = self.model
        return out
