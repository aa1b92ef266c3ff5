"""Category/popularity-stratified log sampling and click-derived relevance labels."""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .datamodel import ClickLog, ImpressionRecord, ProductRecord
from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# -- sampling ---------------------------------------------------------------

@dataclass(frozen=True)
class SamplingConfig:
    bins_per_category: int = 5
    beta: float = 0.2
    alpha_pos: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if not 0 < self.alpha_pos < 1:
            raise ConfigError(f"alpha_pos must be in (0, 1), got {self.alpha_pos}")
        if self.bins_per_category < 1:
            raise ConfigError("bins_per_category must be >= 1")


@dataclass
class BinReport:
    category: str
    bin: int
    products: int
    size: int
    requested: int
    positives_available: int
    positives_requested: int
    positives_taken: int
    negatives_available: int
    negatives_requested: int
    negatives_taken: int

    @property
    def taken(self) -> int:
        return self.positives_taken + self.negatives_taken

    @property
    def shortfall(self) -> int:
        return self.requested - self.taken


@dataclass
class SampleResult:
    impressions: list[ImpressionRecord]
    bins: list[BinReport] = field(default_factory=list)

    @property
    def shortfall(self) -> int:
        return sum(b.shortfall for b in self.bins)

    def write_report(self, path: str | Path) -> None:
        cols = [f for f in BinReport.__dataclass_fields__] + ["taken", "shortfall"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for b in self.bins:
                row = asdict(b)
                writer.writerow([row.get(c, getattr(b, c)) for c in cols])


def _bin_rng(seed: int, category: str, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(category.encode("utf-8")), k])


def stratified_sample(logs: ClickLog, config: SamplingConfig) -> SampleResult:
    """Per category, bin products by impression-count rank and sample each bin.

    Each bin is sampled at rate ``beta`` with a ``alpha_pos`` share of positive
    (clicked/carted/bought) impressions, uniformly without replacement. A side
    that is short is taken whole; the gap is reported, never refilled from
    the other side or another bin.
    """
    by_category: dict[str, list[int]] = defaultdict(list)
    for i, imp in enumerate(logs.impressions):
        product = logs.products.get(imp.product_id)
        if product is None:
            raise ContractError(f"impression {i} references unknown product {imp.product_id!r}")
        by_category[product.category_id].append(i)
    seen = set(by_category)
    for cat in sorted({p.category_id for p in logs.products.values()} - seen):
        log.warning("category %s has no impressions; skipped", cat)

    chosen: list[int] = []
    reports: list[BinReport] = []
    for cat in sorted(by_category):
        rows = by_category[cat]
        counts: dict[str, int] = defaultdict(int)
        for i in rows:
            counts[logs.impressions[i].product_id] += 1
        ranked = sorted(counts, key=lambda pid: (-counts[pid], pid))
        for k, members in enumerate(np.array_split(np.array(ranked, dtype=object), config.bins_per_category)):
            if len(members) == 0:
                continue
            member_set = set(members.tolist())
            bin_rows = [i for i in rows if logs.impressions[i].product_id in member_set]
            pos = [i for i in bin_rows if logs.impressions[i].positive]
            neg = [i for i in bin_rows if not logs.impressions[i].positive]
            n = round_half_up(config.beta * len(bin_rows))
            n_pos = round_half_up(config.alpha_pos * n)
            n_neg = n - n_pos
            rng = _bin_rng(config.seed, cat, k)
            take_pos = rng.choice(len(pos), size=min(n_pos, len(pos)), replace=False) if pos else []
            take_neg = rng.choice(len(neg), size=min(n_neg, len(neg)), replace=False) if neg else []
            chosen.extend(pos[j] for j in take_pos)
            chosen.extend(neg[j] for j in take_neg)
            reports.append(BinReport(cat, k, len(members), len(bin_rows), n, len(pos), n_pos,
                                     len(take_pos), len(neg), n_neg, len(take_neg)))
    chosen.sort()
    return SampleResult([logs.impressions[i] for i in chosen], reports)


# -- relevance labels -------------------------------------------------------

def position_weight(position: int) -> float:
    """ln(position + 1) ** 1.5."""
    if position < 1:
        raise ContractError(f"position must be >= 1, got {position}")
    return math.log(position + 1) ** 1.5


def transaction_weight(clicks: int, transactions: int) -> float:
    """1 + transactions / clicks, or 1.0 when there are no clicks."""
    if clicks <= 0:
        return 1.0
    return 1.0 + transactions / clicks


WEIGHTING_MODES = ("per_event", "aggregate_transactions", "literal")


@dataclass
class ClickAggregate:
    """Per (query, product) counts folded over impression events."""

    query_id: str
    product_id: str
    impressions: int = 0
    clicks: int = 0
    transactions: int = 0
    click_mass: float = 0.0
    transaction_mass: float = 0.0
    click_position_sum: int = 0
    sem_score: float = 0.0

    def add_event(self, position: int, click: int, transaction: int = 0) -> None:
        self.impressions += 1
        if click:
            w = position_weight(position)
            self.clicks += 1
            self.click_mass += w
            self.click_position_sum += position
            if transaction:
                self.transactions += 1
                self.transaction_mass += w
        elif transaction:
            log.warning("transaction without click for (%s, %s) dropped", self.query_id, self.product_id)

    def merge(self, other: "ClickAggregate") -> "ClickAggregate":
        if (self.query_id, self.product_id) != (other.query_id, other.product_id):
            raise ContractError("can only merge aggregates of the same (query, product)")
        return replace(self, impressions=self.impressions + other.impressions,
                       clicks=self.clicks + other.clicks, transactions=self.transactions + other.transactions,
                       click_mass=self.click_mass + other.click_mass,
                       transaction_mass=self.transaction_mass + other.transaction_mass,
                       click_position_sum=self.click_position_sum + other.click_position_sum)


def aggregate_clicks(impressions: Iterable[ImpressionRecord]) -> dict[tuple[str, str], ClickAggregate]:
    out: dict[tuple[str, str], ClickAggregate] = {}
    for imp in impressions:
        key = (imp.query_id, imp.product_id)
        agg = out.get(key)
        if agg is None:
            agg = out[key] = ClickAggregate(*key)
        agg.add_event(imp.position, imp.y_click, imp.y_trx)
    return out


def weighted_ctr(agg: ClickAggregate, mode: str = "per_event") -> float:
    """Position- and transaction-weighted clicks per impression.

    ``per_event`` weights each click at its own position and doubles clicks
    that led to a transaction. ``aggregate_transactions`` keeps per-event
    position weights but multiplies the total by 1 + transactions/clicks.
    ``literal`` is clicks x position_weight(mean click position) x
    transaction_weight.
    """
    if agg.impressions < 1:
        raise ContractError(f"({agg.query_id}, {agg.product_id}) has no impressions")
    if agg.clicks == 0:
        return 0.0
    if mode == "per_event":
        mass = agg.click_mass + agg.transaction_mass
    elif mode == "aggregate_transactions":
        mass = agg.click_mass * transaction_weight(agg.clicks, agg.transactions)
    elif mode == "literal":
        mean_pos = agg.click_position_sum / agg.clicks
        mass = agg.clicks * math.log(mean_pos + 1) ** 1.5 * transaction_weight(agg.clicks, agg.transactions)
    else:
        raise ConfigError(f"unknown weighting mode {mode!r}, expected one of {WEIGHTING_MODES}")
    return mass / agg.impressions


@dataclass(frozen=True)
class RelevanceConfig:
    alpha_rel: float = 0.5
    classes: int = 5
    weighting: str = "per_event"

    def __post_init__(self):
        if not 0 <= self.alpha_rel <= 1:
            raise ConfigError(f"alpha_rel must be in [0, 1], got {self.alpha_rel}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 relevance classes, got {self.classes}")
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(f"unknown weighting mode {self.weighting!r}")


@dataclass(frozen=True)
class QueryNormalization:
    """Min/max of weighted CTR over one query's products."""

    low: float
    high: float

    @classmethod
    def over(cls, values: Sequence[float]) -> "QueryNormalization":
        return cls(min(values), max(values))

    def __call__(self, value: float) -> float:
        spread = self.high - self.low
        if spread <= 0:
            return 0.5
        return min(1.0, max(0.0, (value - self.low) / spread))


def relevance_score(wctr: float, sem_score: float, norm: QueryNormalization, config: RelevanceConfig) -> float:
    """alpha * minmax(weighted CTR) + (1 - alpha) * semantic score rescaled to [0, 1]."""
    sem01 = min(1.0, max(0.0, (sem_score + 1.0) / 2.0))
    return config.alpha_rel * norm(wctr) + (1.0 - config.alpha_rel) * sem01


def discretize_labels(scores: Sequence[float], classes: int) -> list[int]:
    """Per-query quantile classes 0..c-1; a score equal to a threshold takes the lower class."""
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if not len(scores):
        return []
    arr = np.asarray(scores, dtype=float)
    thresholds = np.quantile(arr, np.arange(1, classes) / classes)
    return [int(np.sum(s > thresholds)) for s in arr]


@dataclass
class LabelRow:
    query_id: str
    product_id: str
    weighted_ctr: float
    sem_score: float
    relevance_score: float
    relevance_class: int


def generate_labels(logs: ClickLog, scorer: Callable[[str, ProductRecord], float],
                    config: RelevanceConfig = RelevanceConfig()) -> list[LabelRow]:
    """Relevance labels for every (query, product) pair observed in ``logs``."""
    aggs = aggregate_clicks(logs.impressions)
    by_query: dict[str, list[ClickAggregate]] = defaultdict(list)
    for (qid, _), agg in sorted(aggs.items()):
        if agg.impressions == 0:
            log.warning("(%s, %s) has no impressions; excluded", qid, agg.product_id)
            continue
        agg.sem_score = float(scorer(logs.queries[qid].text, logs.products[agg.product_id]))
        by_query[qid].append(agg)
    rows: list[LabelRow] = []
    for qid in sorted(by_query):
        group = by_query[qid]
        wctrs = [weighted_ctr(a, config.weighting) for a in group]
        norm = QueryNormalization.over(wctrs)
        scores = [relevance_score(w, a.sem_score, norm, config) for w, a in zip(wctrs, group)]
        classes = discretize_labels(scores, config.classes)
        rows.extend(LabelRow(qid, a.product_id, w, a.sem_score, s, c)
                    for a, w, s, c in zip(group, wctrs, scores, classes))
    return rows


def apply_labels(logs: ClickLog, labels: Iterable[LabelRow]) -> ClickLog:
    """Copy of ``logs`` with relevance_class filled where a label exists."""
    table = {(r.query_id, r.product_id): r.relevance_class for r in labels}
    return logs.subset(replace(imp, relevance_class=table.get((imp.query_id, imp.product_id)))
                       for imp in logs.impressions)


def save_labels(labels: Iterable[LabelRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in labels:
            fh.write(json.dumps(asdict(row), sort_keys=True) + "\n")


def load_labels(path: str | Path) -> list[LabelRow]:
    with open(path, encoding="utf-8") as fh:
        return [LabelRow(**json.loads(line)) for line in fh if line.strip()]
