"""Seeded synthetic search logs with planted query/customer/product affinities.

Each request is one (query, customer) pair shown a list of products. A
product's latent affinity for the request combines text relevance to the
query, a customer-taste term and product quality; clicks follow
``sigmoid(affinity) * position_bias(position)`` and add-to-cart / purchase
are drawn conditionally, so the label hierarchy holds by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..datamodel import ClickLog, CustomerRecord, ImpressionRecord, ProductRecord, QueryRecord, save_jsonl
from ..errors import ConfigError

log = logging.getLogger(__name__)

CATEGORY_WORDS = ("shoes", "shirt", "jacket", "dress", "bag", "watch", "lamp", "chair", "mug", "toy",
                  "phone", "laptop", "pillow", "blanket", "bottle", "hat", "scarf", "glove", "sock", "belt")
TYPE_WORDS = ("classic", "sport", "slim", "travel", "mini", "pro", "soft", "smart", "vintage", "urban",
              "outdoor", "premium", "basic", "deluxe", "eco", "kids")
COLORS = ("black", "white", "red", "blue", "green", "grey", "pink", "brown")
AGE_GROUPS = ("kids", "teen", "adult", "senior")
SEGMENTS = ("bargain", "family", "trend", "premium", "outdoor")
REGIONS = ("north", "south", "east", "west")


@dataclass(frozen=True)
class SyntheticWorldConfig:
    queries: int = 2000
    products: int = 5000
    customers: int = 500
    categories: int = 10
    impressions: int = 50_000
    list_size: int = 10
    latent_dim: int = 8
    brands_per_category: int = 6
    position_bias_exponent: float = 1.0
    click_rate: float = 0.3
    atc_rate: float = 0.12
    trx_rate: float = 0.05
    relevance_strength: float = 1.5
    taste_strength: float = 1.5
    quality_strength: float = 0.8
    off_category_share: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("queries", "products", "customers", "categories", "impressions", "list_size",
                     "latent_dim", "brands_per_category"):
            if getattr(self, name) < 1:
                raise ConfigError(f"world.{name} must be >= 1, got {getattr(self, name)}")
        if self.categories > len(CATEGORY_WORDS):
            raise ConfigError(f"at most {len(CATEGORY_WORDS)} categories are supported")
        for name in ("click_rate", "atc_rate", "trx_rate"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"world.{name} must be in (0, 1), got {getattr(self, name)}")
        if not self.trx_rate <= self.atc_rate <= self.click_rate:
            raise ConfigError("rates must satisfy trx_rate <= atc_rate <= click_rate")
        if not 0 <= self.off_category_share <= 1:
            raise ConfigError("off_category_share must be in [0, 1]")
        if self.position_bias_exponent < 0:
            raise ConfigError("position_bias_exponent must be >= 0")


@dataclass
class SyntheticWorld:
    """Generated logs plus the latent quantities behind them."""

    logs: ClickLog
    config: SyntheticWorldConfig
    ground_truth: list[dict] = field(default_factory=list)

    def save(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        logs_path, truth_path = out / "impressions.jsonl", out / "ground_truth.jsonl"
        save_jsonl(self.logs, logs_path)
        with open(truth_path, "w", encoding="utf-8") as fh:
            for row in self.ground_truth:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        (out / "world.json").write_text(json.dumps(asdict(self.config), sort_keys=True, indent=1) + "\n")
        return logs_path, truth_path


def position_bias(position, exponent: float) -> np.ndarray:
    """Examination probability 1 / position ** exponent."""
    return 1.0 / np.asarray(position, dtype=float) ** exponent


def _logit(p: float) -> float:
    return float(np.log(p / (1 - p)))


def generate_synthetic_logs(world: SyntheticWorldConfig) -> SyntheticWorld:
    rng = np.random.default_rng(world.seed)
    n_cat, dim = world.categories, world.latent_dim
    categories = [f"c{k:02d}" for k in range(n_cat)]

    # products: category, brand, color, type word, age group, price, quality, latent taste vector
    brands = [[f"{CATEGORY_WORDS[k][:3]}{b}" for b in "abcdefghijklmnopqrstuvwxyz"[:world.brands_per_category]]
              for k in range(n_cat)]
    p_cat = rng.integers(0, n_cat, world.products)
    p_brand = rng.integers(0, world.brands_per_category, world.products)
    p_color = rng.integers(0, len(COLORS), world.products)
    p_type = rng.integers(0, len(TYPE_WORDS), world.products)
    p_age = rng.integers(0, len(AGE_GROUPS), world.products)
    p_quality = rng.normal(0.0, 1.0, world.products)
    p_logprice = rng.normal(3.0, 0.6, world.products) + 0.3 * p_quality
    brand_vec = rng.normal(0.0, 1.0, (n_cat, world.brands_per_category, dim))
    p_vec = brand_vec[p_cat, p_brand] + 0.5 * rng.normal(0.0, 1.0, (world.products, dim))
    p_vec /= np.sqrt(dim)

    products: dict[str, ProductRecord] = {}
    pids = [f"p{i:05d}" for i in range(world.products)]
    for i, pid in enumerate(pids):
        k = p_cat[i]
        title = f"{brands[k][p_brand[i]]} {COLORS[p_color[i]]} {TYPE_WORDS[p_type[i]]} {CATEGORY_WORDS[k]}"
        rating = float(np.clip(np.round(3.5 + 0.8 * p_quality[i] + rng.normal(0, 0.3), 1), 0.0, 5.0))
        products[pid] = ProductRecord(pid, categories[k], title, brands[k][p_brand[i]], COLORS[p_color[i]],
                                      AGE_GROUPS[p_age[i]], round(float(np.exp(p_logprice[i])), 2), rating)

    # customers: segment drives taste; age band and price affinity add further signal
    seg_vec = rng.normal(0.0, 1.0, (len(SEGMENTS), dim))
    c_seg = rng.integers(0, len(SEGMENTS), world.customers)
    c_age = rng.integers(0, len(AGE_GROUPS), world.customers)
    c_region = rng.integers(0, len(REGIONS), world.customers)
    c_vec = seg_vec[c_seg] + 0.5 * rng.normal(0.0, 1.0, (world.customers, dim))
    c_vec /= np.sqrt(dim)
    c_price = rng.normal(3.0, 0.6, world.customers)
    c_activity = rng.gamma(2.0, 10.0, world.customers)
    customers: dict[str, CustomerRecord] = {}
    cids = [f"u{i:04d}" for i in range(world.customers)]
    for i, cid in enumerate(cids):
        customers[cid] = CustomerRecord(
            cid,
            {"segment": SEGMENTS[c_seg[i]], "age_band": AGE_GROUPS[c_age[i]], "region": REGIONS[c_region[i]]},
            {"past_clicks": float(np.round(c_activity[i], 1)), "price_affinity": float(np.round(c_price[i], 3))})

    # queries: category word, optional type word / color / brand
    q_cat = rng.integers(0, n_cat, world.queries)
    q_type = np.where(rng.random(world.queries) < 0.6, rng.integers(0, len(TYPE_WORDS), world.queries), -1)
    q_color = np.where(rng.random(world.queries) < 0.4, rng.integers(0, len(COLORS), world.queries), -1)
    q_brand = np.where(rng.random(world.queries) < 0.2,
                       rng.integers(0, world.brands_per_category, world.queries), -1)
    queries: dict[str, QueryRecord] = {}
    qids = [f"q{i:05d}" for i in range(world.queries)]
    for i, qid in enumerate(qids):
        k = q_cat[i]
        words = [brands[k][q_brand[i]]] if q_brand[i] >= 0 else []
        words += [COLORS[q_color[i]]] if q_color[i] >= 0 else []
        words += [TYPE_WORDS[q_type[i]]] if q_type[i] >= 0 else []
        words.append(CATEGORY_WORDS[k])
        queries[qid] = QueryRecord(qid, " ".join(words))

    by_cat = [np.flatnonzero(p_cat == k) for k in range(n_cat)]

    def text_relevance(qi: int, cand: np.ndarray) -> np.ndarray:
        rel = 2.0 * (p_cat[cand] == q_cat[qi]) - 1.0
        if q_type[qi] >= 0:
            rel += 0.8 * (p_type[cand] == q_type[qi])
        if q_color[qi] >= 0:
            rel += 0.8 * (p_color[cand] == q_color[qi])
        if q_brand[qi] >= 0:
            rel += 0.8 * ((p_brand[cand] == q_brand[qi]) & (p_cat[cand] == q_cat[qi]))
        return rel

    n_requests = int(np.ceil(world.impressions / world.list_size))
    max_pairs = world.queries * world.customers
    if n_requests > max_pairs:
        raise ConfigError(f"{n_requests} requests exceed the {max_pairs} distinct (query, customer) pairs")
    pair_ids = rng.choice(max_pairs, size=n_requests, replace=False)

    base = _logit(world.click_rate)
    atc_shift = _logit(min(world.atc_rate / world.click_rate, 1 - 1e-9))
    trx_shift = _logit(min(world.trx_rate / world.atc_rate, 1 - 1e-9))
    impressions: list[ImpressionRecord] = []
    truth: list[dict] = []
    remaining = world.impressions
    for pair in pair_ids:
        qi, ci = divmod(int(pair), world.customers)
        size = min(world.list_size, remaining)
        remaining -= size
        n_off = int(round(size * world.off_category_share))
        pool = by_cat[q_cat[qi]]
        n_in = min(size - n_off, len(pool))
        in_cat = rng.choice(pool, size=n_in, replace=False) if n_in else np.array([], dtype=int)
        taken = set(in_cat.tolist())
        others = rng.choice(world.products, size=min(world.products, size - n_in + len(taken)), replace=False)
        others = np.array([p for p in others.tolist() if p not in taken][: size - n_in], dtype=int)
        cand = np.concatenate([in_cat, others]).astype(int)

        taste = p_vec[cand] @ c_vec[ci]
        taste += 0.5 * (p_age[cand] == c_age[ci]) - 0.4 * np.abs(p_logprice[cand] - c_price[ci])
        affinity = (world.relevance_strength * text_relevance(qi, cand) + world.taste_strength * taste
                    + world.quality_strength * p_quality[cand])
        # the logged ranker saw only a noisy view of the affinity
        shown = cand[np.argsort(-(affinity + rng.normal(0.0, 1.5, size)), kind="stable")]
        aff_by_pid = dict(zip(cand.tolist(), affinity.tolist()))
        aff_shown = np.array([aff_by_pid[p] for p in shown.tolist()])
        positions = np.arange(1, size + 1)
        p_click = 1.0 / (1.0 + np.exp(-(aff_shown + base))) * position_bias(positions, world.position_bias_exponent)
        click = rng.random(size) < p_click
        atc = click & (rng.random(size) < 1.0 / (1.0 + np.exp(-(aff_shown - 2.5 + atc_shift))))
        trx = atc & (rng.random(size) < 1.0 / (1.0 + np.exp(-(aff_shown - 2.5 + trx_shift))))
        for j, p in enumerate(shown.tolist()):
            impressions.append(ImpressionRecord(qids[qi], pids[p], cids[ci], j + 1,
                                                int(click[j]), int(atc[j]), int(trx[j])))
        order = sorted(range(size), key=lambda j: (-aff_shown[j], pids[shown[j]]))
        truth.append({"query_id": qids[qi], "customer_id": cids[ci],
                      "ranking": [pids[shown[j]] for j in order],
                      "affinity": [round(float(aff_shown[j]), 6) for j in order]})

    logs = ClickLog(queries, products, customers, impressions)
    log.info("synthetic world seed %d: %d impressions, %d requests, click rate %.4f", world.seed,
             len(impressions), len(truth), np.mean([i.y_click for i in impressions]))
    return SyntheticWorld(logs, world, truth)
