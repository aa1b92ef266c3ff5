"""Tiny schemas, examples and models shared by the test modules."""

from dataclasses import replace

import numpy as np

from mtlrank.datamodel import (CategoricalFeature, ClickLog, ContinuousFeature, CustomerRecord, EncodedBatch,
                               EncodedExample, FeatureSchema, ImpressionRecord, ProductRecord, QueryRecord)
from mtlrank.networks import DcnConfig, FttConfig, MmoeConfig, ModelConfig, RankingModel
from mtlrank.textmatch import TextEncoderConfig

VOCAB = 12


def tiny_schema(masked=()):
    cats = [CategoricalFeature("product.brand", 3, {"a": 1, "b": 2}),
            CategoricalFeature("customer.segment", 2, {"x": 1, "y": 2, "z": 3}, user_specific=True)]
    conts = [ContinuousFeature("product.price"), ContinuousFeature("customer.past_clicks", user_specific=True)]
    return FeatureSchema(cats, conts, masked=list(masked), text_dim=8)


def tiny_config(bottom="dcn", matching="cross", tasks=("click", "atc", "trx"), weights=None, experts=4, seed=0):
    weights = weights or tuple(1.0 for _ in tasks)
    return ModelConfig(
        bottom=bottom, matching=matching,
        text=TextEncoderConfig(layers=1, dim=8, heads=2, ff_dim=8, max_len=6, trainable_layers=1),
        dcn=DcnConfig(cross_layers=2, deep_widths=(8,)),
        ftt=FttConfig(dim=8, layers=1, heads=2, ff_dim=8, out_dim=8),
        mmoe=MmoeConfig(num_experts=experts, expert_widths=(6,), tower_widths=(4,), tasks=tuple(tasks),
                        task_weights=tuple(weights), relevance_classes=3),
        seed=seed)


def tiny_model(**kw):
    masked = kw.pop("masked", ())
    return RankingModel(tiny_schema(masked), tiny_config(**kw), VOCAB)


def random_example(rng, qid="q0", pid=None, cid="u0", relevance=True):
    labels = {"click": int(rng.integers(0, 2))}
    labels["atc"] = labels["click"] * int(rng.integers(0, 2))
    labels["trx"] = labels["atc"] * int(rng.integers(0, 2))
    if relevance:
        labels["relevance"] = int(rng.integers(0, 3))
    return EncodedExample(
        qid, pid or f"p{int(rng.integers(0, 10**6))}", cid,
        rng.integers(0, 3, size=2), rng.normal(size=2), rng.normal(size=3),
        tuple(int(t) for t in rng.integers(1, VOCAB, size=int(rng.integers(1, 4)))),
        tuple(int(t) for t in rng.integers(1, VOCAB, size=int(rng.integers(1, 6)))),
        labels)


def random_batch(rng, n=3, **kw):
    return EncodedBatch.collate([random_example(rng, **kw) for _ in range(n)])


def jitter(model, rng, scale=0.1):
    for p in model.parameters():
        p.data[:] = p.data + scale * rng.normal(size=p.shape)


def tiny_log(impressions):
    """ClickLog over ad-hoc ids; ``impressions`` are (qid, pid, cid, pos, click, atc, trx) tuples."""
    queries = {q: QueryRecord(q, f"red shoe {q}") for q, *_ in impressions}
    products = {p: ProductRecord(p, "c0", f"red shoe {p}", "acme", "red", "adult", 10.0, 4.0)
                for _, p, *_ in impressions}
    customers = {c: CustomerRecord(c, {"segment": "x"}, {"past_clicks": 3.0}) for _, _, c, *_ in impressions}
    return ClickLog(queries, products, customers, [ImpressionRecord(*row) for row in impressions])


__all__ = ["tiny_schema", "tiny_config", "tiny_model", "random_example", "random_batch", "jitter", "tiny_log",
           "TINY_TOML", "tiny_experiment",
           "replace"]


TINY_TOML = """\
[experiment]
name = "tiny"
seed = 0

[world]
queries = 60
products = 200
customers = 40
categories = 4
impressions = 3000

[model.text]
layers = 1
dim = 8
heads = 2
ff_dim = 8
max_len = 8

[model.dcn]
cross_layers = 2
deep_widths = [16]

[model.ftt]
dim = 8
layers = 1
heads = 2
ff_dim = 8
out_dim = 8

[model.mmoe]
expert_widths = [8]
tower_widths = [4]
task_weights = [0.4, 0.1, 0.5]

[sampling]
beta = 0.5

[train]
learning_rate = 0.01
epochs = 2
batch_size = 128

[metrics]
k = 1
pd_k = 3
pd_sample = 50
"""


def tiny_experiment(out_dir, text=TINY_TOML):
    """ExperimentConfig parsed from ``text`` with its output directory set to ``out_dir``."""
    import tomli

    from mtlrank.harness.experiment import config_from_dict

    return replace(config_from_dict(tomli.loads(text), text), output_dir=str(out_dir))
