import copy
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import random_example, replace, tiny_log
from mtlrank import numerics as nx
from mtlrank.datamodel import (UNKNOWN, CategoricalFeature, ContinuousFeature, CtrTable, CustomerRecord,
                               EmbeddingTable, EncodedBatch, ExampleEncoder, FeatureSchema, ImpressionRecord,
                               ProductRecord, QueryRecord, build_interaction_features, embed_categorical,
                               encode_example, load_jsonl, save_jsonl, title_overlap)
from mtlrank.errors import ConfigError, DataError, DimensionError
from mtlrank.harness.synthetic import SyntheticWorldConfig, generate_synthetic_logs


def _line(**over):
    obj = {"query": {"id": "q1", "text": "red shoes"},
           "product": {"id": "p1", "title": "red running shoes", "brand": "acme", "color": "red",
                       "age_group": "adult", "category": "c1", "price": 20.0, "rating": 4.5},
           "customer": {"id": "u1", "demographics": {"segment": "x"}, "history": {"past_clicks": 2}},
           "position": 1, "labels": {"click": 1, "atc": 0, "trx": 0}}
    obj.update(over)
    return obj


def _write(path, objs):
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs))
    return path


def _const_scorer(value):
    return lambda _q, _p: value


class TestRecords:
    def test_blank_query(self):
        with pytest.raises(DataError):
            QueryRecord("q", "   ")

    def test_product_validation(self):
        with pytest.raises(DataError):
            ProductRecord("p", "")
        with pytest.raises(DataError):
            ProductRecord("p", "c", price=-1.0)
        with pytest.raises(DataError):
            ProductRecord("p", "c", rating=5.5)

    def test_document_joins_with_single_spaces(self):
        p = ProductRecord("p", "c", title="red shoe", brand="acme", color="", age_group="kids")
        assert p.document == "red shoe acme kids"

    def test_impression_validation(self):
        with pytest.raises(DataError):
            ImpressionRecord("q", "p", "u", 0, 1, 0, 0)
        with pytest.raises(DataError):
            ImpressionRecord("q", "p", "u", 1, 2, 0, 0)

    def test_hierarchy_flag(self):
        assert ImpressionRecord("q", "p", "u", 1, 1, 1, 1).hierarchy_ok
        assert not ImpressionRecord("q", "p", "u", 1, 0, 0, 1).hierarchy_ok

    def test_dangling_id_is_named(self):
        log = tiny_log([("q1", "p1", "u1", 1, 0, 0, 0)])
        with pytest.raises(DataError, match="p9"):
            log.lookup(ImpressionRecord("q1", "p9", "u1", 1, 0, 0, 0))


class TestJsonl:
    def test_empty_file(self, tmp_path):
        assert len(load_jsonl(_write(tmp_path / "e.jsonl", []))) == 0

    def test_round_trip_synthetic(self, tmp_path):
        world = generate_synthetic_logs(SyntheticWorldConfig(queries=40, products=120, customers=30,
                                                             categories=4, impressions=1000))
        logs = world.logs
        assert len(logs) == 1000
        save_jsonl(logs, tmp_path / "a.jsonl")
        again = load_jsonl(tmp_path / "a.jsonl")
        assert again.impressions == logs.impressions
        for kind in ("queries", "products", "customers"):
            assert set(getattr(again, kind)) <= set(getattr(logs, kind))
            for k, v in getattr(again, kind).items():
                assert getattr(logs, kind)[k] == v

    def test_missing_position_named(self, tmp_path):
        obj = _line()
        del obj["position"]
        with pytest.raises(DataError, match="line 2.*position"):
            load_jsonl(_write(tmp_path / "m.jsonl", [_line(), obj]))

    def test_missing_nested_field_named(self, tmp_path):
        obj = _line()
        del obj["labels"]["atc"]
        with pytest.raises(DataError, match="labels.atc"):
            load_jsonl(_write(tmp_path / "m.jsonl", [obj]))

    def test_malformed_line_numbered(self, tmp_path):
        with pytest.raises(DataError, match="line 2"):
            load_jsonl(_write(tmp_path / "m.jsonl", [_line(), "{not json"]))

    def test_unknown_fields_warn_once(self, tmp_path, caplog):
        objs = [_line(session="s1"), _line(session="s2")]
        with caplog.at_level(logging.WARNING, logger="mtlrank"):
            logs = load_jsonl(_write(tmp_path / "u.jsonl", objs))
        assert len(logs) == 2
        warnings = [r for r in caplog.records if "unknown fields" in r.message]
        assert len(warnings) == 1 and "session" in warnings[0].getMessage()

    def test_hierarchy_violation_is_a_warning(self, tmp_path, caplog):
        obj = _line(labels={"click": 0, "atc": 0, "trx": 1})
        with caplog.at_level(logging.WARNING, logger="mtlrank"):
            logs = load_jsonl(_write(tmp_path / "h.jsonl", [obj]))
        assert len(logs) == 1
        assert any("violate" in r.getMessage() for r in caplog.records)

    def test_field_order_irrelevant(self, tmp_path):
        a = load_jsonl(_write(tmp_path / "a.jsonl", [_line()]))
        flipped = dict(reversed(list(_line().items())))
        b = load_jsonl(_write(tmp_path / "b.jsonl", [flipped]))
        assert a.impressions == b.impressions and a.products == b.products

    def test_extra_product_fields(self, tmp_path):
        prod = _line()["product"] | {"extra": {"material": "leather", "weight": 1.5}}
        logs = load_jsonl(_write(tmp_path / "x.jsonl", [_line(product=prod)]))
        p = logs.products["p1"]
        assert p.extra_categorical == {"material": "leather"} and p.extra_numeric == {"weight": 1.5}
        save_jsonl(logs, tmp_path / "y.jsonl")
        assert load_jsonl(tmp_path / "y.jsonl").products == logs.products


class TestSchema:
    def test_duplicate_names(self):
        with pytest.raises(ConfigError):
            FeatureSchema([CategoricalFeature("product.brand", 2)], [ContinuousFeature("product.brand")])

    def test_embed_dim_positive(self):
        with pytest.raises(ConfigError):
            FeatureSchema([CategoricalFeature("product.brand", 0)], [])

    def test_user_flag_only_on_customer_features(self):
        with pytest.raises(ConfigError):
            FeatureSchema([CategoricalFeature("product.brand", 2, user_specific=True)], [])

    def test_fit_uses_reserved_unknown(self):
        log = tiny_log([("q1", "p1", "u1", 1, 0, 0, 0), ("q1", "p2", "u2", 2, 0, 0, 0)])
        schema = FeatureSchema.fit(log)
        brand = next(f for f in schema.categorical if f.name == "product.brand")
        assert brand.vocab == {"acme": 1}
        assert brand.index("other") == UNKNOWN and brand.vocab_size == 2
        assert {f.name for f in schema.categorical if f.user_specific} == {
            "customer.segment", "customer.age_band", "customer.region"}

    def test_round_trip_and_hash(self):
        schema = FeatureSchema.fit(tiny_log([("q1", "p1", "u1", 1, 0, 0, 0)]))
        again = FeatureSchema.from_dict(json.loads(json.dumps(schema.to_dict())))
        assert again == schema and again.hash() == schema.hash()
        assert schema.with_mask(["semantic_score"]).hash() != schema.hash()

    def test_mask_must_name_interaction(self):
        with pytest.raises(ConfigError):
            FeatureSchema([], [], masked=["product.price"])


class TestEmbedding:
    def _table(self):
        schema = FeatureSchema([CategoricalFeature("product.brand", 3, {"a": 1, "b": 2, "c": 3})], [])
        table = EmbeddingTable(schema, np.random.default_rng(0))
        return table

    def test_shapes(self):
        assert self._table().tables[0].shape == (3, 4)

    def test_column_selection_equals_one_hot_product(self):
        table = self._table()
        w = table.tables[0].data
        for v in range(4):
            np.testing.assert_array_equal(embed_categorical(0, v, table).data, w @ np.eye(4)[v])

    def test_out_of_vocabulary_maps_to_unknown(self):
        table = self._table()
        np.testing.assert_array_equal(embed_categorical(0, 17, table).data, table.tables[0].data[:, UNKNOWN])

    def test_gradient_hits_selected_column(self):
        table = self._table()
        nx.backward(nx.tsum(embed_categorical(0, 2, table)), table.parameters())
        expected = np.zeros((3, 4))
        expected[:, 2] = 1.0
        np.testing.assert_array_equal(table.tables[0].grad, expected)

    def test_gradient_matches_finite_differences(self):
        table = self._table()
        assert nx.gradcheck(lambda: nx.tsum(embed_categorical(0, 2, table)), table.parameters()) < 1e-6


class TestInteraction:
    def _q(self, text="red shoes"):
        return QueryRecord("q1", text)

    def _p(self, title="red running shoes"):
        return ProductRecord("p1", "c1", title=title)

    def test_cold_start_ctr(self):
        out = build_interaction_features(self._q(), self._p(), CtrTable(), _const_scorer(0.4))
        assert out.tolist() == [0.0, 1.0, 0.4]

    def test_overlap_ratio(self):
        assert title_overlap("red shoes", "red running shoes") == 1.0
        assert title_overlap("red canvas shoes", "blue shoes") == pytest.approx(1 / 3)
        assert title_overlap("", "anything") == 0.0

    def test_ctr_and_leave_one_out(self):
        imps = [ImpressionRecord("q1", "p1", "u", 1, c, 0, 0) for c in (1, 0, 1, 1)]
        table = CtrTable.from_impressions(imps)
        assert table.ctr("q1", "p1") == 0.75
        assert table.ctr("q1", "p1", exclude=imps[0]) == pytest.approx(2 / 3)
        assert table.ctr("q1", "p1", exclude=imps[1]) == 1.0
        assert CtrTable.from_dict(table.to_dict()) == table

    def test_masked_semantic_slot(self):
        schema = FeatureSchema([], [], masked=["semantic_score"])
        out = build_interaction_features(self._q(), self._p(), CtrTable(), _const_scorer(0.9), schema)
        assert out[2] == 0.0 and schema.masked == ["semantic_score"]


class TestEncoding:
    def _setup(self):
        log = tiny_log([("q1", "p1", "u1", 1, 1, 1, 0), ("q1", "p2", "u2", 2, 0, 0, 0),
                        ("q2", "p1", "u1", 1, 0, 0, 0)])
        schema = FeatureSchema.fit(log)
        enc = ExampleEncoder(schema, CtrTable.from_impressions(log.impressions),
                             lambda t: [len(w) for w in t.split()], _const_scorer(0.5))
        return log, schema, enc

    def test_shapes(self):
        log, schema, enc = self._setup()
        ex = enc.encode(log.impressions[0], log)
        assert ex.categorical.shape == (len(schema.categorical),)
        assert ex.continuous.shape == (len(schema.continuous),)
        assert ex.interaction.shape == (3,)
        assert all(0 <= i < f.vocab_size for i, f in zip(ex.categorical, schema.categorical))
        assert ex.labels == {"click": 1, "atc": 1, "trx": 0}

    def test_mean_value_standardizes_to_zero(self):
        log, schema, enc = self._setup()
        price = schema.continuous[0]
        assert price.name == "product.price"
        # every tiny_log product costs 10.0
        assert enc.encode(log.impressions[0], log).continuous[0] == 0.0

    def test_deterministic_and_pure(self):
        log, schema, enc = self._setup()
        before_schema, before_log = copy.deepcopy(schema), copy.deepcopy(log)
        a = enc.encode(log.impressions[1], log)
        b = encode_example(log.impressions[1], log, schema, enc.ctr_table, enc.tokenizer, enc.scorer)
        assert a == b
        assert schema == before_schema and log == before_log

    def test_unseen_categorical_is_unknown(self):
        log, schema, enc = self._setup()
        log.customers["u3"] = CustomerRecord("u3", {"segment": "never-seen"})
        ex = enc.encode(ImpressionRecord("q1", "p1", "u3", 1, 0, 0, 0), log)
        seg = [f.name for f in schema.categorical].index("customer.segment")
        assert ex.categorical[seg] == UNKNOWN

    def test_test_data_does_not_refit(self):
        log, schema, enc = self._setup()
        snapshot = copy.deepcopy(schema)
        other = tiny_log([("q9", "p9", "u9", 1, 0, 0, 0)])
        other.products["p9"] = ProductRecord("p9", "c0", "x", "acme", price=1000.0)
        enc.encode_all(other)
        assert schema == snapshot

    def test_dangling_reference(self):
        log, _, enc = self._setup()
        with pytest.raises(DataError, match="q404"):
            enc.encode(ImpressionRecord("q404", "p1", "u1", 1, 0, 0, 0), log)


class TestBatch:
    def test_empty(self):
        with pytest.raises(DimensionError):
            EncodedBatch.collate([])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.lists(st.integers(1, 9), min_size=0, max_size=5), min_size=1, max_size=6))
    def test_padding_mask(self, seqs):
        rng = np.random.default_rng(0)
        exs = [replace(random_example(rng), query_tokens=tuple(s)) for s in seqs]
        b = EncodedBatch.collate(exs)
        for i, s in enumerate(seqs):
            assert b.query_tokens[i, :len(s)].tolist() == s
            assert b.query_mask[i].sum() == max(1, len(s))
            assert not b.query_tokens[i, len(s):].any()
