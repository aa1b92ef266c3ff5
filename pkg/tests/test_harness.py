import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from builders import TINY_TOML, tiny_experiment
from mtlrank.datamodel import load_jsonl
from mtlrank.errors import ConfigError, DataError
from mtlrank.harness import cli
from mtlrank.harness import experiment as ex
from mtlrank.harness.synthetic import SyntheticWorldConfig, generate_synthetic_logs, position_bias
from mtlrank.networks import TrainingDiverged, load_checkpoint

SMALL_WORLD = SyntheticWorldConfig(queries=60, products=200, customers=40, categories=4, impressions=3000)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return ex.run_experiment(tiny_experiment(out), keep_model=True)


class TestSyntheticWorld:
    def test_hierarchy_by_construction(self):
        logs = generate_synthetic_logs(SMALL_WORLD).logs
        assert len(logs) == 3000
        assert all(imp.hierarchy_ok for imp in logs.impressions)

    @pytest.mark.parametrize("kw", [{"queries": 0}, {"click_rate": 1.0}, {"atc_rate": 0.5},
                                    {"trx_rate": 0.2, "atc_rate": 0.1}, {"categories": 99}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SyntheticWorldConfig(**kw)

    def test_too_many_requests(self):
        with pytest.raises(ConfigError):
            generate_synthetic_logs(SyntheticWorldConfig(queries=2, customers=2, impressions=1000))

    def test_same_seed_byte_identical(self, tmp_path):
        a = generate_synthetic_logs(SMALL_WORLD).save(tmp_path / "a")
        b = generate_synthetic_logs(SMALL_WORLD).save(tmp_path / "b")
        for x, y in zip(a, b):
            assert x.read_bytes() == y.read_bytes()
        c = generate_synthetic_logs(replace(SMALL_WORLD, seed=1)).save(tmp_path / "c")
        assert c[0].read_bytes() != a[0].read_bytes()

    def test_ground_truth_orders_by_affinity(self):
        world = generate_synthetic_logs(SMALL_WORLD)
        assert len(world.ground_truth) == 300
        for row in world.ground_truth[:50]:
            assert row["affinity"] == sorted(row["affinity"], reverse=True)

    def test_position_bias(self):
        np.testing.assert_allclose(position_bias([1, 2, 4], 1.0), [1.0, 0.5, 0.25])

    def test_click_rate_falls_with_position_at_fixed_affinity(self):
        world = generate_synthetic_logs(SyntheticWorldConfig(impressions=100_000))
        aff = {}
        for row in world.ground_truth:
            for pid, a in zip(row["ranking"], row["affinity"]):
                aff[(row["query_id"], row["customer_id"], pid)] = a
        a = np.array([aff[(i.query_id, i.customer_id, i.product_id)] for i in world.logs.impressions])
        pos = np.array([i.position for i in world.logs.impressions])
        click = np.array([i.y_click for i in world.logs.impressions])
        checked = 0
        for lo, hi in [(-1.0, 0.0), (0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]:
            band = (a >= lo) & (a < hi)
            rates = []
            for p_lo, p_hi in [(1, 2), (3, 5), (6, 10)]:
                sel = band & (pos >= p_lo) & (pos <= p_hi)
                if sel.sum() >= 300:
                    rates.append(click[sel].mean())
            if len(rates) >= 2:
                checked += 1
                assert all(x > y for x, y in zip(rates, rates[1:])), (lo, rates)
        assert checked >= 3


class TestConfig:
    def test_toml_round_trip(self, tmp_path):
        (tmp_path / "c.toml").write_text(TINY_TOML)
        cfg = ex.load_config(tmp_path / "c.toml")
        assert cfg.source_text == TINY_TOML
        assert cfg.world.impressions == 3000 and cfg.sampling.seed == 0
        assert cfg.model.mmoe.num_experts == ex.HARNESS_EXPERTS
        assert cfg.binary_weights == (0.4, 0.1, 0.5)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown config sections"):
            ex.config_from_dict({"optimizer": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"\[train\]"):
            ex.config_from_dict({"train": {"momentum": 0.9}})

    def test_data_xor_world(self):
        with pytest.raises(ConfigError):
            ex.config_from_dict({"data": {"path": "x.jsonl"}, "world": {}})

    def test_bad_bottom(self):
        with pytest.raises(ConfigError):
            ex.config_from_dict({"model": {"bottom": "resnet"}})

    def test_relative_data_path(self, tmp_path):
        (tmp_path / "c.toml").write_text('[data]\npath = "logs.jsonl"\n')
        assert ex.load_config(tmp_path / "c.toml").data_path == str(tmp_path / "logs.jsonl")

    def test_relevance_toggle_adds_task(self):
        cfg = ex.config_from_dict({"model": {"relevance_task": True, "relevance_weight": 0.3}})
        mm = cfg.resolved_model().mmoe
        assert mm.tasks[-1] == "relevance" and mm.weights["relevance"] == 0.3

    def test_relevance_needs_enough_experts(self):
        with pytest.raises(ConfigError):
            ex.config_from_dict({"model": {"relevance_task": True, "mmoe": {"num_experts": 4}}})

    def test_split_by_request(self):
        logs = generate_synthetic_logs(SMALL_WORLD).logs
        parts = ex.split_by_request(logs, ex.SplitConfig(), 0)
        keys = [{i.request_key() for i in p.impressions} for p in parts]
        assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
        assert sum(len(p) for p in parts) == len(logs)
        assert len(keys[2]) == 30


class TestRunExperiment:
    def test_artifacts(self, tiny_run):
        out = tiny_run.output_dir
        for name in ("metrics.json", "report.csv", "checkpoint.json", "config.toml", "run.log",
                     "resolved_config.json", "sampling_bins.csv", "test.jsonl"):
            assert (out / name).exists(), name
        assert (out / "config.toml").read_text() == TINY_TOML
        header = next(csv.reader(open(out / "report.csv")))
        assert tuple(header) == ex.REPORT_COLUMNS

    def test_metrics_json(self, tiny_run):
        blob = json.loads((tiny_run.output_dir / "metrics.json").read_text())
        kinds = {(m["metric"], m["task"], m.get("model", "")) for m in blob["metrics"]}
        for t in ("click", "atc", "trx"):
            assert ("auc", t, "") in kinds and ("mrr", t, "") in kinds
        assert ("pd", "click", "") in kinds and ("mrr", "click", "popularity") in kinds
        pd = next(m for m in blob["metrics"] if m["metric"] == "pd")
        assert pd["K"] == 3 and 0.0 <= pd["value"] <= 1.0 and "n_queries" in pd

    def test_run_log_records_seeds_and_digests(self, tiny_run):
        text = (tiny_run.output_dir / "run.log").read_text()
        for needle in ("seed 0", "digest", "stage train: start", "split seed", "sample seed"):
            assert needle in text

    def test_census_matches_independent_walk(self, tiny_run):
        model, _ = load_checkpoint(tiny_run.output_dir / "checkpoint.json")
        blob = json.loads((tiny_run.output_dir / "checkpoint.json").read_text())
        walked = sum(int(np.prod(t["shape"])) for t in blob["params"].values())
        assert tiny_run.report.total_params == walked == model.parameter_count()
        trainable = sum(p.size for p in tiny_run.model.parameters() if p.requires_grad)
        assert tiny_run.report.trainable_params == trainable

    def test_reconstructible_from_persisted_config(self, tiny_run, tmp_path):
        cfg = ex.load_config(tiny_run.output_dir / "config.toml")
        again = ex.run_experiment(replace(cfg, output_dir=str(tmp_path)))
        assert (tmp_path / "metrics.json").read_bytes() == (tiny_run.output_dir / "metrics.json").read_bytes()
        assert again.report.mrr == tiny_run.report.mrr

    def test_load_run_scores_like_the_trained_model(self, tiny_run):
        from mtlrank.networks import predict_scores
        model, encoder, extra = ex.load_run(tiny_run.output_dir / "checkpoint.json")
        logs = load_jsonl(tiny_run.output_dir / "test.jsonl")
        exs = encoder.encode_all(logs)
        a, b = predict_scores(model, exs), predict_scores(tiny_run.model, exs)
        np.testing.assert_array_equal(a["click"], b["click"])
        assert extra["binary_weights"] == [0.4, 0.1, 0.5]

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(ConfigError):
            ex.load_run(tmp_path / "nope.json")

    def test_stage_failure_moves_artifacts(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        cfg = replace(tiny_experiment(tmp_path / "out"), data_path=str(bad), world=None)
        with pytest.raises(ex.StageFailure) as info:
            ex.run_experiment(cfg)
        assert info.value.stage == "data" and isinstance(info.value.cause, DataError)
        failed = tmp_path / "out" / "failed"
        assert "stage: data" in (failed / "FAILED").read_text()
        assert (failed / "resolved_config.json").exists() and (failed / "run.log").exists()
        assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["failed"]

    def test_relevance_run(self, tmp_path):
        cfg = replace(tiny_experiment(tmp_path), relevance_task=True, train=replace(
            tiny_experiment(tmp_path).train, epochs=1))
        result = ex.run_experiment(cfg)
        assert result.report.task_weights["relevance"] == 0.2


class TestGridAndAblation:
    def test_grid_sizes(self):
        assert len(ex.weight_grid(0.5)) == 26
        assert len(ex.weight_grid(0.1)) == 11 ** 3 - 1
        assert (0.0, 0.0, 0.0) not in ex.weight_grid(0.5)

    @pytest.mark.parametrize("step", [0.3, 0.0, 1.5])
    def test_bad_step(self, step):
        with pytest.raises(ConfigError):
            ex.weight_grid(step)

    def test_grid_search(self, tmp_path):
        cfg = tiny_experiment(tmp_path)
        data = ex.prepare_data(cfg)
        a = ex.grid_search_weights(cfg, 1.0, epochs=1, data=data)
        assert len(a.table) == 7
        assert a.best_score == max(r["valid_combined_mrr"] for r in a.table)
        b = ex.grid_search_weights(replace(cfg, output_dir=str(tmp_path / "again")), 1.0, epochs=1, data=data)
        assert a.best_weights == b.best_weights and a.table == b.table
        assert json.loads((tmp_path / "grid.json").read_text())["best"]["weights"] == list(a.best_weights)

    def test_format_delta(self):
        assert ex.format_delta(0.3157, 0.322) == "0.316 (-1.96%)"
        assert ex.format_delta(0.5, 0.4) == "0.500 (+25.00%)"
        assert ex.format_delta(0.5, 0.0) == "0.500 (n/a)"

    def test_ablation_names(self):
        assert ex.ablation_name(*ex.ABLATION_BASE) == "sem-on_cross_rel-off"

    def test_delta_table(self):
        def row(name, mrr):
            return ex.ReportRow(name, {t: 0.5 for t in ("click", "atc", "trx")},
                                {t: mrr for t in ("click", "atc", "trx")}, 1, {}, 0.9, 5, 10, 10, 0.0)
        rows = {ex.ABLATION_BASE: row("base", 0.4), (False, "cross", False): row("nosem", 0.3)}
        table = ex.delta_table(rows)
        assert table[1]["mrr_click"] == "0.300 (-25.00%)" and table[1]["vs"] == "base"
        assert table[0]["auc_click"] == "0.500 (+0.00%)"


class TestCli:
    def _toml(self, tmp_path):
        path = tmp_path / "tiny.toml"
        path.write_text(TINY_TOML)
        return path

    def test_full_flow(self, tmp_path, capsys):
        assert cli.main(["gen", "--out", str(tmp_path / "w"), "--queries", "60", "--products", "200",
                         "--customers", "40", "--categories", "4", "--impressions", "2000"]) == 0
        logs = tmp_path / "w" / "impressions.jsonl"
        assert len(load_jsonl(logs)) == 2000
        assert cli.main(["sample", "--input", str(logs), "--out", str(tmp_path / "s.jsonl"),
                         "--report", str(tmp_path / "bins.csv")]) == 0
        assert cli.main(["label", "--input", str(logs), "--out", str(tmp_path / "labels.jsonl"),
                         "--labeled-out", str(tmp_path / "labeled.jsonl")]) == 0
        assert all(i.relevance_class is not None for i in load_jsonl(tmp_path / "labeled.jsonl").impressions)
        capsys.readouterr()
        assert cli.main(["train", "--config", str(self._toml(tmp_path)), "--output-dir", str(tmp_path / "r")]) == 0
        assert json.loads(capsys.readouterr().out)["report"]["model"] == "tiny"
        ck, test = str(tmp_path / "r" / "checkpoint.json"), str(tmp_path / "r" / "test.jsonl")
        assert cli.main(["eval", "--checkpoint", ck, "--data", test]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert {(r["metric"], r["task"]) for r in rows} >= {("auc", "click"), ("mrr", "trx")}
        assert cli.main(["pd", "--checkpoint", ck, "--data", test, "--k", "3"]) == 0
        pd = json.loads(capsys.readouterr().out)
        assert pd["metric"] == "pd" and pd["K"] == 3

    def test_usage_error(self, capsys):
        assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG
        assert cli.main([]) == cli.EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert cli.main(["train", "--config", str(tmp_path / "none.toml")]) == cli.EXIT_CONFIG

    def test_bad_toml(self, tmp_path):
        (tmp_path / "x.toml").write_text("[train\n")
        assert cli.main(["train", "--config", str(tmp_path / "x.toml")]) == cli.EXIT_CONFIG

    def test_data_error(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text('{"query": {"id": "q"}}\n')
        code = cli.main(["sample", "--input", str(tmp_path / "bad.jsonl"), "--out", str(tmp_path / "o.jsonl")])
        assert code == cli.EXIT_DATA

    def test_numerical_error(self, tmp_path, monkeypatch):
        def diverge(cfg):
            raise ex.StageFailure("train", TrainingDiverged("loss is nan", {}))
        monkeypatch.setattr(ex, "run_experiment", diverge)
        assert cli.main(["train", "--config", str(self._toml(tmp_path))]) == cli.EXIT_NUMERIC

    def test_exit_code_mapping(self):
        assert cli.exit_code(ex.StageFailure("data", DataError("x"))) == cli.EXIT_DATA
        assert cli.exit_code(ConfigError("x")) == cli.EXIT_CONFIG

    def test_module_entry_point(self, tmp_path):
        import subprocess
        import sys
        proc = subprocess.run([sys.executable, "-m", "mtlrank", "gen", "--out", str(tmp_path), "--queries", "5",
                               "--customers", "5", "--products", "20", "--categories", "2",
                               "--impressions", "50"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert Path(json.loads(proc.stdout)["impressions"]).exists()
