"""Experiment orchestration: sample, label, encode, train, evaluate and persist.

A run is described by an :class:`ExperimentConfig`, usually parsed from a TOML
file that is copied verbatim into the output directory next to the metrics
JSON, the report CSV, the checkpoint and the run log.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli

from .. import evalmetrics as em
from ..datamodel import (BINARY_TASKS, ClickLog, CtrTable, EncodedExample, ExampleEncoder, FeatureSchema,
                         load_jsonl, save_jsonl)
from ..errors import ConfigError, MtlRankError
from ..networks import (DcnConfig, FttConfig, MmoeConfig, ModelConfig, RankingModel, TrainConfig,
                        predict_scores, save_checkpoint, train)
from ..pipeline import RelevanceConfig, SamplingConfig, apply_labels, generate_labels, stratified_sample
from ..textmatch import SemanticScorer, SemanticScorerConfig, TextEncoderConfig, Vocabulary, tokenize
from .synthetic import SyntheticWorldConfig, generate_synthetic_logs

log = logging.getLogger("mtlrank.harness")

REPORT_COLUMNS = ("model", "auc_click", "auc_atc", "auc_trx", "mrr_click", "mrr_atc", "mrr_trx", "k",
                  "task_weights", "pd", "pd_k", "trainable_params", "total_params", "seconds")


# one more expert than the four tasks of the relevance-on configuration, so
# relevance on/off runs share an identical expert set
HARNESS_EXPERTS = 5


class StageFailure(MtlRankError):
    """A pipeline stage raised; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class SplitConfig:
    valid: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        if self.valid <= 0 or self.test <= 0 or self.valid + self.test >= 1:
            raise ConfigError(f"split fractions must be positive and sum below 1, got {self}")


@dataclass(frozen=True)
class MetricsConfig:
    k: int = 1
    pd_k: int = 5
    pd_sample: int = 200
    ranking: str = "own"

    def params(self, task: str, seed: int, weights: Sequence[float]) -> em.MetricParams:
        return em.MetricParams(self.k, task, self.pd_sample, seed, self.ranking, tuple(weights))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "mmoe_dcn_cross"
    output_dir: str = "runs/default"
    seed: int = 0
    data_path: str | None = None
    world: SyntheticWorldConfig | None = field(default_factory=SyntheticWorldConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(mmoe=MmoeConfig(num_experts=HARNESS_EXPERTS)))
    semantic_feature: bool = True
    relevance_task: bool = False
    relevance_weight: float = 0.2
    sampling_enabled: bool = True
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    relevance: RelevanceConfig = field(default_factory=RelevanceConfig)
    scorer: SemanticScorerConfig = field(default_factory=SemanticScorerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    source_text: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if (self.data_path is None) == (self.world is None):
            raise ConfigError("give exactly one of data.path or a [world] section")
        if self.relevance_weight < 0:
            raise ConfigError("relevance_weight must be >= 0")
        self.resolved_model()

    @property
    def binary_weights(self) -> tuple[float, ...]:
        return tuple(self.model.mmoe.task_weights[self.model.mmoe.tasks.index(t)] for t in BINARY_TASKS)

    def resolved_model(self) -> ModelConfig:
        """Model config with the task list implied by the relevance toggle."""
        weights = self.binary_weights
        tasks, w = BINARY_TASKS, weights
        if self.relevance_task:
            tasks, w = (*BINARY_TASKS, "relevance"), (*weights, self.relevance_weight)
        return replace(self.model, seed=self.seed, mmoe=replace(self.model.mmoe, tasks=tasks, task_weights=w))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source_text")
        return d

    def digest(self) -> str:
        """Hash of everything that affects results; the output location does not."""
        d = self.to_dict()
        d.pop("output_dir")
        return _digest(d)


_SECTIONS = {"world", "split", "model", "sampling", "relevance", "scorer", "train", "metrics", "data", "experiment"}


def _build(cls, section: dict | None, where: str):
    section = dict(section or {})
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(d: dict, source_text: str | None = None) -> ExperimentConfig:
    unknown = set(d) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    exp = dict(d.get("experiment", {}))
    data = dict(d.get("data", {}))
    m = dict(d.get("model", {}))
    text = _build(TextEncoderConfig, m.pop("text", None), "model.text")
    dcn = _build(DcnConfig, m.pop("dcn", None), "model.dcn")
    ftt = _build(FttConfig, m.pop("ftt", None), "model.ftt")
    mm = dict(m.pop("mmoe", {}) or {})
    mm.setdefault("tasks", BINARY_TASKS)
    mm.setdefault("num_experts", HARNESS_EXPERTS)
    mmoe = _build(MmoeConfig, mm, "model.mmoe")
    toggles = {k: m.pop(k) for k in ("semantic_feature", "relevance_task", "relevance_weight") if k in m}
    model = _build(ModelConfig, {**m, "text": text, "dcn": dcn, "ftt": ftt, "mmoe": mmoe}, "model")
    if set(mmoe.tasks) != set(BINARY_TASKS):
        raise ConfigError("model.mmoe.tasks lists the binary tasks; toggle relevance with model.relevance_task")
    sampling = dict(d.get("sampling", {}))
    enabled = sampling.pop("enabled", True)
    seed = exp.pop("seed", 0)
    sampling.setdefault("seed", seed)
    tr = dict(d.get("train", {}))
    tr.setdefault("seed", seed)
    world = None
    if "world" in d:
        w = dict(d["world"])
        w.setdefault("seed", seed)
        world = _build(SyntheticWorldConfig, w, "world")
    path = data.pop("path", None)
    if data:
        raise ConfigError(f"[data]: unknown keys {sorted(data)}")
    if path is None and world is None:
        world = SyntheticWorldConfig(seed=seed)
    try:
        return ExperimentConfig(
            seed=seed, data_path=path, world=world, split=_build(SplitConfig, d.get("split"), "split"),
            model=model, sampling_enabled=enabled, sampling=_build(SamplingConfig, sampling, "sampling"),
            relevance=_build(RelevanceConfig, d.get("relevance"), "relevance"),
            scorer=_build(SemanticScorerConfig, d.get("scorer"), "scorer"),
            train=_build(TrainConfig, tr, "train"), metrics=_build(MetricsConfig, d.get("metrics"), "metrics"),
            source_text=source_text, **exp, **toggles)
    except TypeError as exc:
        raise ConfigError(f"[experiment]: {exc}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = config_from_dict(raw, text)
    if cfg.data_path is not None and not Path(cfg.data_path).is_absolute():
        cfg = replace(cfg, data_path=str((path.parent / cfg.data_path).resolve()))
    return cfg


# -- data preparation -------------------------------------------------------

def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def logs_digest(logs: ClickLog) -> str:
    h = hashlib.sha256()
    for imp in logs.impressions:
        h.update(repr(imp).encode())
    return h.hexdigest()[:16]


@dataclass
class PreparedData:
    """Splits before any per-run processing; shared by ablation and grid runs."""

    train: ClickLog
    valid: ClickLog
    test: ClickLog
    source_digest: str


def split_by_request(logs: ClickLog, config: SplitConfig, seed: int) -> tuple[ClickLog, ClickLog, ClickLog]:
    """Random split by (query, customer) request so no ranking group straddles two splits."""
    keys = sorted({imp.request_key() for imp in logs.impressions})
    rng = np.random.default_rng([seed, 7])
    order = rng.permutation(len(keys))
    n_test = max(1, int(round(config.test * len(keys))))
    n_valid = max(1, int(round(config.valid * len(keys))))
    if n_test + n_valid >= len(keys):
        raise ConfigError(f"only {len(keys)} requests; cannot carve validation and test splits")
    which = {}
    for rank, j in enumerate(order):
        which[keys[j]] = 2 if rank < n_test else 1 if rank < n_test + n_valid else 0
    parts: list[list] = [[], [], []]
    for imp in logs.impressions:
        parts[which[imp.request_key()]].append(imp)
    return tuple(logs.subset(p) for p in parts)


def prepare_data(config: ExperimentConfig) -> PreparedData:
    if config.data_path is not None:
        path = Path(config.data_path)
        if not path.exists():
            raise ConfigError(f"data file {path} does not exist")
        logs = load_jsonl(path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    else:
        logs = generate_synthetic_logs(config.world).logs
        digest = logs_digest(logs)
    log.info("data: %d impressions, digest %s", len(logs), digest)
    train_l, valid_l, test_l = split_by_request(logs, config.split, config.seed)
    log.info("split seed %d: train %d, valid %d, test %d impressions", config.seed,
             len(train_l), len(valid_l), len(test_l))
    return PreparedData(train_l, valid_l, test_l, digest)


# -- reporting --------------------------------------------------------------

@dataclass
class ReportRow:
    model: str
    auc: dict[str, float | None]
    mrr: dict[str, float]
    k: int
    task_weights: dict[str, float]
    pd: float
    pd_k: int
    trainable_params: int
    total_params: int
    seconds: float

    def csv_row(self) -> list:
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        weights = ";".join(f"{t}={w:g}" for t, w in self.task_weights.items())
        return [self.model, *(fmt(self.auc.get(t)) for t in BINARY_TASKS),
                *(fmt(self.mrr.get(t)) for t in BINARY_TASKS), self.k, weights, fmt(self.pd), self.pd_k,
                self.trainable_params, self.total_params, f"{self.seconds:.2f}"]


def write_report(rows: Sequence[ReportRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())


@dataclass
class RunResult:
    report: ReportRow
    metrics: list[dict]
    output_dir: Path
    model: RankingModel | None = None
    baselines: dict[str, float] = field(default_factory=dict)


# -- the run ----------------------------------------------------------------

class _Stages:
    """Runs named stages; on failure moves partial artifacts under ``failed/``."""

    def __init__(self, out: Path):
        self.out = out

    def __call__(self, name: str, fn, *args, **kwargs):
        log.info("stage %s: start", name)
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            self.fail(name, exc)
            raise StageFailure(name, exc) from exc

    def fail(self, name: str, exc: BaseException) -> None:
        failed = self.out / "failed"
        failed.mkdir(parents=True, exist_ok=True)
        for item in sorted(self.out.iterdir()):
            if item.name != "failed":
                shutil.move(str(item), str(failed / item.name))
        (failed / "FAILED").write_text(f"stage: {name}\nerror: {type(exc).__name__}: {exc}\n")
        log.error("stage %s failed: %s", name, exc)


def _build_encoder(config: ExperimentConfig, train_logs: ClickLog, ctr_logs: ClickLog):
    masked = [] if config.semantic_feature else ["semantic_score"]
    schema = FeatureSchema.fit(train_logs, masked=masked, text_dim=config.model.text.dim)
    texts = [q.text for q in train_logs.queries.values()] + [p.document for p in train_logs.products.values()]
    vocab = Vocabulary.build(texts)
    ctr = CtrTable.from_impressions(ctr_logs.impressions)
    scorer = SemanticScorer(config.scorer)
    max_len = config.model.text.max_len
    encoder = ExampleEncoder(schema, ctr, lambda t: tokenize(t, vocab, max_len), scorer)
    return encoder, vocab


def _label(config: ExperimentConfig, logs: ClickLog) -> ClickLog:
    labels = generate_labels(logs, SemanticScorer(config.scorer), config.relevance)
    return apply_labels(logs, labels)


def evaluate(model, examples: Sequence[EncodedExample], config: ExperimentConfig,
             train_clicks: dict[str, int]) -> tuple[dict, dict, float, list[dict], dict[str, float]]:
    """AUC and MRR@K per task, PD@K, and the baseline MRRs on ``examples``."""
    outputs = predict_scores(model, examples)
    mc, seed = config.metrics, config.seed
    weights = config.binary_weights
    auc, mrr, records = {}, {}, []
    n_groups = len(em.group_requests(examples))
    for task in BINARY_TASKS:
        labels = [ex.labels[task] for ex in examples]
        auc[task] = em.auc_roc(outputs[task], labels)
        params = mc.params(task, seed, weights)
        ranks = em.rank_groups(examples, em.ranking_key(outputs, params))
        mrr[task] = em.mrr_at_k(ranks, em.relevant_sets(examples, task), mc.k)
        records.append(em.MetricRecord("auc", task, None, auc[task], len(examples), "n_points", seed).to_json())
        records.append(em.MetricRecord("mrr", task, mc.k, mrr[task], n_groups, "n_queries", seed).to_json())
    pd_params = replace(mc.params("click", seed, weights), k=mc.pd_k)
    pd = em.pd_at_k(model, examples, pd_params, model.schema)
    records.append(em.MetricRecord("pd", "click", mc.pd_k, pd, min(mc.pd_sample, n_groups), "n_queries",
                                   seed).to_json())
    relevant = em.relevant_sets(examples, "click")
    baselines = {
        "popularity": em.mrr_at_k(em.rank_groups(examples, em.popularity_scores(examples, train_clicks)),
                                  relevant, mc.k),
        "random": em.mrr_at_k(em.rank_groups(examples, em.random_scores(examples, seed)), relevant, mc.k),
    }
    for name, value in baselines.items():
        rec = em.MetricRecord("mrr", "click", mc.k, value, n_groups, "n_queries", seed, model=name)
        records.append(rec.to_json())
    return auc, mrr, pd, records, baselines


def run_experiment(config: ExperimentConfig, data: PreparedData | None = None,
                   keep_model: bool = False) -> RunResult:
    """Full pipeline for one configuration; artifacts land in ``config.output_dir``."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("mtlrank")
    root.addHandler(handler)
    previous_level = root.level
    if root.getEffectiveLevel() > logging.INFO:
        root.setLevel(logging.INFO)
    try:
        return _run(config, data, keep_model, out, _Stages(out))
    finally:
        root.removeHandler(handler)
        root.setLevel(previous_level)
        handler.close()


def _run(config: ExperimentConfig, data: PreparedData | None, keep_model: bool, out: Path,
         stage: _Stages) -> RunResult:
    t0 = time.perf_counter()
    if config.source_text is not None:
        (out / "config.toml").write_text(config.source_text, encoding="utf-8")
    (out / "resolved_config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n")
    log.info("experiment %s seed %d config digest %s", config.name, config.seed, config.digest())

    data = data or stage("data", prepare_data, config)
    train_l = data.train
    if config.sampling_enabled:
        sampled = stage("sample", stratified_sample, train_l, config.sampling)
        log.info("sample seed %d: %d -> %d impressions, shortfall %d", config.sampling.seed, len(train_l),
                 len(sampled.impressions), sampled.shortfall)
        sampled.write_report(out / "sampling_bins.csv")
        train_s = train_l.subset(sampled.impressions)
    else:
        train_s = train_l
    valid_l, test_l = data.valid, data.test
    if config.relevance_task:
        train_s, valid_l = stage("label", lambda: (_label(config, train_s), _label(config, valid_l)))
        log.info("label: alpha_rel %.3f, %d classes, weighting %s", config.relevance.alpha_rel,
                 config.relevance.classes, config.relevance.weighting)

    def encode():
        encoder, vocab = _build_encoder(config, train_s, train_l)
        return (encoder, vocab, encoder.encode_all(train_s, leave_one_out=True),
                encoder.encode_all(valid_l), encoder.encode_all(test_l))

    encoder, vocab, train_x, valid_x, test_x = stage("encode", encode)
    log.info("encode: schema %s, vocab %d, train digest %s", encoder.schema.hash(), len(vocab),
             logs_digest(train_s))

    model_cfg = config.resolved_model()
    model = stage("build", RankingModel, encoder.schema, model_cfg, len(vocab))
    logbook = stage("train", train, model, train_x, valid_x, config.train)
    log.info("train seed %d: %d epochs, best %d (valid loss %.5f)", config.train.seed, len(logbook.epochs),
             logbook.best_epoch, logbook.best_valid_loss)

    train_clicks: dict[str, int] = {}
    for imp in train_l.impressions:
        train_clicks[imp.product_id] = train_clicks.get(imp.product_id, 0) + imp.y_click
    auc, mrr, pd, records, baselines = stage("evaluate", evaluate, model, test_x, config, train_clicks)

    seconds = time.perf_counter() - t0
    report = ReportRow(config.name, auc, mrr, config.metrics.k, model_cfg.mmoe.weights, pd, config.metrics.pd_k,
                       model.parameter_count(trainable_only=True), model.parameter_count(), seconds)

    def persist():
        metrics = {"experiment": config.name, "seed": config.seed, "data_digest": data.source_digest,
                   "schema_hash": encoder.schema.hash(), "config_digest": config.digest(),
                   "trainable_params": report.trainable_params, "total_params": report.total_params,
                   "metrics": records}
        (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n")
        write_report([report], out / "report.csv")
        save_checkpoint(out / "checkpoint.json", model, config.seed, extra={
            "vocab": vocab.token_to_id, "ctr": encoder.ctr_table.to_dict(), "scorer": asdict(config.scorer),
            "metrics": asdict(config.metrics), "binary_weights": list(config.binary_weights)})
        save_jsonl(test_l, out / "test.jsonl")

    stage("persist", persist)
    log.info("done in %.1fs: mrr@%d click %.4f (popularity %.4f, random %.4f)", seconds, config.metrics.k,
             mrr["click"], baselines["popularity"], baselines["random"])
    return RunResult(report, records, out, model if keep_model else None, baselines)


# -- grid search over task weights ------------------------------------------

def weight_grid(step: float, tasks: int = 3) -> list[tuple[float, ...]]:
    """Every weight vector on {0, step, ..., 1}^tasks except all zeros."""
    if not 0 < step <= 1:
        raise ConfigError(f"grid step must be in (0, 1], got {step}")
    n = round(1 / step)
    if abs(n * step - 1) > 1e-9:
        raise ConfigError(f"grid step {step} does not divide 1 evenly")
    levels = [round(i / n, 10) for i in range(n + 1)]
    grid = [w for w in itertools.product(levels, repeat=tasks) if any(w)]
    if not grid:
        raise ConfigError("empty weight grid")
    return grid


@dataclass
class GridResult:
    table: list[dict]
    best_weights: tuple[float, ...]
    best_score: float


def grid_search_weights(config: ExperimentConfig, step: float, epochs: int = 2,
                        data: PreparedData | None = None) -> GridResult:
    """Train per grid point (reduced epochs) and pick the weights with the best validation combined MRR.

    Combined MRR is the mean of the per-task MRR@K on the validation split; ties
    go to the earliest grid point.
    """
    grid = weight_grid(step)
    data = data or prepare_data(config)
    base_out = Path(config.output_dir)
    table = []
    for i, weights in enumerate(grid):
        point = replace(config, name=f"{config.name}_grid{i:04d}", output_dir=str(base_out / f"grid{i:04d}"),
                        relevance_task=False, train=replace(config.train, epochs=epochs),
                        model=replace(config.model, mmoe=replace(config.model.mmoe, tasks=BINARY_TASKS,
                                                                 task_weights=weights)))
        # selection uses the validation split, never test
        result = run_experiment(replace(point, source_text=None), PreparedData(
            data.train, data.valid, data.valid, data.source_digest))
        combined = float(np.mean([result.report.mrr[t] for t in BINARY_TASKS]))
        table.append({"weights": list(weights), "valid_combined_mrr": combined,
                      **{f"valid_mrr_{t}": result.report.mrr[t] for t in BINARY_TASKS}})
    best = max(range(len(table)), key=lambda j: (table[j]["valid_combined_mrr"], -j))
    base_out.mkdir(parents=True, exist_ok=True)
    (base_out / "grid.json").write_text(json.dumps({"step": step, "epochs": epochs, "table": table,
                                                    "best": table[best]}, sort_keys=True, indent=1) + "\n")
    return GridResult(table, tuple(table[best]["weights"]), table[best]["valid_combined_mrr"])


# -- ablation ---------------------------------------------------------------

ABLATION_BASE = (True, "cross", False)


def ablation_name(semantic: bool, matching: str, relevance: bool) -> str:
    return f"sem-{'on' if semantic else 'off'}_{matching}_rel-{'on' if relevance else 'off'}"


def format_delta(new: float, old: float) -> str:
    """``0.322 (-2.12%)``: value with the relative change (new - old) / old."""
    if old == 0:
        return f"{new:.3f} (n/a)"
    return f"{new:.3f} ({(new - old) / old * 100:+.2f}%)"


@dataclass
class AblationResult:
    rows: dict[tuple[bool, str, bool], ReportRow]
    delta_table: list[dict]


def ablate(config: ExperimentConfig, data: PreparedData | None = None) -> AblationResult:
    """{semantic on/off} x {cross/dot} x {relevance on/off}, sharing data and seeds."""
    replace(config, relevance_task=True)  # validates the expert count before any training
    data = data or prepare_data(config)
    base_out = Path(config.output_dir)
    rows: dict[tuple[bool, str, bool], ReportRow] = {}
    for semantic, matching, relevance in itertools.product((True, False), ("cross", "dot"), (False, True)):
        name = ablation_name(semantic, matching, relevance)
        variant = replace(config, name=name, output_dir=str(base_out / name), semantic_feature=semantic,
                          relevance_task=relevance, model=replace(config.model, matching=matching),
                          source_text=None)
        rows[(semantic, matching, relevance)] = run_experiment(variant, data).report
    delta = delta_table(rows)
    base_out.mkdir(parents=True, exist_ok=True)
    write_report(list(rows.values()), base_out / "ablation_report.csv")
    with open(base_out / "ablation_deltas.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(delta[0]))
        writer.writeheader()
        writer.writerows(delta)
    return AblationResult(rows, delta)


def delta_table(rows: dict[tuple[bool, str, bool], ReportRow]) -> list[dict]:
    """One line per non-base variant with every metric shown against the base configuration."""
    base = rows[ABLATION_BASE]
    out = []
    for key, row in rows.items():
        line = {"model": row.model, "vs": base.model}
        for t in BINARY_TASKS:
            a, b = row.auc.get(t), base.auc.get(t)
            line[f"auc_{t}"] = "" if a is None or b is None else format_delta(a, b)
            line[f"mrr_{t}"] = format_delta(row.mrr[t], base.mrr[t])
        line["pd"] = format_delta(row.pd, base.pd)
        line["trainable_params"] = row.trainable_params
        out.append(line)
    return out


# -- reloading a finished run -----------------------------------------------

def load_run(checkpoint_path: str | Path) -> tuple[RankingModel, ExampleEncoder, dict]:
    """Model plus an encoder rebuilt from the state saved alongside it."""
    from ..networks import load_checkpoint

    if not Path(checkpoint_path).exists():
        raise ConfigError(f"checkpoint {checkpoint_path} does not exist")
    model, blob = load_checkpoint(checkpoint_path)
    extra = blob["extra"]
    try:
        vocab = Vocabulary(extra["vocab"])
        ctr = CtrTable.from_dict(extra["ctr"])
        scorer = SemanticScorer(SemanticScorerConfig(**extra["scorer"]))
    except KeyError as exc:
        raise ConfigError(f"checkpoint lacks encoder state {exc}") from None
    max_len = model.config.text.max_len
    encoder = ExampleEncoder(model.schema, ctr, lambda t: tokenize(t, vocab, max_len), scorer)
    return model, encoder, extra
