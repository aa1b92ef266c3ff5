"""Command line: ``python -m mtlrank <subcommand>``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import tomli

from .. import evalmetrics as em
from ..datamodel import BINARY_TASKS, load_jsonl, save_jsonl
from ..errors import ConfigError, DataError, NumericalError
from ..networks import predict_scores
from ..pipeline import RelevanceConfig, SamplingConfig, apply_labels, generate_labels, save_labels, stratified_sample
from ..textmatch import SemanticScorer
from . import experiment as ex
from .synthetic import SyntheticWorldConfig, generate_synthetic_logs

log = logging.getLogger("mtlrank.cli")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


def _load_or_fail(path: str):
    if not Path(path).exists():
        raise ConfigError(f"input file {path} does not exist")
    return load_jsonl(path)


def cmd_gen(args) -> None:
    fields = {}
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config file {args.config} does not exist")
        fields.update(tomli.loads(Path(args.config).read_text()).get("world", {}))
    for name in ("queries", "products", "customers", "categories", "impressions", "seed"):
        if getattr(args, name) is not None:
            fields[name] = getattr(args, name)
    try:
        world = SyntheticWorldConfig(**fields)
    except TypeError as exc:
        raise ConfigError(f"[world]: {exc}") from None
    logs_path, truth_path = generate_synthetic_logs(world).save(args.out)
    _emit({"impressions": str(logs_path), "ground_truth": str(truth_path)})


def cmd_sample(args) -> None:
    logs = _load_or_fail(args.input)
    result = stratified_sample(logs, SamplingConfig(args.bins, args.beta, args.alpha_pos, args.seed))
    save_jsonl(logs.subset(result.impressions), args.out)
    if args.report:
        result.write_report(args.report)
    _emit({"input": len(logs), "sampled": len(result.impressions), "shortfall": result.shortfall})


def cmd_label(args) -> None:
    logs = _load_or_fail(args.input)
    labels = generate_labels(logs, SemanticScorer(), RelevanceConfig(args.alpha_rel, args.classes, args.weighting))
    save_labels(labels, args.out)
    if args.labeled_out:
        save_jsonl(apply_labels(logs, labels), args.labeled_out)
    counts = [0] * args.classes
    for row in labels:
        counts[row.relevance_class] += 1
    _emit({"pairs": len(labels), "class_counts": counts})


def _config(args):
    cfg = ex.load_config(args.config)
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)
    return cfg


def cmd_train(args) -> None:
    result = ex.run_experiment(_config(args))
    _emit({"output_dir": str(result.output_dir), "report": asdict(result.report), "baselines": result.baselines})


def _encoded(args):
    model, encoder, extra = ex.load_run(args.checkpoint)
    examples = encoder.encode_all(_load_or_fail(args.data))
    if not examples:
        raise DataError(f"{args.data} has no impressions")
    return model, examples, extra


def cmd_eval(args) -> None:
    model, examples, extra = _encoded(args)
    outputs = predict_scores(model, examples)
    weights = extra.get("binary_weights", [1.0, 1.0, 1.0])
    rows = []
    n_groups = len(em.group_requests(examples))
    for task in BINARY_TASKS:
        params = em.MetricParams(args.k, task, 1, args.seed, args.ranking, tuple(weights))
        auc = em.auc_roc(outputs[task], [e.labels[task] for e in examples])
        ranks = em.rank_groups(examples, em.ranking_key(outputs, params))
        mrr = em.mrr_at_k(ranks, em.relevant_sets(examples, task), args.k)
        rows.append(em.MetricRecord("auc", task, None, auc, len(examples), "n_points", args.seed).to_json())
        rows.append(em.MetricRecord("mrr", task, args.k, mrr, n_groups, "n_queries", args.seed).to_json())
    _emit(rows)


def cmd_pd(args) -> None:
    model, examples, _ = _encoded(args)
    params = em.MetricParams(args.k, args.task, args.sample, args.seed)
    value = em.pd_at_k(model, examples, params, model.schema)
    n = min(args.sample, len(em.group_requests(examples)))
    _emit(em.MetricRecord("pd", args.task, args.k, value, n, "n_queries", args.seed).to_json())


def cmd_ablate(args) -> None:
    result = ex.ablate(_config(args))
    _emit(result.delta_table)


def cmd_grid(args) -> None:
    result = ex.grid_search_weights(_config(args), args.step, epochs=args.epochs)
    _emit({"points": len(result.table), "best_weights": list(result.best_weights),
           "best_valid_combined_mrr": result.best_score})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtlrank", description="Multi-task product ranking experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic click log")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="TOML file with a [world] section")
    for name in ("queries", "products", "customers", "categories", "impressions", "seed"):
        g.add_argument(f"--{name}", type=int)
    g.set_defaults(fn=cmd_gen)

    s = sub.add_parser("sample", help="category/popularity-stratified sampling")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report", help="per-bin CSV report")
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--alpha-pos", type=float, default=0.3)
    s.add_argument("--bins", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sample)

    lab = sub.add_parser("label", help="derive relevance labels from clicks and semantic scores")
    lab.add_argument("--input", required=True)
    lab.add_argument("--out", required=True, help="label rows (JSONL)")
    lab.add_argument("--labeled-out", help="copy of the log with relevance_class filled")
    lab.add_argument("--alpha-rel", type=float, default=0.5)
    lab.add_argument("--classes", type=int, default=5)
    lab.add_argument("--weighting", default="per_event")
    lab.set_defaults(fn=cmd_label)

    for name, fn, text in (("train", cmd_train, "run the full pipeline for one config"),
                           ("ablate", cmd_ablate, "semantic x matching x relevance ablation matrix")):
        t = sub.add_parser(name, help=text)
        t.add_argument("--config", required=True)
        t.add_argument("--output-dir")
        t.set_defaults(fn=fn)

    gr = sub.add_parser("grid", help="grid search over task loss weights")
    gr.add_argument("--config", required=True)
    gr.add_argument("--output-dir")
    gr.add_argument("--step", type=float, default=0.1)
    gr.add_argument("--epochs", type=int, default=2)
    gr.set_defaults(fn=cmd_grid)

    e = sub.add_parser("eval", help="AUC and MRR@K of a checkpoint on a log")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--ranking", choices=("own", "combined"), default="own")
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("pd", help="personalization degree PD@K of a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--k", type=int, default=10)
    d.add_argument("--sample", type=int, default=200)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--task", choices=BINARY_TASKS, default="click")
    d.set_defaults(fn=cmd_pd)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ex.StageFailure):
        exc = exc.cause
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, tomli.TOMLDecodeError)):
        return EXIT_CONFIG
    raise exc


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(console)
    logging.getLogger("mtlrank").setLevel(logging.INFO)
    try:
        args.fn(args)
    except (ex.StageFailure, ConfigError, DataError, NumericalError, tomli.TOMLDecodeError) as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    finally:
        logging.getLogger().removeHandler(console)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
