"""Train one multi-task ranker on a synthetic marketplace and compare it with the baselines.

    python demos/quickstart.py [--config demos/configs/small.toml] [--out runs/quickstart]
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from mtlrank.harness.experiment import load_config, run_experiment

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=HERE / "configs" / "small.toml")
    ap.add_argument("--out", default="runs/quickstart")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    config = replace(load_config(args.config), output_dir=args.out)
    result = run_experiment(config)
    report = result.report

    print(f"\n{report.model}: {report.trainable_params} trainable parameters, {report.seconds:.1f}s")
    print(f"{'task':<6}{'AUC':>8}{'MRR@' + str(report.k):>8}")
    for task in ("click", "atc", "trx"):
        auc = report.auc.get(task)
        print(f"{task:<6}{'n/a' if auc is None else f'{auc:.3f}':>8}{report.mrr[task]:>8.3f}")
    print(f"PD@{report.pd_k} = {report.pd:.3f} (1.0 means user features never change the top of the list)")
    print("click MRR baselines: " + ", ".join(f"{k} {v:.3f}" for k, v in result.baselines.items()))
    print(f"artifacts in {result.output_dir}")


if __name__ == "__main__":
    main()
