"""Run the eight-way ablation (semantic feature, matching mode, relevance task) and print the deltas.

    python demos/ablation.py [--config demos/configs/small.toml] [--out runs/ablation]
"""

import argparse
from dataclasses import replace
from pathlib import Path

from mtlrank.harness.experiment import ablate, load_config

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=HERE / "configs" / "small.toml")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    result = ablate(replace(load_config(args.config), output_dir=args.out))
    print(f"{'variant':<28}{'params':>8}{'MRR click':>11}{'MRR trx':>9}{'PD':>7}")
    for row in result.rows.values():
        print(f"{row.model:<28}{row.trainable_params:>8}{row.mrr['click']:>11.3f}{row.mrr['trx']:>9.3f}{row.pd:>7.3f}")
    print(f"\nchanges against {result.delta_table[0]['vs']}:")
    for line in result.delta_table[1:]:
        print(f"  {line['model']:<28} click MRR {line['mrr_click']}, PD {line['pd']}")
    print(f"\nfull tables: {args.out}/ablation_report.csv, {args.out}/ablation_deltas.csv")


if __name__ == "__main__":
    main()
