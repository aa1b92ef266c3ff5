"""Walk through the data side: stratified sampling, then relevance labels for one query.

    python demos/labeling.py
"""

from collections import Counter

from mtlrank.harness.synthetic import SyntheticWorldConfig, generate_synthetic_logs
from mtlrank.pipeline import RelevanceConfig, SamplingConfig, generate_labels, stratified_sample
from mtlrank.textmatch import SemanticScorer


def main():
    logs = generate_synthetic_logs(SyntheticWorldConfig(queries=200, products=800, customers=100,
                                                        categories=4, impressions=20_000)).logs
    print(f"{len(logs)} impressions, {sum(i.y_click for i in logs.impressions)} clicks")

    sample = stratified_sample(logs, SamplingConfig(bins_per_category=3, beta=0.2, alpha_pos=0.3))
    print(f"\nsampled {len(sample.impressions)} impressions from {len(sample.bins)} bins")
    print(f"{'category':<9}{'bin':>4}{'size':>7}{'taken':>7}{'pos %':>7}")
    for b in sample.bins[:6]:
        print(f"{b.category:<9}{b.bin:>4}{b.size:>7}{b.taken:>7}{100 * b.positives_taken / max(b.taken, 1):>7.1f}")

    rows = generate_labels(logs, SemanticScorer(), RelevanceConfig(alpha_rel=0.5, classes=5))
    print(f"\n{len(rows)} (query, product) labels; class histogram {sorted(Counter(r.relevance_class for r in rows).items())}")

    qid = Counter(r.query_id for r in rows).most_common(1)[0][0]
    print(f"\nquery {qid!r}: {logs.queries[qid].text!r}")
    print(f"{'product title':<36}{'wCTR':>8}{'sem':>7}{'score':>8}{'class':>6}")
    for r in sorted((r for r in rows if r.query_id == qid), key=lambda r: -r.relevance_score)[:10]:
        title = logs.products[r.product_id].title
        print(f"{title:<36}{r.weighted_ctr:>8.3f}{r.sem_score:>7.3f}{r.relevance_score:>8.3f}{r.relevance_class:>6}")


if __name__ == "__main__":
    main()
