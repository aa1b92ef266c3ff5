"""Independent reference computations used by the metric and formula tests."""

from decimal import Decimal, getcontext


def decimal_position_weight(pos):
    """ln(pos + 1) ** 1.5 in 40-digit decimal arithmetic."""
    getcontext().prec = 40
    x = Decimal(pos + 1).ln()
    return float(x * x.sqrt())


def pairwise_auc(scores, labels):
    """O(P*N) comparison count; ties score one half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def scan_mrr(groups, k):
    """groups: list of (ids, scores, relevant set). Rank = 1 + number of items ordered ahead."""
    total = 0.0
    for ids, scores, rel in groups:
        best = None
        for pid, s in zip(ids, scores):
            if pid not in rel:
                continue
            ahead = sum(1 for q, t in zip(ids, scores) if t > s or (t == s and q < pid))
            best = ahead + 1 if best is None else min(best, ahead + 1)
        if best is not None and best <= k:
            total += 1.0 / best
    return total / len(groups)


def zero_user_weights(model):
    """Cut every path from the user-specific x0 columns of a DCN model."""
    layout = model.x0_layout()
    schema = model.schema
    cols = [layout["continuous"].start + i for i in schema.user_continuous]
    for i in schema.user_categorical:
        name = schema.categorical[i].name
        cols += list(range(layout[name].start, layout[name].stop))
        model.embeddings.tables[i].data[:] = 0.0
    for layer in model.bottom.cross:
        layer.weight.data[:, cols] = 0.0
    model.bottom.deep.layers[0].weight.data[:, cols] = 0.0
    for expert in model.experts:
        expert.layers[0].weight.data[:, cols] = 0.0
    for gate in model.gates.values():
        gate.data[:, cols] = 0.0
