"""Answer-quality, retrieval and privacy-leakage metrics."""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Mapping, Optional, Sequence

from ..backends import tokenize
from ..errors import EmptyGold, UnknownEntity
from ..tree import MemoryTree, NodeId


def token_f1(prediction: str, gold: str) -> float:
    gold_toks = tokenize(gold)
    if not gold_toks:
        raise EmptyGold("gold answer has no tokens")
    pred_toks = tokenize(prediction)
    common = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    if common == 0:
        return 0.0
    p = common / len(pred_toks)
    r = common / len(gold_toks)
    return 2 * p * r / (p + r)


def bleu1(prediction: str, gold: str) -> float:
    """Clipped unigram precision times the brevity penalty (single reference)."""
    gold_toks = tokenize(gold)
    if not gold_toks:
        raise EmptyGold("gold answer has no tokens")
    pred_toks = tokenize(prediction)
    if not pred_toks:
        return 0.0
    clipped = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    precision = clipped / len(pred_toks)
    c, r = len(pred_toks), len(gold_toks)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * precision


def retrieval_prf(predicted: Iterable, gold: Iterable) -> tuple[float, float, float]:
    gold = set(gold)
    if not gold:
        raise EmptyGold("gold entity set is empty")
    predicted = set(predicted)
    tp = len(predicted & gold)
    if tp == 0:
        return 0.0, 0.0, 0.0
    p, r = tp / len(predicted), tp / len(gold)
    return p, r, 2 * p * r / (p + r)


def leakage(run: Sequence[tuple[NodeId, Mapping[str, Optional[NodeId]]]],
            tree: MemoryTree) -> tuple[float, float]:
    """Query-wise and entity-wise leakage.

    ``run`` holds one ``(scope, {entity: owner_node})`` pair per query. An
    entity leaks when its owner is outside ``subtree(scope)``. Queries with no
    returned entities count as non-leaking with a zero entity fraction.
    """
    if not run:
        return 0.0, 0.0
    leaky_queries = 0
    fractions = []
    for scope, returned in run:
        allowed = tree.subtree(scope)
        out = 0
        for entity, owner in returned.items():
            if owner is None:
                raise UnknownEntity(f"no owner recorded for entity {entity!r}", entity=entity)
            if owner not in allowed:
                out += 1
        if out:
            leaky_queries += 1
        fractions.append(out / len(returned) if returned else 0.0)
    return leaky_queries / len(run), sum(fractions) / len(run)


def mean_se(values: Sequence[float]) -> dict:
    n = len(values)
    if n == 0:
        return {"mean": None, "se": None, "n": 0}
    mean = sum(values) / n
    if n == 1:
        return {"mean": mean, "se": 0.0, "n": 1}
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return {"mean": mean, "se": math.sqrt(var / n), "n": n}
