"""Chronological splitting, candidate ranking and HR / Recall / Precision at K.

Ranking protocol: each evaluated user's test positives are ranked together
with ``n_neg`` items drawn uniformly from items the user never interacted
with.  Metrics are per-user means.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import model as M
from .data import InteractionRecord
from .errors import EmptyAfterFilter
from .numerics import ParamStore, stream
from .paths import PathCache
from .trainer import sample_negatives

PROTOCOL = "sampled: test positives + {n_neg} uniformly sampled never-interacted items per user; per-user mean"


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    min_interactions: int = 5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.min_interactions < 1:
            raise ValueError("min_interactions must be >= 1")


def filter_min_interactions(records: Iterable[InteractionRecord], minimum: int) -> list[InteractionRecord]:
    """Drop users and items with fewer than ``minimum`` records until nothing changes."""
    kept = list(records)
    while True:
        users = Counter(r.user for r in kept)
        items = Counter(r.item for r in kept)
        nxt = [r for r in kept if users[r.user] >= minimum and items[r.item] >= minimum]
        if len(nxt) == len(kept):
            return nxt
        kept = nxt


def chronological_split(records: Iterable[InteractionRecord], spec: SplitSpec = SplitSpec()):
    """Per user, the earliest ceil(train_fraction * n) records train, the rest test.

    Users left with a single record cannot be split and are dropped.
    """
    kept = filter_min_interactions(records, spec.min_interactions)
    per_user: dict[str, list[InteractionRecord]] = {}
    for r in kept:
        per_user.setdefault(r.user, []).append(r)
    train, test = [], []
    for user in sorted(per_user):
        recs = sorted(per_user[user], key=lambda r: (r.timestamp, r.item))
        if len(recs) < 2:
            continue
        cut = min(len(recs) - 1, max(1, math.ceil(spec.train_fraction * len(recs))))
        train.extend(recs[:cut])
        test.extend(recs[cut:])
    if not train or not test:
        raise EmptyAfterFilter(f"no interactions survive min_interactions={spec.min_interactions}")
    return train, test


@dataclass
class UserRanking:
    user: int
    positives: frozenset[int]
    candidates: list[int]
    scores: list[float]
    order: list[int] = field(default_factory=list)  # candidate items, best first

    def hits(self, k: int) -> int:
        return sum(1 for x in self.order[:k] if x in self.positives)


def rank_items(candidates: Sequence[int], scores: Sequence[float]) -> list[int]:
    """Score descending, ties by item id ascending."""
    cand = np.asarray(candidates, dtype=np.int64)
    sc = np.asarray(scores, dtype=float)
    idx = np.lexsort((cand, -sc))
    return cand[idx].tolist()


def make_ranking(user: int, positives: Iterable[int], candidates: Sequence[int], scores: Sequence[float]) -> UserRanking:
    return UserRanking(
        user=user,
        positives=frozenset(positives),
        candidates=list(candidates),
        scores=[float(s) for s in scores],
        order=rank_items(candidates, scores),
    )


def draw_candidates(
    test_positives: Mapping[int, Sequence[int]],
    known: Mapping[int, frozenset[int]],
    items: Sequence[int],
    n_neg: int,
    seed: int,
) -> dict[int, list[int]]:
    """Candidate list per user; users are visited in ascending id so the draw is reproducible."""
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    rng = stream(seed, "eval")
    out = {}
    for u in sorted(test_positives):
        pos = sorted(set(test_positives[u]))
        if not pos:
            continue
        out[u] = pos + sample_negatives(known[u], items, n_neg, rng)
    return out


def score_candidates(params: ParamStore, cache: PathCache, user: int, candidates: Sequence[int]) -> np.ndarray:
    sets = cache.many([(user, i) for i in candidates])
    return M.forward(params, [ps.paths for ps in sets]).y_hat


def rank_candidates(
    params: ParamStore,
    g,
    schemas,
    u: int,
    test_positives: Sequence[int],
    n_neg: int,
    rng: np.random.Generator,
    *,
    known: frozenset[int],
    items: Sequence[int],
    path_cfg=None,
    cache: PathCache | None = None,
) -> UserRanking:
    """Rank one user's test positives against ``n_neg`` sampled negatives."""
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    if cache is None:
        from .paths import PathConfig

        cache = PathCache(g, schemas, path_cfg or PathConfig())
    pos = sorted(set(test_positives))
    candidates = pos + sample_negatives(known, items, n_neg, rng)
    return make_ranking(u, pos, candidates, score_candidates(params, cache, u, candidates))


def model_rankings(params: ParamStore, cache: PathCache, candidates: Mapping[int, list[int]], test_positives) -> list[UserRanking]:
    cache.fill((u, i) for u in sorted(candidates) for i in candidates[u])
    return [make_ranking(u, test_positives[u], candidates[u], score_candidates(params, cache, u, candidates[u])) for u in sorted(candidates)]


def metrics_at_k(rankings: Sequence[UserRanking], K: int, exact: bool = False):
    """Mean (hit ratio, recall, precision) at cutoff ``K``.

    Accumulated in rational arithmetic and rounded once, so identities such
    as ``precision * K == mean_hits`` hold exactly with ``exact=True``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not rankings:
        zero = Fraction(0)
        return (zero, zero, zero) if exact else (0.0, 0.0, 0.0)
    hr = recall = precision = Fraction(0)
    for r in rankings:
        h = r.hits(K)
        hr += 1 if h else 0
        recall += Fraction(h, len(r.positives))
        precision += Fraction(h, K)
    n = len(rankings)
    out = (hr / n, recall / n, precision / n)
    return out if exact else tuple(float(x) for x in out)


def mean_hits(rankings: Sequence[UserRanking], K: int, exact: bool = False):
    m = Fraction(sum(r.hits(K) for r in rankings), len(rankings)) if rankings else Fraction(0)
    return m if exact else float(m)


def metrics_report(rankings: Sequence[UserRanking], Ks: Sequence[int], n_neg: int, seed: int) -> dict:
    triples = [metrics_at_k(rankings, k) for k in Ks]
    return {
        "protocol": PROTOCOL.format(n_neg=n_neg),
        "K": list(Ks),
        "hr": [t[0] for t in triples],
        "recall": [t[1] for t in triples],
        "precision": [t[2] for t in triples],
        "n_users": len(rankings),
        "seed": seed,
    }


def popularity_rankings(train_counts: Mapping[int, int], candidates: Mapping[int, list[int]], test_positives) -> list[UserRanking]:
    return [
        make_ranking(u, test_positives[u], candidates[u], [train_counts.get(i, 0) for i in candidates[u]])
        for u in sorted(candidates)
    ]


def popularity_baseline(
    train: Mapping[int, Sequence[int]],
    test: Mapping[int, Sequence[int]],
    K: int,
    *,
    known: Mapping[int, frozenset[int]],
    items: Sequence[int],
    n_neg: int = 99,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Rank candidates by global training interaction count."""
    counts = Counter(i for pos in train.values() for i in pos)
    candidates = draw_candidates(test, known, items, n_neg, seed)
    return metrics_at_k(popularity_rankings(counts, candidates, test), K)
