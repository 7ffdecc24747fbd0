"""End-to-end runs: split a dataset, build graphs, train, evaluate, ablate.

Two graphs are built from the same vocabularies.  The fit graph holds the
structural edges plus the gradient positives only, so validation pairs are
scored without seeing their own edges.  The eval graph adds the validation
positives back; test interactions never enter either graph.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import model as M
from .data import INTERACTS, Dataset, InteractionRecord, default_metapaths_json, parse_metapath_config
from .evaluator import SplitSpec, chronological_split, draw_candidates, metrics_report, model_rankings, popularity_rankings
from .graph import HeteroGraph, build_graph
from .numerics import ParamStore
from .paths import MetaPathSchema, PathCache, PathConfig
from .trainer import InteractionData, TrainConfig, TrainResult, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    K: tuple[int, ...] = (5, 10, 20)
    n_neg: int = 99


@dataclass
class Prepared:
    dataset: Dataset
    train_records: list[InteractionRecord]
    test_records: list[InteractionRecord]
    g_fit: HeteroGraph
    g_eval: HeteroGraph
    schemas: list[MetaPathSchema]
    data: InteractionData
    train_pos: dict[int, list[int]]
    test_pos: dict[int, list[int]]


@dataclass
class RunResult:
    train: TrainResult
    metrics: dict
    rankings: list = field(default_factory=list)

    @property
    def params(self) -> ParamStore:
        return self.train.params


def _graph(ds: Dataset, positives: dict[int, list[int]], names: list[str]) -> HeteroGraph:
    edges = list(ds.edges)
    for u in sorted(positives):
        edges.extend((names[u], INTERACTS, names[i]) for i in positives[u])
    return build_graph(ds.nodes, edges, relations=ds.relation_names())


def prepare(ds: Dataset, split: SplitSpec = SplitSpec(), validation_fraction: float = 0.1, metapaths_json: str | None = None) -> Prepared:
    train_records, test_records = chronological_split(ds.interactions, split)
    index = {name: k for k, (name, _) in enumerate(ds.nodes)}
    names = [name for name, _ in ds.nodes]

    by_user: dict[int, list[InteractionRecord]] = {}
    for r in train_records:
        by_user.setdefault(index[r.user], []).append(r)
    fit: dict[int, list[int]] = {}
    val: dict[int, list[int]] = {}
    train_pos: dict[int, list[int]] = {}
    for u, recs in by_user.items():
        # records arrive chronologically ordered from the split
        seq = list(dict.fromkeys(index[r.item] for r in recs))
        n_val = min(len(seq) - 1, math.floor(validation_fraction * len(seq)))
        fit[u] = seq[: len(seq) - n_val]
        val[u] = seq[len(seq) - n_val :]
        train_pos[u] = seq

    test_pos: dict[int, list[int]] = {}
    for r in test_records:
        u, i = index[r.user], index[r.item]
        if i not in train_pos.get(u, ()):
            test_pos.setdefault(u, [])
            if i not in test_pos[u]:
                test_pos[u].append(i)

    known: dict[int, set[int]] = {}
    for r in ds.interactions:
        known.setdefault(index[r.user], set()).add(index[r.item])
    items = sorted({index[r.item] for r in train_records} | {index[r.item] for r in test_records})

    g_fit = _graph(ds, fit, names)
    g_eval = _graph(ds, train_pos, names)
    schemas = parse_metapath_config(metapaths_json or default_metapaths_json(), g_eval)
    data = InteractionData(fit=fit, val=val, known={u: frozenset(s) for u, s in known.items()}, items=items)
    return Prepared(ds, train_records, test_records, g_fit, g_eval, schemas, data, train_pos, test_pos)


def model_config_for(prep: Prepared, d=64, h=64, k=32) -> M.ModelConfig:
    return M.ModelConfig(num_entities=prep.g_eval.num_nodes, num_relations=prep.g_eval.num_relations, d=d, h=h, k=k)


def evaluate(prep: Prepared, params: ParamStore, path_cfg: PathConfig, eval_cfg: EvalConfig, seed: int, workers: int = 1, cache: PathCache | None = None):
    """Model metrics plus the popularity baseline on identical candidate lists."""
    candidates = draw_candidates(prep.test_pos, prep.data.known, prep.data.items, eval_cfg.n_neg, seed)
    own = cache is None
    cache = cache or PathCache(prep.g_eval, prep.schemas, path_cfg, mask_target=True, workers=workers)
    try:
        rankings = model_rankings(params, cache, candidates, prep.test_pos)
    finally:
        if own:
            cache.close()
    metrics = metrics_report(rankings, eval_cfg.K, eval_cfg.n_neg, seed)
    counts = Counter(i for pos in prep.train_pos.values() for i in pos)
    base = metrics_report(popularity_rankings(counts, candidates, prep.test_pos), eval_cfg.K, eval_cfg.n_neg, seed)
    metrics["baseline"] = {"name": "popularity", "hr": base["hr"], "recall": base["recall"], "precision": base["precision"]}
    return metrics, rankings


def run(
    prep: Prepared,
    model_dims: dict | None = None,
    train_cfg: TrainConfig = TrainConfig(),
    path_cfg: PathConfig = PathConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    seed: int = 0,
    workers: int = 1,
    on_epoch=None,
) -> RunResult:
    cfg = model_config_for(prep, **(model_dims or {}))
    with PathCache(prep.g_fit, prep.schemas, path_cfg, mask_target=True, workers=workers) as cache:
        result = train(prep.g_fit, prep.data, prep.schemas, cfg, train_cfg, path_cfg, cache=cache, on_epoch=on_epoch)
    metrics, rankings = evaluate(prep, result.params, path_cfg, eval_cfg, seed, workers)
    return RunResult(result, metrics, rankings)


def ablate_path_length(
    prep: Prepared,
    L_values: Sequence[int] = (1, 2, 3, 4, 5),
    model_dims: dict | None = None,
    train_cfg: TrainConfig = TrainConfig(),
    path_cfg: PathConfig = PathConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    seed: int = 0,
    workers: int = 1,
) -> list[tuple[int, float, dict]]:
    """One training run per maximum path length, everything else fixed.

    Returns ``(L, hr@10, metrics)`` rows; 10 is added to the cutoffs if absent.
    """
    if not L_values:
        raise ValueError("L_values must be non-empty")
    Ks = tuple(eval_cfg.K) if 10 in eval_cfg.K else tuple(eval_cfg.K) + (10,)
    ecfg = replace(eval_cfg, K=Ks)
    rows = []
    for L in L_values:
        res = run(prep, model_dims, train_cfg, replace(path_cfg, max_len=L), ecfg, seed, workers)
        hr10 = res.metrics["hr"][Ks.index(10)]
        log.info("L=%d hr@10=%.4f", L, hr10)
        rows.append((L, hr10, res.metrics))
    return rows
