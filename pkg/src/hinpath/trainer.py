"""Negative sampling and the minibatch Adam loop over the BCE objective."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .errors import ConfigInvalid, NonFiniteLoss
from .graph import HeteroGraph
from .numerics import ParamStore, adam_step, stream
from .paths import MetaPathSchema, PathCache, PathConfig, PathSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    neg_ratio: int = 4
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int | None = None
    # decoupled shrinkage of every non-bias parameter after each Adam step
    weight_decay: float = 1.0

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigInvalid("train.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigInvalid("train.batch_size must be >= 1")
        if self.neg_ratio < 1:
            raise ConfigInvalid("train.neg_ratio must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigInvalid("train.validation_fraction must lie in [0, 1)")
        if self.lr <= 0:
            raise ConfigInvalid("train.lr must be positive")
        if not 0.0 <= self.lr * self.weight_decay < 1.0:
            raise ConfigInvalid("train.weight_decay must be >= 0 with lr * weight_decay < 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigInvalid("train.patience must be >= 1 or null")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingExample:
    user: int
    item: int
    label: int
    path_set: PathSet


@dataclass
class InteractionData:
    """Positives as node ids.

    ``fit`` positives drive gradients, ``val`` positives only the validation
    loss.  ``known`` holds every positive the user has anywhere (test
    included); negatives are never drawn from it.
    """

    fit: dict[int, list[int]]
    val: dict[int, list[int]]
    known: dict[int, frozenset[int]]
    items: list[int]

    def users(self) -> list[int]:
        return sorted(self.fit)


@dataclass
class LossCurve:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def append(self, train_loss: float, val_loss: float) -> None:
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            rows.append(f"{e},{tr:.10g},{va:.10g}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "LossCurve":
        lines = text.strip().splitlines()
        if not lines or lines[0] != "epoch,train_loss,val_loss":
            raise ValueError("not a loss curve CSV")
        curve = cls()
        for line in lines[1:]:
            _, tr, va = line.split(",")
            curve.append(float(tr), float(va))
        return curve


@dataclass
class TrainResult:
    params: ParamStore
    curve: LossCurve
    # positive (user, item) pairs that contributed gradients
    positive_pairs: set = field(default_factory=set)
    n_updates: int = 0


def sample_negatives(known: frozenset[int] | set[int], items: Sequence[int], n: int, rng: np.random.Generator) -> list[int]:
    """``n`` distinct items outside ``known``, uniformly; fewer if the pool runs dry."""
    if n <= 0:
        return []
    pool = [x for x in items if x not in known]
    if n >= len(pool):
        if n > len(pool):
            log.debug("only %d eligible negatives for %d requested", len(pool), n)
        return pool
    picks = rng.choice(len(pool), size=n, replace=False)
    return [pool[k] for k in picks]


def epoch_loss(params: ParamStore, examples: Sequence[TrainingExample], chunk: int = 1024) -> float:
    """Mean BCE over ``examples`` with no parameter or gradient changes."""
    if not examples:
        return 0.0
    total = 0.0
    for start in range(0, len(examples), chunk):
        part = examples[start : start + chunk]
        trace = M.forward(params, [ex.path_set.paths for ex in part])
        y = np.array([ex.label for ex in part], dtype=float)
        total += float(np.sum(M.bce_loss(trace.logit, y)[0]))
    return total / len(examples)


def batch_step(params: ParamStore, batch: Sequence[TrainingExample]) -> np.ndarray:
    """Forward plus backward of a batch's mean loss into freshly zeroed grads; returns per-example losses."""
    params.zero_grads()
    trace = M.forward(params, [ex.path_set.paths for ex in batch])
    y = np.array([ex.label for ex in batch], dtype=float)
    losses, _ = M.bce_loss(trace.logit, y)
    losses = np.atleast_1d(losses)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        ex = batch[int(bad[0])]
        raise NonFiniteLoss(f"non-finite loss for example user={ex.user} item={ex.item} label={ex.label}")
    M.backward(trace, y, params, weights=np.full(len(batch), 1.0 / len(batch)))
    return losses


def validation_examples(data: InteractionData, cache: PathCache, cfg: TrainConfig) -> list[TrainingExample]:
    """Held-out positives plus a fixed draw of negatives for them."""
    rng = stream(cfg.seed, "validation")
    pairs: list[tuple[int, int, int]] = []
    for u in sorted(data.val):
        pos = data.val[u]
        if not pos:
            continue
        pairs.extend((u, i, 1) for i in pos)
        pairs.extend((u, i, 0) for i in sample_negatives(data.known[u], data.items, cfg.neg_ratio * len(pos), rng))
    sets = cache.many([(u, i) for u, i, _ in pairs])
    return [TrainingExample(u, i, y, ps) for (u, i, y), ps in zip(pairs, sets)]


def epoch_examples(data: InteractionData, cache: PathCache, cfg: TrainConfig, rng: np.random.Generator) -> list[TrainingExample]:
    pairs: list[tuple[int, int, int]] = []
    for u in data.users():
        pos = data.fit[u]
        pairs.extend((u, i, 1) for i in pos)
        pairs.extend((u, i, 0) for i in sample_negatives(data.known[u], data.items, cfg.neg_ratio * len(pos), rng))
    order = rng.permutation(len(pairs))
    pairs = [pairs[k] for k in order]
    sets = cache.many([(u, i) for u, i, _ in pairs])
    return [TrainingExample(u, i, y, ps) for (u, i, y), ps in zip(pairs, sets)]


def decay_weights(params: ParamStore, factor: float) -> None:
    """Scale every parameter except the biases (``b``, ``b_*``) by ``factor``."""
    for name, value in params.values.items():
        if not name.startswith("b"):
            value *= factor
    params.touch()


def train(
    g: HeteroGraph,
    data: InteractionData,
    schemas: Sequence[MetaPathSchema],
    model_cfg: M.ModelConfig,
    train_cfg: TrainConfig = TrainConfig(),
    path_cfg: PathConfig = PathConfig(),
    cache: PathCache | None = None,
    params: ParamStore | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Fit the model on ``data.fit`` over graph ``g``.

    ``g`` must not contain validation or test interactions.  Each training
    positive hides its own edge while its paths are built.
    """
    train_cfg.validate()
    if not any(data.fit.values()):
        raise ConfigInvalid("training split is empty")
    cache = cache or PathCache(g, schemas, path_cfg, mask_target=True)
    if params is None:
        params = M.init_params(model_cfg, stream(train_cfg.seed, "init"))
    rng = stream(train_cfg.seed, "sampling")
    result = TrainResult(params=params, curve=LossCurve())
    val = validation_examples(data, cache, train_cfg)

    best, stale = math.inf, 0
    for epoch in range(1, train_cfg.epochs + 1):
        examples = epoch_examples(data, cache, train_cfg, rng)
        total = 0.0
        for start in range(0, len(examples), train_cfg.batch_size):
            batch = examples[start : start + train_cfg.batch_size]
            total += float(batch_step(params, batch).sum())
            adam_step(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps_adam)
            if train_cfg.weight_decay:
                decay_weights(params, 1.0 - train_cfg.lr * train_cfg.weight_decay)
            result.n_updates += 1
            result.positive_pairs.update((ex.user, ex.item) for ex in batch if ex.label == 1)
        train_loss = total / len(examples)
        val_loss = epoch_loss(params, val)
        result.curve.append(train_loss, val_loss)
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if train_cfg.patience is not None and val:
            if val_loss < best:
                best, stale = val_loss, 0
            else:
                stale += 1
                if stale >= train_cfg.patience:
                    log.info("early stop after epoch %d", epoch)
                    break
    params.zero_grads()
    return result


def config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    extra = set(data) - known
    if extra:
        raise ConfigInvalid(f"unknown train field(s): {sorted(extra)}")
    return TrainConfig(**data)
