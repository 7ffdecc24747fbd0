"""Run configuration: one JSON document plus ``--set dotted.key=value`` overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .data import SynthConfig
from .errors import ConfigInvalid
from .evaluator import SplitSpec
from .experiment import EvalConfig
from .paths import PathConfig
from .trainer import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out": "runs/default",
    # null means one worker per core
    "workers": None,
    "data": {
        "dir": "data",
        "nodes": None,
        "edges": None,
        "interactions": None,
        "metapaths": None,
    },
    "synth": {
        "n_users": 300,
        "n_items": 600,
        "n_categories": 20,
        "n_brands": 15,
        "interactions_per_user": 20,
        "signal_strength": 0.8,
        "signal_hops": 3,
        "follows_per_user": 3,
        "seed": None,
    },
    "model": {"d": 64, "h": 64, "k": 32},
    "train": {
        "epochs": 30,
        "batch_size": 256,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_adam": 1e-8,
        "neg_ratio": 4,
        "seed": None,
        "validation_fraction": 0.1,
        "patience": None,
        "weight_decay": 1.0,
    },
    "split": {"train_fraction": 0.8, "min_interactions": 5},
    "paths": {"max_len": 4, "K": 8, "alpha": 0.5, "cap_per_schema": 32},
    "eval": {"K": [5, 10, 20], "n_neg": 99, "params": None},
    "ablate": {"L_values": [1, 2, 3, 4, 5]},
}

# keys whose value may be null besides those defaulting to null
NULLABLE = {"paths.cap_per_schema"}


def _check_type(key: str, value, default) -> None:
    if value is None:
        if default is None or key in NULLABLE:
            return
        raise ConfigInvalid(f"config field {key!r} may not be null")
    if default is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigInvalid(f"config field {key!r} has wrong type: {value!r}")


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    if not isinstance(update, dict):
        raise ConfigInvalid(f"config section {prefix.rstrip('.') or '<root>'!r} must be an object")
    for key, value in update.items():
        dotted = prefix + key
        if key not in base:
            raise ConfigInvalid(f"unknown config field {dotted!r}")
        if isinstance(base[key], dict):
            _merge(base[key], value, dotted + ".")
        else:
            _check_type(dotted, value, DEFAULTS_FLAT.get(dotted))
            base[key] = value


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, prefix + k + "."))
        else:
            out[prefix + k] = v
    return out


DEFAULTS_FLAT = _flatten(DEFAULTS)


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigInvalid(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for pos, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigInvalid(f"unknown config field {'.'.join(parts[: pos + 1])!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or isinstance(node[leaf], dict):
        raise ConfigInvalid(f"unknown config field {key!r}")
    _check_type(key, value, DEFAULTS_FLAT.get(key))
    node[leaf] = value


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def build(cls, path=None, overrides=(), seed=None, out=None, workers=None) -> "RunConfig":
        cfg = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
            try:
                user = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from None
            _merge(cfg, user)
        for item in overrides:
            apply_override(cfg, *parse_override(item))
        if seed is not None:
            cfg["seed"] = seed
        if out is not None:
            cfg["out"] = out
        if workers is not None:
            cfg["workers"] = workers
        run = cls(cfg)
        run.validate()
        return run

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def workers(self) -> int:
        w = self.raw["workers"]
        return (os.cpu_count() or 1) if w is None else int(w)

    def data_paths(self) -> tuple[Path, Path, Path]:
        d = self.raw["data"]
        base = Path(d["dir"])
        return (
            Path(d["nodes"]) if d["nodes"] else base / "nodes.tsv",
            Path(d["edges"]) if d["edges"] else base / "edges.tsv",
            Path(d["interactions"]) if d["interactions"] else base / "interactions.tsv",
        )

    def synth(self) -> SynthConfig:
        s = dict(self.raw["synth"])
        if s["seed"] is None:
            s["seed"] = self.seed
        return _construct("synth", SynthConfig, s).validate()

    def train(self) -> TrainConfig:
        t = dict(self.raw["train"])
        if t["seed"] is None:
            t["seed"] = self.seed
        return _construct("train", TrainConfig, t).validate()

    def split(self) -> SplitSpec:
        return _construct("split", SplitSpec, self.raw["split"])

    def paths(self) -> PathConfig:
        return _construct("paths", PathConfig, self.raw["paths"])

    def eval(self) -> EvalConfig:
        e = self.raw["eval"]
        ks = e["K"]
        if not ks or any(not isinstance(k, int) or isinstance(k, bool) or k < 1 for k in ks):
            raise ConfigInvalid("config field 'eval.K' must be a non-empty list of positive integers")
        if e["n_neg"] < 1:
            raise ConfigInvalid("config field 'eval.n_neg' must be >= 1")
        return EvalConfig(K=tuple(ks), n_neg=e["n_neg"])

    def model_dims(self) -> dict:
        m = self.raw["model"]
        for k, v in m.items():
            if v < 1:
                raise ConfigInvalid(f"config field 'model.{k}' must be >= 1")
        return dict(m)

    def L_values(self) -> list[int]:
        vals = self.raw["ablate"]["L_values"]
        if not vals or any(not isinstance(v, int) or isinstance(v, bool) or v < 1 for v in vals):
            raise ConfigInvalid("config field 'ablate.L_values' must be a non-empty list of positive integers")
        return list(vals)

    def validate(self) -> None:
        self.synth()
        self.train()
        self.split()
        self.paths()
        self.eval()
        self.model_dims()
        self.L_values()
        if self.raw["workers"] is not None and self.raw["workers"] < 1:
            raise ConfigInvalid("config field 'workers' must be >= 1")

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _construct(section: str, cls, values: dict):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"config section {section!r}: {exc}") from None
