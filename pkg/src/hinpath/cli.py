"""Command line entry point: ``hinpath {synth,train,eval,paths,ablate}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import model as M
from .config import RunConfig
from .data import SynthConfig, default_metapaths_json, generate_synthetic, load_dataset, parse_metapath_config
from .errors import ConfigError, DataError, HinPathError, NumericError
from .experiment import ablate_path_length, evaluate, prepare, run
from .graph import build_graph
from .numerics import ParamStore
from .paths import build_path_set

log = logging.getLogger("hinpath")

PARAMS_FILE = "params.bin"
MODEL_FILE = "model.json"
LOSS_FILE = "loss.csv"
METRICS_FILE = "metrics.json"
EVAL_FILE = "eval_metrics.json"
ABLATION_FILE = "ablation.csv"
ABLATION_LONG_FILE = "ablation_long.csv"
MANIFEST_FILE = "manifest.json"


def atomic_write(path, data) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _metapaths_text(cfg: RunConfig) -> str:
    path = cfg["data"]["metapaths"]
    if not path:
        return default_metapaths_json()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read metapaths file {path}: {exc}") from None


def _load(cfg: RunConfig):
    return load_dataset(*cfg.data_paths())


def _prepare(cfg: RunConfig):
    ds = _load(cfg)
    return prepare(ds, cfg.split(), cfg.train().validation_fraction, _metapaths_text(cfg))


def cmd_synth(cfg: RunConfig) -> int:
    synth = cfg.synth()
    out = Path(cfg["data"]["dir"])
    generate_synthetic(synth, out, write=atomic_write)
    atomic_write(out / MANIFEST_FILE, dump_json({"synth": synth.to_dict()}))
    print(f"wrote synthetic dataset to {out}")
    return 0


def read_manifest(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))["synth"])


def model_manifest(params: ParamStore, cfg: RunConfig) -> dict:
    return {
        "model": M.config_of(params).to_dict(),
        "paths": cfg["paths"],
        "seed": cfg.seed,
        "train": cfg.train().to_dict(),
    }


def cmd_train(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    train_cfg, path_cfg, eval_cfg = cfg.train(), cfg.paths(), cfg.eval()
    res = run(prep, cfg.model_dims(), train_cfg, path_cfg, eval_cfg, cfg.seed, cfg.workers)
    out = cfg.out
    atomic_write(out / PARAMS_FILE, res.params.to_bytes())
    atomic_write(out / MODEL_FILE, dump_json(model_manifest(res.params, cfg)))
    atomic_write(out / LOSS_FILE, res.train.curve.to_csv())
    atomic_write(out / METRICS_FILE, dump_json(res.metrics))
    _print_metrics(res.metrics)
    return 0


def load_params(params_path, manifest_path=None) -> ParamStore:
    params_path = Path(params_path)
    manifest_path = Path(manifest_path) if manifest_path else params_path.with_name(MODEL_FILE)
    try:
        mcfg = M.ModelConfig.from_dict(json.loads(manifest_path.read_text(encoding="utf-8"))["model"])
        return ParamStore.load(params_path, M.param_shapes(mcfg))
    except OSError as exc:
        raise DataError(f"cannot read parameters: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad parameter files {params_path}: {exc}") from None


def _params_path(cfg: RunConfig, explicit=None) -> Path:
    return Path(explicit or cfg["eval"]["params"] or cfg.out / PARAMS_FILE)


def _check_fit(params: ParamStore, g) -> None:
    mcfg = M.config_of(params)
    if mcfg.num_entities != g.num_nodes or mcfg.num_relations != g.num_relations:
        raise DataError(
            f"parameters were trained for {mcfg.num_entities} nodes / {mcfg.num_relations} relations, "
            f"dataset has {g.num_nodes} / {g.num_relations}"
        )


def cmd_eval(cfg: RunConfig) -> int:
    params = load_params(_params_path(cfg))
    prep = _prepare(cfg)
    _check_fit(params, prep.g_eval)
    metrics, _ = evaluate(prep, params, cfg.paths(), cfg.eval(), cfg.seed, cfg.workers)
    atomic_write(cfg.out / EVAL_FILE, dump_json(metrics))
    _print_metrics(metrics)
    return 0


def cmd_paths(cfg: RunConfig, user: str, item: str, params_file=None) -> str:
    """Selected paths for one pair over the graph of all interactions."""
    ds = _load(cfg)
    edges = list(ds.edges) + [(r.user, "interacts", r.item) for r in ds.interactions]
    g = build_graph(ds.nodes, edges, relations=ds.relation_names())
    schemas = parse_metapath_config(_metapaths_text(cfg), g)
    u, i = g.node_id(user), g.node_id(item)
    ps = build_path_set(g, u, i, schemas, cfg.paths(), mask_target=True)
    params = None
    if params_file is not None or cfg["eval"]["params"]:
        params = load_params(_params_path(cfg, params_file))
        _check_fit(params, g)
    lines = [f"{len(ps)} paths {user} -> {item}"]
    if params is not None:
        y_hat, trace = M.score_pair(params, g, u, i, ps)
        weights = trace.attention(0)
    for j, p in enumerate(ps.paths):
        head = f"[{j + 1}] score={p.score:.6f}"
        if params is not None:
            head += f" weight={weights[j]:.6f}"
        lines.append(f"{head}  {p.render(g)}")
    if params is not None:
        lines.append(f"y_hat={y_hat:.6f}")
    return "\n".join(lines)


def cmd_ablate(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    rows = ablate_path_length(
        prep, cfg.L_values(), cfg.model_dims(), cfg.train(), cfg.paths(), cfg.eval(), cfg.seed, cfg.workers
    )
    short = ["L,hr_at_10"] + [f"{L},{hr:.10g}" for L, hr, _ in rows]
    long = ["L,metric,K,value"]
    for L, _, m in rows:
        for name in ("hr", "recall", "precision"):
            for k, v in zip(m["K"], m[name]):
                long.append(f"{L},{name},{k},{v:.10g}")
    atomic_write(cfg.out / ABLATION_FILE, "\n".join(short) + "\n")
    atomic_write(cfg.out / ABLATION_LONG_FILE, "\n".join(long) + "\n")
    print("\n".join(short))
    return 0


def _print_metrics(m: dict) -> None:
    for k, hr, rc, pr in zip(m["K"], m["hr"], m["recall"], m["precision"]):
        print(f"@{k}: hr={hr:.4f} recall={rc:.4f} precision={pr:.4f}")
    if "baseline" in m:
        b = m["baseline"]
        for k, hr in zip(m["K"], b["hr"]):
            print(f"popularity @{k}: hr={hr:.4f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config field")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes for path enumeration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="hinpath", description="Multi-hop path-aware recommendation over heterogeneous graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset into data.dir")
    sub.add_parser("train", parents=[common], help="train, evaluate and write params, loss curve and metrics")
    sub.add_parser("eval", parents=[common], help="evaluate saved parameters")
    p = sub.add_parser("paths", parents=[common], help="show the selected paths for a user-item pair")
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--params", help="parameter file; adds attention weights")
    sub.add_parser("ablate", parents=[common], help="hr@10 as a function of max path length")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = RunConfig.build(args.config, args.overrides, seed=args.seed, out=args.out, workers=args.workers)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "paths":
            print(cmd_paths(cfg, args.user, args.item, args.params))
            return 0
        if args.command == "ablate":
            return cmd_ablate(cfg)
    except HinPathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    parser.error(f"unknown command {args.command}")
    return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
