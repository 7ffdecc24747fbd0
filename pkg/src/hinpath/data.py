"""TSV dataset files, meta-path JSON and the planted-signal synthetic generator.

File layouts (UTF-8, tab separated, ``#`` lines are comments)::

    nodes.tsv          name<TAB>type
    edges.tsv          src<TAB>relation<TAB>dst
    interactions.tsv   user<TAB>item<TAB>timestamp[<TAB>weight]

Interactions are kept apart from the structural edges because which of them
become ``interacts`` edges depends on the train/test split.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigInvalid, MissingFile, ParseError, SchemaInvalid, TypeViolation
from .graph import HeteroGraph
from .paths import MetaPathSchema, resolve_schema

INTERACTS = "interacts"
BELONGS_TO = "belongs_to"
HAS_BRAND = "has_brand"
FOLLOWS = "follows"
RELATIONS = (BELONGS_TO, FOLLOWS, HAS_BRAND, INTERACTS)

NODES_FILE = "nodes.tsv"
EDGES_FILE = "edges.tsv"
INTERACTIONS_FILE = "interactions.tsv"

# Item-terminating closures of user-item-category / user-item-brand /
# user-user-item, plus the collaborative and longer variants.
DEFAULT_METAPATHS = [
    {"name": "user-item", "sequence": ["user", "interacts", "item"]},
    {"name": "user-user-item", "sequence": ["user", "follows", "user", "interacts", "item"]},
    {"name": "user-item-category-item", "sequence": ["user", "interacts", "item", "belongs_to", "category", "belongs_to_inv", "item"]},
    {"name": "user-item-brand-item", "sequence": ["user", "interacts", "item", "has_brand", "brand", "has_brand_inv", "item"]},
    {"name": "user-item-user-item", "sequence": ["user", "interacts", "item", "interacts_inv", "user", "interacts", "item"]},
    {
        "name": "user-user-item-category-item",
        "sequence": ["user", "follows", "user", "interacts", "item", "belongs_to", "category", "belongs_to_inv", "item"],
    },
    {
        "name": "user-user-item-brand-item",
        "sequence": ["user", "follows", "user", "interacts", "item", "has_brand", "brand", "has_brand_inv", "item"],
    },
]


@dataclass(frozen=True, order=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int
    weight: float | None = None


@dataclass
class Dataset:
    nodes: list[tuple[str, str]]
    edges: list[tuple[str, str, str]]
    interactions: list[InteractionRecord]

    def node_types(self) -> dict[str, str]:
        return dict(self.nodes)

    def relation_names(self) -> list[str]:
        return sorted({r for _, r, _ in self.edges} | {INTERACTS})


def _read_rows(path: Path, arity: tuple[int, ...]):
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    text = path.read_bytes().decode("utf-8").replace("\r\n", "\n").replace("\r", "\n")
    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in arity:
            raise ParseError(path, line_no, f"expected {' or '.join(map(str, arity))} tab-separated fields, got {len(cols)}")
        if any(not c for c in cols):
            raise ParseError(path, line_no, "empty field")
        yield line_no, cols


def load_dataset(nodes_path, edges_path, interactions_path) -> Dataset:
    """Parse and validate the three dataset files."""
    nodes_path, edges_path, interactions_path = Path(nodes_path), Path(edges_path), Path(interactions_path)
    nodes = []
    types: dict[str, str] = {}
    for line_no, (name, type_name) in _read_rows(nodes_path, (2,)):
        if name in types:
            raise ParseError(nodes_path, line_no, f"duplicate node {name!r}")
        types[name] = type_name
        nodes.append((name, type_name))

    edges = []
    for line_no, (src, rel, dst) in _read_rows(edges_path, (3,)):
        for end in (src, dst):
            if end not in types:
                raise ParseError(edges_path, line_no, f"undeclared node {end!r}")
        if src == dst:
            raise ParseError(edges_path, line_no, f"self-loop on {src!r}")
        edges.append((src, rel, dst))

    interactions = []
    seen = set()
    for line_no, cols in _read_rows(interactions_path, (3, 4)):
        user, item, ts = cols[0], cols[1], cols[2]
        try:
            timestamp = int(ts)
        except ValueError:
            raise ParseError(interactions_path, line_no, f"timestamp {ts!r} is not an integer") from None
        if timestamp < 0:
            raise ParseError(interactions_path, line_no, "negative timestamp")
        weight = None
        if len(cols) == 4:
            try:
                weight = float(cols[3])
            except ValueError:
                raise ParseError(interactions_path, line_no, f"weight {cols[3]!r} is not a number") from None
        if types.get(user) != "user":
            raise TypeViolation(f"{interactions_path}:{line_no}: {user!r} is not a declared user")
        if types.get(item) != "item":
            raise TypeViolation(f"{interactions_path}:{line_no}: {item!r} is not a declared item")
        key = (user, item, timestamp)
        if key in seen:
            raise ParseError(interactions_path, line_no, f"duplicate interaction {key}")
        seen.add(key)
        interactions.append(InteractionRecord(user, item, timestamp, weight))
    return Dataset(nodes, edges, interactions)


def load_dir(directory) -> Dataset:
    d = Path(directory)
    return load_dataset(d / NODES_FILE, d / EDGES_FILE, d / INTERACTIONS_FILE)


def _fmt_weight(w: float) -> str:
    return repr(float(w))


def format_nodes(nodes: Iterable[tuple[str, str]]) -> str:
    return "# name\ttype\n" + "".join(f"{n}\t{t}\n" for n, t in nodes)


def format_edges(edges: Iterable[tuple[str, str, str]]) -> str:
    return "# src\trelation\tdst\n" + "".join(f"{a}\t{r}\t{b}\n" for a, r, b in edges)


def format_interactions(records: Iterable[InteractionRecord]) -> str:
    lines = ["# user\titem\ttimestamp\n"]
    for rec in records:
        row = f"{rec.user}\t{rec.item}\t{rec.timestamp}"
        if rec.weight is not None:
            row += "\t" + _fmt_weight(rec.weight)
        lines.append(row + "\n")
    return "".join(lines)


def write_dataset(directory, ds: Dataset, write=None) -> list[Path]:
    """Write canonical TSV files; ``write(path, text)`` may replace the plain writer."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write = write or (lambda p, text: Path(p).write_bytes(text.encode("utf-8")))
    out = []
    for name, text in (
        (NODES_FILE, format_nodes(ds.nodes)),
        (EDGES_FILE, format_edges(ds.edges)),
        (INTERACTIONS_FILE, format_interactions(ds.interactions)),
    ):
        write(d / name, text)
        out.append(d / name)
    return out


def parse_metapath_config(json_text: str, g: HeteroGraph, max_len: int | None = None) -> list[MetaPathSchema]:
    """Resolve meta-path definitions against a graph's type and relation names."""
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise SchemaInvalid(f"metapath config is not valid JSON: {exc}") from None
    if not isinstance(data, list):
        raise SchemaInvalid("metapath config must be a JSON array")
    schemas = []
    names = set()
    for pos, entry in enumerate(data):
        if not isinstance(entry, dict) or set(entry) != {"name", "sequence"}:
            raise SchemaInvalid(f"schema #{pos}: expected an object with exactly 'name' and 'sequence'")
        name, seq = entry["name"], entry["sequence"]
        if not isinstance(name, str) or not isinstance(seq, list):
            raise SchemaInvalid(f"schema #{pos}: 'name' must be a string and 'sequence' a list")
        if name in names:
            raise SchemaInvalid(f"schema #{pos}: duplicate name {name!r}")
        names.add(name)
        schemas.append(resolve_schema(g, name, seq, max_len))
    return schemas


def default_metapaths_json() -> str:
    return json.dumps(DEFAULT_METAPATHS, indent=2)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 300
    n_items: int = 600
    n_categories: int = 20
    n_brands: int = 15
    interactions_per_user: int = 20
    signal_strength: float = 0.8
    signal_hops: int = 3
    follows_per_user: int = 3
    seed: int = 0

    def validate(self) -> "SynthConfig":
        for f in ("n_users", "n_items", "n_categories", "n_brands", "interactions_per_user"):
            if getattr(self, f) < 1:
                raise ConfigInvalid(f"synth.{f} must be >= 1")
        if self.follows_per_user < 0 or self.follows_per_user >= self.n_users:
            raise ConfigInvalid("synth.follows_per_user must lie in [0, n_users)")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigInvalid("synth.signal_strength must lie in [0, 1]")
        if self.signal_hops not in (2, 3, 4):
            raise ConfigInvalid("synth.signal_hops must be 2, 3 or 4")
        if self.interactions_per_user > self.n_items:
            raise ConfigInvalid("synth.interactions_per_user exceeds n_items")
        if self.signal_hops in (2, 4) and self.follows_per_user == 0:
            raise ConfigInvalid(f"synth.signal_hops={self.signal_hops} needs follows_per_user >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigInvalid(f"unknown synth field(s): {sorted(extra)}")
        return cls(**data)


def _names(prefix: str, n: int) -> list[str]:
    width = max(4, len(str(n - 1)))
    return [f"{prefix}{k:0{width}d}" for k in range(n)]


def synthesize(cfg: SynthConfig) -> Dataset:
    """Generate a dataset whose interactions follow multi-hop structure.

    Each item gets one category and one brand; each user a preferred category
    and brand and a few followees (biased toward users sharing the preferred
    category).  Interactions are drawn round-robin over users.  With
    probability ``signal_strength`` the next item is reachable from the
    user's history along the planted meta-path:

    * hops=2: an item a followee has interacted with (user-user-item)
    * hops=3: an item sharing a category with a past item (user-item-category-item)
    * hops=4: an item sharing a category with a followee's item

    otherwise it is uniform over unseen items.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    users, items = _names("u", cfg.n_users), _names("i", cfg.n_items)
    cats, brands = _names("c", cfg.n_categories), _names("b", cfg.n_brands)

    item_cat = rng.integers(cfg.n_categories, size=cfg.n_items)
    item_brand = rng.integers(cfg.n_brands, size=cfg.n_items)
    pref_cat = rng.integers(cfg.n_categories, size=cfg.n_users)
    pref_brand = rng.integers(cfg.n_brands, size=cfg.n_users)
    by_cat = [np.flatnonzero(item_cat == c) for c in range(cfg.n_categories)]

    followees: list[list[int]] = []
    for u in range(cfg.n_users):
        chosen: list[int] = []
        peers = [v for v in np.flatnonzero(pref_cat == pref_cat[u]) if v != u]
        while len(chosen) < cfg.follows_per_user:
            pool = [v for v in peers if v not in chosen] if rng.random() < cfg.signal_strength else []
            if not pool:
                pool = [v for v in range(cfg.n_users) if v != u and v not in chosen]
            chosen.append(int(pool[rng.integers(len(pool))]))
        followees.append(sorted(chosen))

    history: list[list[int]] = [[] for _ in range(cfg.n_users)]
    used: list[set[int]] = [set() for _ in range(cfg.n_users)]

    def pick(pool, u):
        fresh = sorted({int(x) for x in pool} - used[u])
        return fresh[rng.integers(len(fresh))] if fresh else None

    def planted(u):
        if not history[u]:
            same = [x for x in by_cat[pref_cat[u]] if item_brand[x] == pref_brand[u]]
            got = pick(same, u)
            return got if got is not None else pick(by_cat[pref_cat[u]], u)
        if cfg.signal_hops == 3:
            anchor = history[u][rng.integers(len(history[u]))]
            return pick(by_cat[item_cat[anchor]], u)
        seen = sorted({x for v in followees[u] for x in history[v]})
        if not seen:
            return None
        if cfg.signal_hops == 2:
            return pick(seen, u)
        anchor = seen[rng.integers(len(seen))]
        return pick(by_cat[item_cat[anchor]], u)

    records = []
    base = 1_600_000_000
    for step in range(cfg.interactions_per_user):
        for u in range(cfg.n_users):
            choice = planted(u) if rng.random() < cfg.signal_strength else None
            if choice is None:
                choice = pick(range(cfg.n_items), u)
            history[u].append(choice)
            used[u].add(choice)
            records.append(InteractionRecord(users[u], items[choice], base + step * 86_400 + u))
    records.sort(key=lambda r: (r.user, r.timestamp))

    nodes = [(n, "user") for n in users] + [(n, "item") for n in items]
    nodes += [(n, "category") for n in cats] + [(n, "brand") for n in brands]
    edges = []
    for x in range(cfg.n_items):
        edges.append((items[x], BELONGS_TO, cats[item_cat[x]]))
        edges.append((items[x], HAS_BRAND, brands[item_brand[x]]))
    for u in range(cfg.n_users):
        edges.extend((users[u], FOLLOWS, users[v]) for v in followees[u])
    return Dataset(nodes, edges, records)


def generate_synthetic(cfg: SynthConfig, out_dir, write=None) -> Dataset:
    ds = synthesize(cfg)
    write_dataset(out_dir, ds, write=write)
    return ds


def interactions_by_user(records: Sequence[InteractionRecord]) -> dict[str, list[InteractionRecord]]:
    out: dict[str, list[InteractionRecord]] = {}
    for rec in records:
        out.setdefault(rec.user, []).append(rec)
    return out
