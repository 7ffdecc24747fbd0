"""Meta-path guided path enumeration, scoring and screening.

For a (user, item) pair every simple path conforming to one of the configured
meta-path schemas is enumerated by depth-first search over sorted adjacency.
Candidates are then scored by a mix of schema share within the candidate set
and mean pointwise mutual information between consecutive nodes, and the
best ``K`` are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import SchemaInvalid, TypeMismatch, ZeroDegree
from .graph import HeteroGraph

PMI_CLAMP = 10.0
UNLIMITED = None


@dataclass(frozen=True)
class MetaPathSchema:
    name: str
    types: tuple[int, ...]
    relations: tuple[int, ...]

    @property
    def length(self) -> int:
        """Number of nodes a conforming path has."""
        return len(self.types)

    def describe(self, g: HeteroGraph) -> str:
        parts = [g.types.name(self.types[0])]
        for r, t in zip(self.relations, self.types[1:]):
            parts += [g.relations.name(r), g.types.name(t)]
        return " ".join(parts)


@dataclass(frozen=True)
class PathInstance:
    nodes: tuple[int, ...]
    relations: tuple[int, ...]
    schema: str
    score: float = 0.0

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def key(self) -> tuple:
        return (self.nodes, self.relations)

    def render(self, g: HeteroGraph) -> str:
        out = [g.node_names[self.nodes[0]]]
        for r, v in zip(self.relations, self.nodes[1:]):
            out.append(f"-[{g.relations.name(r)}]-> {g.node_names[v]}")
        return " ".join(out)


@dataclass(frozen=True)
class PathSet:
    user: int
    item: int
    paths: tuple[PathInstance, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


@dataclass(frozen=True)
class PathConfig:
    max_len: int = 4
    K: int = 8
    alpha: float = 0.5
    cap_per_schema: int | None = 32

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.cap_per_schema is not None and self.cap_per_schema < 1:
            raise ValueError("cap_per_schema must be >= 1")

    def usable(self, schemas: Sequence[MetaPathSchema]) -> list[MetaPathSchema]:
        """Schemas no longer than ``max_len`` nodes.

        ``max_len == 1`` degenerates to direct user-item edges, i.e. the
        two-node schemas.
        """
        limit = max(2, self.max_len)
        return [s for s in schemas if s.length <= limit]


def resolve_schema(g: HeteroGraph, name: str, sequence: Sequence[str], max_len: int | None = None) -> MetaPathSchema:
    """Validate an alternating ``[type, relation, type, ...]`` name sequence."""
    seq = list(sequence)
    if len(seq) < 3 or len(seq) % 2 == 0:
        raise SchemaInvalid(f"schema {name!r}: sequence must alternate type/relation and end on a type (got {len(seq)} entries)")
    types, rels = [], []
    for pos, token in enumerate(seq):
        if not isinstance(token, str):
            raise SchemaInvalid(f"schema {name!r} position {pos}: expected a string, got {token!r}")
        if pos % 2 == 0:
            if token not in g.types:
                raise SchemaInvalid(f"schema {name!r} position {pos}: unknown node type {token!r}")
            types.append(g.types.id(token))
        else:
            r = g.relations.get(token)
            if r is None or r == 0:
                raise SchemaInvalid(f"schema {name!r} position {pos}: unknown relation {token!r}")
            rels.append(r)
    if seq[0] != "user":
        raise SchemaInvalid(f"schema {name!r} position 0: must start at type 'user', got {seq[0]!r}")
    if seq[-1] != "item":
        raise SchemaInvalid(f"schema {name!r} position {len(seq) - 1}: must end at type 'item', got {seq[-1]!r}")
    for k, r in enumerate(rels):
        sig = g.signatures.get(r, frozenset())
        if (types[k], types[k + 1]) not in sig:
            raise SchemaInvalid(
                f"schema {name!r} position {2 * k + 1}: relation {seq[2 * k + 1]!r} does not connect "
                f"{seq[2 * k]!r} to {seq[2 * k + 2]!r} in this graph"
            )
    if max_len is not None and len(types) > max_len:
        raise SchemaInvalid(f"schema {name!r}: {len(types)} nodes exceeds max path length {max_len}")
    return MetaPathSchema(name=name, types=tuple(types), relations=tuple(rels))


def _check_endpoints(g: HeteroGraph, u: int, i: int) -> None:
    if g.type_of(u) != "user":
        raise TypeMismatch(f"source {g.node_names[u]!r} is a {g.type_of(u)!r}, expected 'user'")
    if g.type_of(i) != "item":
        raise TypeMismatch(f"target {g.node_names[i]!r} is a {g.type_of(i)!r}, expected 'item'")


def enumerate_paths(
    g: HeteroGraph,
    u: int,
    i: int,
    schemas: Sequence[MetaPathSchema],
    cap_per_schema: int | None = 32,
    mask_target: bool = False,
) -> list[PathInstance]:
    """All simple schema-conforming paths from ``u`` to ``i``.

    Each schema contributes at most ``cap_per_schema`` paths (``None`` means
    unlimited), taken in DFS order over sorted adjacency.  With
    ``mask_target`` any direct ``u``-``i`` edge is ignored, which is how a
    training positive hides its own interaction from itself.
    """
    _check_endpoints(g, u, i)
    node_type = g.node_type
    adj = g._adj
    cap = math.inf if cap_per_schema is None else cap_per_schema
    out: list[PathInstance] = []
    seen: set[tuple] = set()

    for schema in schemas:
        if schema.types[0] != node_type[u] or schema.types[-1] != node_type[i]:
            continue
        rels = schema.relations
        types = schema.types
        last = len(rels) - 1
        if last == 0:
            if not mask_target and g.has_edge(u, rels[0], i):
                path = PathInstance((u, i), rels, schema.name)
                if path.key not in seen:
                    seen.add(path.key)
                    out.append(path)
            continue
        # nodes that reach i in one final hop
        targets = set(adj[i].get(g.inverse(rels[last]), ()))
        if not targets:
            continue
        t_pen = types[last]
        name = schema.name
        nodes = [u]
        found = 0

        def walk(cur: int, depth: int) -> None:
            nonlocal found
            nbrs = adj[cur].get(rels[depth], ())
            if depth == last - 1:
                for nxt in nbrs:
                    if nxt in targets and nxt != i and node_type[nxt] == t_pen and nxt not in nodes:
                        path = PathInstance(tuple(nodes) + (nxt, i), rels, name)
                        if path.key not in seen:
                            seen.add(path.key)
                            out.append(path)
                        found += 1
                        if found >= cap:
                            return
                return
            t = types[depth + 1]
            for nxt in nbrs:
                if nxt == i or node_type[nxt] != t or nxt in nodes:
                    continue
                nodes.append(nxt)
                walk(nxt, depth + 1)
                nodes.pop()
                if found >= cap:
                    return

        walk(u, 0)
    return out


def pmi(g: HeteroGraph, a: int, b: int) -> float:
    """Clamped log((cooccur * T) / (deg(a) * deg(b))); memoised on the graph."""
    key = (a, b) if a < b else (b, a)
    memo = g._pmi_memo
    hit = memo.get(key)
    if hit is not None:
        return hit
    da, db = g.degree[a], g.degree[b]
    if da == 0 or db == 0:
        raise ZeroDegree(f"zero degree in pmi({g.node_names[a]!r}, {g.node_names[b]!r})")
    value = pmi_from_counts(g.cooccur_count(a, b), g.num_edges, da, db)
    memo[key] = value
    return value


def pmi_from_counts(count: int, total: int, deg_a: int, deg_b: int) -> float:
    if count <= 0:
        return -PMI_CLAMP
    raw = math.log(count * total / (deg_a * deg_b))
    return min(PMI_CLAMP, max(-PMI_CLAMP, raw))


def local_mi(g: HeteroGraph, p: PathInstance) -> float:
    """Mean PMI over consecutive node pairs of ``p``."""
    nodes = p.nodes
    return sum(pmi(g, a, b) for a, b in zip(nodes, nodes[1:])) / (len(nodes) - 1)


def score_path(p: PathInstance, schema_freq: dict[str, int], total_candidates: int, g: HeteroGraph, alpha: float = 0.5) -> float:
    if total_candidates < 1:
        raise ValueError("total_candidates must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    freq = schema_freq.get(p.schema, 0) / total_candidates
    mi = (local_mi(g, p) + PMI_CLAMP) / (2 * PMI_CLAMP)
    return alpha * freq + (1.0 - alpha) * mi


def score_candidates(g: HeteroGraph, candidates: Sequence[PathInstance], alpha: float = 0.5) -> list[PathInstance]:
    freq: dict[str, int] = {}
    for p in candidates:
        freq[p.schema] = freq.get(p.schema, 0) + 1
    n = len(candidates)
    return [PathInstance(p.nodes, p.relations, p.schema, score_path(p, freq, n, g, alpha)) for p in candidates]


def _rank_key(p: PathInstance):
    return (-p.score, len(p.nodes), p.nodes, p.relations)


def select_paths(candidates: Sequence[PathInstance], K: int, user: int | None = None, item: int | None = None) -> PathSet:
    """Top-``K`` candidates by score; ties go to shorter, then lexicographically smaller paths."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if candidates:
        user = candidates[0].nodes[0] if user is None else user
        item = candidates[0].nodes[-1] if item is None else item
    best = sorted(candidates, key=_rank_key)[:K]
    return PathSet(user=-1 if user is None else user, item=-1 if item is None else item, paths=tuple(best))


def build_path_set(
    g: HeteroGraph,
    u: int,
    i: int,
    schemas: Sequence[MetaPathSchema],
    cfg: PathConfig = PathConfig(),
    mask_target: bool = False,
) -> PathSet:
    """Enumerate, score and screen the paths for one pair."""
    usable = cfg.usable(schemas)
    candidates = enumerate_paths(g, u, i, usable, cfg.cap_per_schema, mask_target=mask_target)
    scored = score_candidates(g, candidates, cfg.alpha)
    return select_paths(scored, cfg.K, user=u, item=i)


_worker_state: dict = {}


def _worker_init(g, schemas, cfg, mask_target):
    _worker_state.update(g=g, schemas=schemas, cfg=cfg, mask=mask_target)


def _worker_build(pairs):
    s = _worker_state
    return [build_path_set(s["g"], u, i, s["schemas"], s["cfg"], s["mask"]) for u, i in pairs]


class PathCache:
    """Memoised :func:`build_path_set` for one graph and configuration.

    ``workers > 1`` fans enumeration out to a process pool.  Results are
    merged in request order, so the cache contents do not depend on the
    worker count.
    """

    parallel_threshold = 256

    def __init__(self, g: HeteroGraph, schemas: Sequence[MetaPathSchema], cfg: PathConfig = PathConfig(), mask_target: bool = True, workers: int = 1):
        self.g = g
        self.schemas = list(schemas)
        self.cfg = cfg
        self.mask_target = mask_target
        self.workers = max(1, int(workers or 1))
        self._store: dict[tuple[int, int], PathSet] = {}
        self._pool = None

    def __len__(self) -> int:
        return len(self._store)

    def get(self, u: int, i: int) -> PathSet:
        key = (u, i)
        ps = self._store.get(key)
        if ps is None:
            ps = build_path_set(self.g, u, i, self.schemas, self.cfg, self.mask_target)
            self._store[key] = ps
        return ps

    def fill(self, pairs) -> None:
        missing = [p for p in dict.fromkeys(pairs) if p not in self._store]
        if not missing:
            return
        if self.workers == 1 or len(missing) < self.parallel_threshold:
            for u, i in missing:
                self._store[(u, i)] = build_path_set(self.g, u, i, self.schemas, self.cfg, self.mask_target)
            return
        pool = self._get_pool()
        size = max(1, len(missing) // (self.workers * 4))
        chunks = [missing[k : k + size] for k in range(0, len(missing), size)]
        for chunk, result in zip(chunks, pool.map(_worker_build, chunks)):
            for key, ps in zip(chunk, result):
                self._store[key] = ps

    def many(self, pairs) -> list[PathSet]:
        pairs = list(pairs)
        self.fill(pairs)
        return [self._store[p] for p in pairs]

    def _get_pool(self):
        if self._pool is None:
            from concurrent.futures import ProcessPoolExecutor

            self._pool = ProcessPoolExecutor(
                max_workers=self.workers,
                initializer=_worker_init,
                initargs=(self.g, self.schemas, self.cfg, self.mask_target),
            )
        return self._pool

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
