"""Typed heterogeneous graph with per-relation adjacency.

Nodes and relations are named by strings at the boundary and by dense
integers internally.  Every relation ``R`` is paired with an explicit inverse
``R_inv`` so traversals can walk edges in either direction.  Relation id 0 is
reserved for the END marker consumed by the path encoder; it never labels an
edge.
"""

from __future__ import annotations

from bisect import bisect_left
from collections import defaultdict
from typing import Iterable, Sequence

from .errors import DuplicateNode, EmptyGraph, GraphError, InvalidNode, SelfLoop, UnknownNode

END = 0
END_NAME = "<end>"
INV_SUFFIX = "_inv"


class Vocab:
    """Bijective string <-> dense id table."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        if name in self._ids:
            return self._ids[name]
        self._ids[name] = len(self._names)
        self._names.append(name)
        return self._ids[name]

    def id(self, name: str) -> int:
        return self._ids[name]

    def get(self, name: str, default=None):
        return self._ids.get(name, default)

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._names == other._names


class HeteroGraph:
    """Immutable typed graph; build it with :func:`build_graph`."""

    def __init__(self, node_names, node_types, type_vocab, rel_vocab, adjacency, degree, num_edges, signatures, edges):
        self.node_names: list[str] = node_names
        self.node_index: dict[str, int] = {n: i for i, n in enumerate(node_names)}
        self.node_type: list[int] = node_types
        self.types: Vocab = type_vocab
        self.relations: Vocab = rel_vocab
        self._adj: list[dict[int, tuple[int, ...]]] = adjacency
        self.degree: list[int] = degree
        self.num_edges: int = num_edges
        # relation id -> set of (src_type, dst_type)
        self.signatures: dict[int, frozenset[tuple[int, int]]] = signatures
        self._edges: list[tuple[int, int, int]] = edges
        # derived statistics cache; filled lazily, never changes graph content
        self._pmi_memo: dict[tuple[int, int], float] = {}

    @property
    def num_nodes(self) -> int:
        return len(self.node_names)

    @property
    def num_relations(self) -> int:
        """Relation table size, END included."""
        return len(self.relations)

    def node_id(self, name: str) -> int:
        try:
            return self.node_index[name]
        except KeyError:
            raise UnknownNode(f"unknown node {name!r}") from None

    def type_of(self, v: int) -> str:
        self._check(v)
        return self.types.name(self.node_type[v])

    def inverse(self, r: int) -> int:
        if r == END:
            raise GraphError("END has no inverse")
        return r + 1 if r % 2 == 1 else r - 1

    def is_inverse(self, r: int) -> bool:
        return r != END and r % 2 == 0

    def base_relation(self, r: int) -> int:
        return r if r % 2 == 1 else r - 1

    def _check(self, v: int) -> None:
        if not (isinstance(v, int) or hasattr(v, "__index__")) or not 0 <= v < len(self.node_names):
            raise InvalidNode(f"invalid node id {v!r}")

    def neighbors(self, v: int, r: int) -> tuple[int, ...]:
        """Sorted, duplicate-free neighbours of ``v`` along relation ``r``."""
        self._check(v)
        return self._adj[v].get(r, ())

    def relations_of(self, v: int) -> Sequence[int]:
        self._check(v)
        return sorted(self._adj[v])

    def has_edge(self, a: int, r: int, b: int) -> bool:
        nbrs = self._adj[a].get(r, ())
        k = bisect_left(nbrs, b)
        return k < len(nbrs) and nbrs[k] == b

    def cooccur_count(self, a: int, b: int) -> int:
        """Number of distinct relations linking ``a`` and ``b``, either direction."""
        self._check(a)
        self._check(b)
        if self.degree[a] > self.degree[b]:
            a, b = b, a
        bases = set()
        for r, nbrs in self._adj[a].items():
            k = bisect_left(nbrs, b)
            if k < len(nbrs) and nbrs[k] == b:
                bases.add(self.base_relation(r))
        return len(bases)

    def nodes_of_type(self, type_name: str) -> list[int]:
        t = self.types.get(type_name)
        if t is None:
            return []
        return [v for v, tv in enumerate(self.node_type) if tv == t]

    def edges(self) -> list[tuple[int, int, int]]:
        """Forward edges ``(src, relation, dst)`` in ascending order."""
        return list(self._edges)

    def dump(self) -> list[tuple[str, str, str]]:
        names, rels = self.node_names, self.relations
        return [(names[a], rels.name(r), names[b]) for a, r, b in self._edges]

    def __repr__(self) -> str:
        return f"HeteroGraph(nodes={self.num_nodes}, edges={self.num_edges}, relations={len(self.relations) // 2})"


def relation_vocab(base_names: Iterable[str]) -> Vocab:
    """END at 0, then each base relation followed by its inverse (odd = forward)."""
    vocab = Vocab([END_NAME])
    for name in sorted(set(base_names)):
        vocab.add(name)
        inv = name + INV_SUFFIX
        if inv in vocab:
            raise GraphError(f"relation name clash on {inv!r}")
        vocab.add(inv)
    return vocab


def build_graph(
    nodes: Sequence[tuple[str, str]],
    edges: Iterable[tuple[str, str, str]],
    relations: Iterable[str] | None = None,
) -> HeteroGraph:
    """Build an immutable graph from named nodes and named edges.

    Node ids follow declaration order.  Type and relation ids are assigned
    from sorted names so graphs built over the same vocabularies agree on
    every id.  ``relations`` may pre-declare relation names that have no
    edges yet.  Repeated edges collapse to one.
    """
    if not nodes:
        raise EmptyGraph("graph has no nodes")
    names: list[str] = []
    index: dict[str, int] = {}
    for name, _ in nodes:
        if name in index:
            raise DuplicateNode(f"duplicate node {name!r}")
        index[name] = len(names)
        names.append(name)
    types = Vocab(sorted({t for _, t in nodes}))
    node_types = [types.id(t) for _, t in nodes]

    resolved = set()
    rel_names = set(relations or ())
    for src, rel, dst in edges:
        a = index.get(src)
        b = index.get(dst)
        if a is None or b is None:
            missing = src if a is None else dst
            raise UnknownNode(f"edge ({src}, {rel}, {dst}) references undeclared node {missing!r}")
        if a == b:
            raise SelfLoop(f"self-loop on {src!r} via {rel!r}")
        if rel == END_NAME:
            raise GraphError(f"relation name {END_NAME!r} is reserved")
        rel_names.add(rel)
        resolved.add((a, rel, b))
    rels = relation_vocab(rel_names)

    buckets: list[dict[int, set[int]]] = [defaultdict(set) for _ in names]
    signatures: dict[int, set[tuple[int, int]]] = defaultdict(set)
    degree = [0] * len(names)
    edge_list = []
    for a, rel, b in resolved:
        r = rels.id(rel)
        buckets[a][r].add(b)
        buckets[b][r + 1].add(a)
        degree[a] += 1
        degree[b] += 1
        signatures[r].add((node_types[a], node_types[b]))
        signatures[r + 1].add((node_types[b], node_types[a]))
        edge_list.append((a, r, b))
    edge_list.sort()
    adjacency = [{r: tuple(sorted(s)) for r, s in sorted(bucket.items())} for bucket in buckets]
    return HeteroGraph(
        node_names=names,
        node_types=node_types,
        type_vocab=types,
        rel_vocab=rels,
        adjacency=adjacency,
        degree=degree,
        num_edges=len(edge_list),
        signatures={r: frozenset(s) for r, s in signatures.items()},
        edges=edge_list,
    )
