import numpy as np
import pytest

from hinpath.data import DEFAULT_METAPATHS, parse_metapath_config
from hinpath.graph import build_graph
import json

SIGNATURES = {
    "interacts": ("user", "item"),
    "belongs_to": ("item", "category"),
    "has_brand": ("item", "brand"),
    "follows": ("user", "user"),
}


def random_typed_graph(rng, max_nodes=30, density=0.15):
    """Nodes and edges of a random graph respecting the four relation signatures."""
    n = int(rng.integers(8, max_nodes + 1))
    kinds = ["user", "item", "category", "brand"]
    types = [kinds[k] for k in rng.integers(0, 4, size=n)]
    # guarantee at least one node per required type
    types[:4] = kinds
    nodes = [(f"n{k}", t) for k, t in enumerate(types)]
    by_type = {t: [name for name, tt in nodes if tt == t] for t in kinds}
    edges = []
    for rel, (st, dt) in SIGNATURES.items():
        for a in by_type[st]:
            for b in by_type[dt]:
                if a != b and rng.random() < density:
                    edges.append((a, rel, b))
    return nodes, edges


def all_metapaths_json():
    return json.dumps(DEFAULT_METAPATHS)


@pytest.fixture
def single_path_graph():
    """u -> i1 -> c1 <- i: one user-item-category-item path."""
    nodes = [("u", "user"), ("i1", "item"), ("c1", "category"), ("i", "item")]
    edges = [("u", "interacts", "i1"), ("i1", "belongs_to", "c1"), ("i", "belongs_to", "c1")]
    return build_graph(nodes, edges, relations=["interacts", "belongs_to", "has_brand", "follows"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model_instance(rng, n_paths=None, lengths=None, d=8, h=8, k=4, n_entities=12, n_relations=7, scale=0.5):
    """Random params plus random id paths; no graph needed since the model only sees ids."""
    from hinpath import model as M
    from hinpath.paths import PathInstance

    cfg = M.ModelConfig(num_entities=n_entities, num_relations=n_relations, d=d, h=h, k=k)
    params = M.init_params(cfg, int(rng.integers(1 << 31)))
    for name in params.names():
        params.values[name][...] = rng.normal(scale=scale, size=params[name].shape)
    params.touch()
    if n_paths is None:
        n_paths = int(rng.integers(1, 9))
    paths = []
    for j in range(n_paths):
        length = int(lengths[j % len(lengths)]) if lengths is not None else int(rng.integers(2, 6))
        nodes = tuple(int(x) for x in rng.choice(n_entities, size=length, replace=False))
        rels = tuple(int(x) for x in rng.integers(1, n_relations, size=length - 1))
        paths.append(PathInstance(nodes, rels, "s"))
    return params, paths


def tiny_world():
    """One user with one positive (reached via a followee) and exactly one eligible negative."""
    from hinpath.trainer import InteractionData

    nodes = [("u", "user"), ("u2", "user"), ("i1", "item"), ("i2", "item"), ("c", "category"), ("b", "brand")]
    edges = [
        ("u", "follows", "u2"),
        ("u2", "interacts", "i1"),
        ("u", "interacts", "i1"),
        ("i1", "belongs_to", "c"),
        ("i2", "belongs_to", "c"),
        ("i1", "has_brand", "b"),
    ]
    g = build_graph(nodes, edges)
    schemas = parse_metapath_config(all_metapaths_json(), g)
    data = InteractionData(fit={0: [2]}, val={}, known={0: frozenset({2})}, items=[2, 3])
    return g, schemas, data


# criterion number -> (passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
