import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hinpath.data import (
    DEFAULT_METAPATHS,
    Dataset,
    InteractionRecord,
    SynthConfig,
    default_metapaths_json,
    generate_synthetic,
    interactions_by_user,
    load_dataset,
    load_dir,
    parse_metapath_config,
    synthesize,
    write_dataset,
)
from hinpath.errors import ConfigInvalid, MissingFile, ParseError, SchemaInvalid, TypeViolation
from hinpath.graph import build_graph


def write(tmp_path, nodes="", edges="", inter=""):
    for name, text in (("nodes.tsv", nodes), ("edges.tsv", edges), ("interactions.tsv", inter)):
        (tmp_path / name).write_text(text)
    return tmp_path / "nodes.tsv", tmp_path / "edges.tsv", tmp_path / "interactions.tsv"


NODES = "u1\tuser\ni1\titem\ni2\titem\nc1\tcategory\n"


class TestLoad:
    def test_empty_interactions(self, tmp_path):
        ds = load_dataset(*write(tmp_path, NODES, "i1\tbelongs_to\tc1\n", ""))
        assert ds.interactions == []
        g = build_graph(ds.nodes, ds.edges)
        assert g.num_nodes == 4 and g.num_edges == 1

    def test_malformed_line(self, tmp_path):
        paths = write(tmp_path, NODES, "", "u1\ti1\t5\nu1\t\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(*paths)
        assert exc.value.line_no == 2
        assert "2" in str(exc.value)

    @pytest.mark.parametrize(
        "inter,fragment",
        [("u1\ti1\tnoon\n", "timestamp"), ("u1\ti1\t-3\n", "negative"), ("u1\ti1\t3\tx\n", "weight"), ("u1\ti1\t3\nu1\ti1\t3\n", "duplicate")],
    )
    def test_bad_interactions(self, tmp_path, inter, fragment):
        with pytest.raises(ParseError, match=fragment):
            load_dataset(*write(tmp_path, NODES, "", inter))

    def test_type_violation(self, tmp_path):
        with pytest.raises(TypeViolation):
            load_dataset(*write(tmp_path, NODES, "", "i1\ti2\t3\n"))
        with pytest.raises(TypeViolation):
            load_dataset(*write(tmp_path, NODES, "", "u1\tc1\t3\n"))

    def test_edges_checked(self, tmp_path):
        with pytest.raises(ParseError, match="undeclared"):
            load_dataset(*write(tmp_path, NODES, "i1\tbelongs_to\tc9\n", ""))
        with pytest.raises(ParseError, match="self-loop"):
            load_dataset(*write(tmp_path, NODES, "i1\tbelongs_to\ti1\n", ""))

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFile):
            load_dataset(tmp_path / "a", tmp_path / "b", tmp_path / "c")

    def test_comments_and_crlf(self, tmp_path):
        ds = load_dataset(*write(tmp_path, "# header\r\nu1\tuser\r\ni1\titem\r\n", "", "u1\ti1\t1\t0.5\r\n"))
        assert ds.interactions == [InteractionRecord("u1", "i1", 1, 0.5)]


names = st.text(alphabet="abcdefgh0123456789_", min_size=1, max_size=6)


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(names, min_size=2, max_size=8, unique=True),
        st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 10**9), st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False))), max_size=20),
    )
    def test_identity(self, tmp_path_factory, base, raw):
        users = ["u_" + b for b in base]
        items = ["i_" + b for b in base]
        nodes = [(u, "user") for u in users] + [(i, "item") for i in items]
        recs = list(
            {
                (users[a % len(users)], items[b % len(items)], t): InteractionRecord(users[a % len(users)], items[b % len(items)], t, w)
                for a, b, t, w in raw
            }.values()
        )
        edges = [(users[0], "follows", users[1])]
        ds = Dataset(nodes, edges, recs)
        d = tmp_path_factory.mktemp("rt")
        write_dataset(d, ds)
        back = load_dir(d)
        assert back.nodes == nodes and back.edges == edges and back.interactions == recs


class TestMetapaths:
    def test_two_node(self):
        g = build_graph([("u", "user"), ("i", "item")], [("u", "interacts", "i")])
        (s,) = parse_metapath_config(json.dumps([{"name": "ui", "sequence": ["user", "interacts", "item"]}]), g)
        assert s.length == 2

    def test_ends_at_category(self):
        g = build_graph([("u", "user"), ("i", "item"), ("c", "category")], [("u", "interacts", "i"), ("i", "belongs_to", "c")])
        with pytest.raises(SchemaInvalid, match="'item'"):
            parse_metapath_config(json.dumps([{"name": "x", "sequence": ["user", "interacts", "item", "belongs_to", "category"]}]), g)

    def test_closed_schemas_parse(self):
        ds = synthesize(SynthConfig(n_users=20, n_items=40, n_categories=4, n_brands=4, interactions_per_user=5))
        edges = ds.edges + [(r.user, "interacts", r.item) for r in ds.interactions]
        g = build_graph(ds.nodes, edges)
        schemas = parse_metapath_config(default_metapaths_json(), g)
        names = [s.name for s in schemas]
        for want in ("user-item-category-item", "user-item-brand-item", "user-user-item"):
            assert want in names
        assert names == [s["name"] for s in DEFAULT_METAPATHS]

    @pytest.mark.parametrize(
        "text",
        ["{", json.dumps({"name": "x"}), json.dumps([{"name": "x"}]), json.dumps([{"name": 1, "sequence": []}]),
         json.dumps([{"name": "a", "sequence": ["user", "interacts", "item"]}] * 2)],
    )
    def test_bad_config(self, text):
        g = build_graph([("u", "user"), ("i", "item")], [("u", "interacts", "i")])
        with pytest.raises(SchemaInvalid):
            parse_metapath_config(text, g)


class TestSynthetic:
    def test_defaults(self):
        c = SynthConfig()
        assert (c.n_users, c.n_items, c.n_categories, c.n_brands, c.interactions_per_user, c.signal_strength, c.signal_hops) == (
            300, 600, 20, 15, 20, 0.8, 3,
        )

    def test_structure(self):
        cfg = SynthConfig(n_users=40, n_items=80, n_categories=6, n_brands=5, interactions_per_user=8, seed=2)
        ds = synthesize(cfg)
        types = dict(ds.nodes)
        assert Counter(types.values()) == {"user": 40, "item": 80, "category": 6, "brand": 5}
        cats = Counter(a for a, r, _ in ds.edges if r == "belongs_to")
        brands = Counter(a for a, r, _ in ds.edges if r == "has_brand")
        assert set(cats.values()) == {1} and len(cats) == 80
        assert set(brands.values()) == {1} and len(brands) == 80
        follows = Counter(a for a, r, _ in ds.edges if r == "follows")
        assert set(follows.values()) == {cfg.follows_per_user}
        for u, recs in interactions_by_user(ds.interactions).items():
            ts = [r.timestamp for r in recs]
            assert len(recs) == 8 and ts == sorted(ts) and len(set(ts)) == len(ts)
            assert len({r.item for r in recs}) == 8
        keys = [(r.user, r.item, r.timestamp) for r in ds.interactions]
        assert len(keys) == len(set(keys))

    def test_uniform_without_signal(self):
        cfg = SynthConfig(n_users=300, n_items=100, interactions_per_user=20, signal_strength=0.0, seed=1)
        ds = synthesize(cfg)
        counts = Counter(r.item for r in ds.interactions)
        obs = np.array([counts.get(f"i{k:04d}", 0) for k in range(100)])
        expected = len(ds.interactions) / 100
        chi2 = float(((obs - expected) ** 2 / expected).sum())
        dof = 99
        assert chi2 < dof + 3 * math.sqrt(2 * dof)

    def test_full_signal_shares_category(self):
        cfg = SynthConfig(n_users=100, n_items=300, n_categories=10, interactions_per_user=15, signal_strength=1.0, signal_hops=3, seed=3)
        ds = synthesize(cfg)
        cat = {a: b for a, r, b in ds.edges if r == "belongs_to"}
        total = shared = 0
        for recs in interactions_by_user(ds.interactions).values():
            seen = set()
            for k, r in enumerate(recs):
                if k:
                    total += 1
                    shared += cat[r.item] in seen
                seen.add(cat[r.item])
        assert shared / total >= 0.95

    @pytest.mark.parametrize("hops", [2, 4])
    def test_other_hops_reachable(self, hops):
        cfg = SynthConfig(n_users=60, n_items=200, n_categories=8, interactions_per_user=10, signal_strength=1.0, signal_hops=hops, seed=5)
        ds = synthesize(cfg)
        assert len(ds.interactions) == 600

    def test_same_seed_same_bytes(self, tmp_path):
        cfg = SynthConfig(n_users=20, n_items=40, n_categories=4, n_brands=3, interactions_per_user=5, seed=9)
        generate_synthetic(cfg, tmp_path / "a")
        generate_synthetic(cfg, tmp_path / "b")
        for name in ("nodes.tsv", "edges.tsv", "interactions.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        other = synthesize(SynthConfig(n_users=20, n_items=40, n_categories=4, n_brands=3, interactions_per_user=5, seed=10))
        assert other.interactions != load_dir(tmp_path / "a").interactions

    @pytest.mark.parametrize(
        "kw",
        [{"signal_strength": 1.5}, {"signal_hops": 5}, {"n_users": 0}, {"interactions_per_user": 700}, {"follows_per_user": 300}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigInvalid):
            SynthConfig(**kw).validate()

    def test_dict_round_trip(self):
        c = SynthConfig(seed=4)
        assert SynthConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ConfigInvalid):
            SynthConfig.from_dict({"bogus": 1})
