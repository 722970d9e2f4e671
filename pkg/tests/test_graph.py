import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxwl.graph import (Context, ContextualGraph, GraphFormatError, GraphValidationError, neighbors, parse_graph,
                         read_graphs, serialize_graph, write_graphs)

from conftest import UU, random_graph

GEINIMI = json.dumps({
    "id": "geinimi", "y": 1, "t": 0, "family": "geinimi",
    "nodes": [{"id": 0, "label": "getLatitude", "ctx": ["user-unaware"]},
              {"id": 1, "label": "getLongitude", "ctx": ["user-unaware"]},
              {"id": 2, "label": "writeBytes", "ctx": ["user-unaware"]}],
    "edges": [[0, 2], [1, 2]],
})


def test_parse_geinimi_fragment():
    g = parse_graph(GEINIMI)
    assert len(g.nodes) == 3 and len(g.edges) == 2
    assert g.graph_id == "geinimi" and g.y == 1 and g.family == "geinimi"
    assert all(n.contexts == frozenset({UU}) for n in g.nodes)


def test_empty_node_list_rejected():
    rec = {"id": "x", "y": None, "t": 0, "family": None, "nodes": [], "edges": []}
    with pytest.raises(GraphValidationError):
        parse_graph(json.dumps(rec))


def test_dangling_edge_names_missing_id():
    rec = json.loads(GEINIMI)
    rec["edges"].append([0, 5])
    with pytest.raises(GraphValidationError, match="5"):
        parse_graph(json.dumps(rec), lineno=7)
    try:
        parse_graph(json.dumps(rec), lineno=7)
    except GraphValidationError as exc:
        assert exc.lineno == 7 and "line 7" in str(exc)


def test_empty_context_set_rejected():
    rec = json.loads(GEINIMI)
    rec["nodes"][0]["ctx"] = []
    with pytest.raises(GraphValidationError, match="context"):
        parse_graph(json.dumps(rec))


@pytest.mark.parametrize("mutate", [
    lambda r: r["edges"].append([0, 0]),                          # self-loop
    lambda r: r["edges"].append([0, 2]),                          # duplicate edge
    lambda r: r["nodes"].append(dict(r["nodes"][0])),             # duplicate node id
    lambda r: r["nodes"][0].update(label=""),                     # empty label
    lambda r: r["nodes"][0].update(label="a{b"),                  # reserved char
    lambda r: r.update(y=0),                                      # bad class label
    lambda r: r.update(t=-1),                                     # negative day
    lambda r: r.pop("nodes"),                                     # missing field
])
def test_invariant_violations_rejected(mutate):
    rec = json.loads(GEINIMI)
    mutate(rec)
    with pytest.raises(GraphFormatError):
        parse_graph(json.dumps(rec))


def test_malformed_json_reports_line():
    with pytest.raises(GraphFormatError, match="line 3"):
        parse_graph("{not json", lineno=3)


def test_contexts_deduplicated_and_builtin_canonical():
    rec = json.loads(GEINIMI)
    rec["nodes"][0]["ctx"] = ["user-unaware", "user-unaware", "custom-trigger"]
    g = parse_graph(json.dumps(rec))
    assert g.node(0).sorted_contexts == ("custom-trigger", "user-unaware")
    assert Context.USER_AWARE == "user-aware" and Context.USER_AWARE != Context.USER_UNAWARE


def test_neighbors_examples(geinimi):
    assert neighbors(geinimi, 0) == [2]
    assert neighbors(geinimi, 2) == []
    g = ContextualGraph.build([(0, "a", [UU]), (1, "b", [UU])], [(0, 1), (1, 0)])
    assert neighbors(g, 0) == [1] and neighbors(g, 1) == [0]
    with pytest.raises(KeyError):
        neighbors(geinimi, 42)


def test_neighbors_sorted_regardless_of_insertion():
    nodes = [(i, "x", [UU]) for i in range(5)]
    a = ContextualGraph.build(nodes, [(0, 4), (0, 1), (0, 3)])
    b = ContextualGraph.build(nodes[::-1], [(0, 3), (0, 4), (0, 1)])
    assert neighbors(a, 0) == neighbors(b, 0) == [1, 3, 4]
    assert a == b


def test_round_trip_random(rng):
    for _ in range(200):
        g = random_graph(rng).with_meta(graph_id="g", y=-1, t=3, family="f")
        assert parse_graph(serialize_graph(g)) == g


def test_file_round_trip(tmp_path, rng):
    gs = [random_graph(rng).with_meta(graph_id=f"g{i}", y=1, t=i) for i in range(20)]
    path = tmp_path / "g.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        write_graphs(gs, fh)
    assert read_graphs(path) == gs


junk = st.recursive(
    st.none() | st.booleans() | st.integers(-3, 6) | st.text(max_size=4),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(
        st.sampled_from(["id", "y", "t", "family", "nodes", "edges", "label", "ctx"]), inner, max_size=6),
    max_leaves=20,
)


@settings(max_examples=400, deadline=None)
@given(junk)
def test_fuzz_validation_totality(obj):
    try:
        g = parse_graph(json.dumps(obj))
    except GraphFormatError:
        return
    ids = {n.id for n in g.nodes}
    assert g.nodes and len(ids) == len(g.nodes)
    assert all(n.label and n.contexts for n in g.nodes)
    assert len(set(g.edges)) == len(g.edges)
    assert all(s in ids and d in ids and s != d for s, d in g.edges)


def test_graph_is_immutable(geinimi):
    with pytest.raises(Exception):
        geinimi.nodes = ()
    assert hash(geinimi) == hash(parse_graph(serialize_graph(geinimi)))
    assert isinstance(np.array(geinimi.node_ids).sum(), np.integer)
