"""Context-annotated API dependency graphs and their JSON-lines file format.

A graph record on disk is one JSON object per line::

    {"id": "app-1", "y": 1, "t": 0, "family": null,
     "nodes": [{"id": 0, "label": "getLatitude", "ctx": ["user-unaware"]}, ...],
     "edges": [[0, 2], [1, 2]]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

# Characters used by the relabeling code to build composite labels. They are
# rejected in node labels and context names so composite labels never alias.
RESERVED_CHARS = frozenset("{}|&⊕\t\n\r")


class Context(str, Enum):
    USER_AWARE = "user-aware"
    USER_UNAWARE = "user-unaware"
    UNRESOLVED = "unresolved"

    def __str__(self):
        return self.value


BUILTIN_CONTEXTS = tuple(c.value for c in Context)


class GraphFormatError(ValueError):
    """Raised for malformed graph records; carries the input line number."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class GraphValidationError(GraphFormatError):
    pass


def _check_token(kind, value, lineno=None):
    if not isinstance(value, str) or not value:
        raise GraphValidationError(f"{kind} must be a non-empty string, got {value!r}", lineno)
    bad = RESERVED_CHARS.intersection(value)
    if bad:
        raise GraphValidationError(
            f"{kind} {value!r} contains reserved character(s) {sorted(bad)!r}", lineno)
    return value


def normalize_context(value, lineno=None) -> str:
    if isinstance(value, Context):
        return value.value
    return _check_token("context", value, lineno)


@dataclass(frozen=True)
class Node:
    id: int
    label: str
    contexts: frozenset

    @property
    def sorted_contexts(self) -> tuple:
        return tuple(sorted(self.contexts))


@dataclass(frozen=True, eq=False)
class ContextualGraph:
    """Immutable directed node-labelled graph with per-node context sets.

    Nodes are kept sorted by id and edges sorted, so two graphs built from the
    same records in a different order compare equal.
    """

    nodes: tuple
    edges: tuple
    graph_id: str = ""
    y: int | None = None
    t: int = 0
    family: str | None = None
    _index: dict = field(init=False, repr=False, compare=False)
    _succ: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        index = {}
        for pos, n in enumerate(nodes):
            if n.id in index:
                raise GraphValidationError(f"duplicate node id {n.id}")
            index[n.id] = pos
        edges = tuple(sorted(self.edges))
        if len(set(edges)) != len(edges):
            dup = next(e for i, e in enumerate(edges[1:]) if e == edges[i])
            raise GraphValidationError(f"duplicate edge {list(dup)}")
        succ = [[] for _ in nodes]
        for src, dst in edges:
            for end in (src, dst):
                if end not in index:
                    raise GraphValidationError(f"edge ({src}, {dst}) refers to missing node id {end}")
            if src == dst:
                raise GraphValidationError(f"self-loop on node id {src}")
            succ[index[src]].append(index[dst])
        if self.y not in (None, 1, -1):
            raise GraphValidationError(f"class label must be +1, -1 or null, got {self.y!r}")
        if not isinstance(self.t, int) or self.t < 0:
            raise GraphValidationError(f"timestamp must be a non-negative integer, got {self.t!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_index", index)
        # successors as positions; edges are sorted so these are sorted by node id
        object.__setattr__(self, "_succ", tuple(tuple(s) for s in succ))

    @classmethod
    def build(cls, nodes, edges, graph_id="", y=None, t=0, family=None):
        """Build from ``(id, label, contexts)`` triples and ``(src, dst)`` pairs."""
        if not nodes:
            raise GraphValidationError("graph has no nodes")
        recs = []
        for nid, label, ctxs in nodes:
            if isinstance(nid, bool) or not isinstance(nid, int):
                raise GraphValidationError(f"node id must be an integer, got {nid!r}")
            _check_token("node label", label)
            if isinstance(ctxs, (str, Context)):
                ctxs = [ctxs]
            ctxs = frozenset(normalize_context(c) for c in ctxs)
            if not ctxs:
                raise GraphValidationError(f"node {nid} has an empty context set")
            recs.append(Node(nid, label, ctxs))
        return cls(tuple(recs), tuple((int(s), int(d)) for s, d in edges), graph_id, y, t, family)

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, ContextualGraph):
            return NotImplemented
        return (self.nodes, self.edges, self.graph_id, self.y, self.t, self.family) == (
            other.nodes, other.edges, other.graph_id, other.y, other.t, other.family)

    def __hash__(self):
        return hash((self.nodes, self.edges, self.graph_id))

    @property
    def node_ids(self) -> tuple:
        return tuple(n.id for n in self.nodes)

    def node(self, node_id) -> Node:
        try:
            return self.nodes[self._index[node_id]]
        except KeyError:
            raise KeyError(f"unknown node id {node_id}") from None

    def neighbors(self, node_id) -> list:
        """Out-neighbours of ``node_id`` sorted by id."""
        if node_id not in self._index:
            raise KeyError(f"unknown node id {node_id}")
        return [self.nodes[p].id for p in self._succ[self._index[node_id]]]

    def successor_positions(self) -> tuple:
        return self._succ

    def with_meta(self, **kw) -> "ContextualGraph":
        meta = dict(graph_id=self.graph_id, y=self.y, t=self.t, family=self.family)
        meta.update(kw)
        return ContextualGraph(self.nodes, self.edges, **meta)

    def to_record(self) -> dict:
        return {
            "id": self.graph_id,
            "y": self.y,
            "t": self.t,
            "family": self.family,
            "nodes": [{"id": n.id, "label": n.label, "ctx": list(n.sorted_contexts)} for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }


def neighbors(g: ContextualGraph, n: int) -> list:
    return g.neighbors(n)


def parse_graph(raw: str, lineno: int | None = None) -> ContextualGraph:
    """Parse and validate a single JSON graph record."""
    try:
        rec = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"malformed JSON ({exc.msg} at column {exc.colno})", lineno) from None
    if not isinstance(rec, dict):
        raise GraphFormatError("record must be a JSON object", lineno)
    missing = {"nodes", "edges"} - rec.keys()
    if missing:
        raise GraphFormatError(f"record lacks field(s) {sorted(missing)}", lineno)
    nodes, edges = rec["nodes"], rec["edges"]
    if not isinstance(nodes, list) or not isinstance(edges, list):
        raise GraphFormatError("'nodes' and 'edges' must be arrays", lineno)

    triples = []
    for item in nodes:
        if not isinstance(item, dict) or not {"id", "label", "ctx"} <= item.keys():
            raise GraphFormatError(f"node record {item!r} needs id, label and ctx", lineno)
        if not isinstance(item["ctx"], list):
            raise GraphFormatError(f"node {item['id']!r}: ctx must be an array", lineno)
        triples.append((item["id"], item["label"], item["ctx"]))
    pairs = []
    for e in edges:
        if (not isinstance(e, list) or len(e) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in e)):
            raise GraphFormatError(f"edge {e!r} must be a pair of integer node ids", lineno)
        pairs.append(tuple(e))

    y = rec.get("y")
    t = rec.get("t", 0)
    family = rec.get("family")
    gid = rec.get("id", "")
    if family is not None and not isinstance(family, str):
        raise GraphFormatError("family must be a string or null", lineno)
    try:
        return ContextualGraph.build(triples, pairs, graph_id=str(gid) if gid is not None else "",
                                     y=y, t=t, family=family)
    except GraphValidationError as exc:
        if lineno is None:
            raise
        raise GraphValidationError(str(exc), lineno) from None


def serialize_graph(g: ContextualGraph) -> str:
    return json.dumps(g.to_record(), ensure_ascii=False, separators=(",", ":"))


def iter_graphs(lines: Iterable[str]) -> Iterator[ContextualGraph]:
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            yield parse_graph(line, lineno)


def read_graphs(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return list(iter_graphs(fh))


def write_graphs(graphs: Iterable[ContextualGraph], fh) -> int:
    n = 0
    for g in graphs:
        fh.write(serialize_graph(g))
        fh.write("\n")
        n += 1
    return n
