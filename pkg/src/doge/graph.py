"""Mutable Bezier graph: nodes, edges, adjacency, ages and a flat parameter view."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DuplicateEdge, GraphError, LayoutMismatch, MissingId,
                     MissingNode, NodeStillConnected, SelfLoop)
from .geometry import ControlPolygon, arc_length, build_control_polygon

NODE_FIELDS = ("x", "y")
EDGE_FIELDS = ("width", "alpha0", "alpha1", "d0", "d1")


@dataclass
class GraphNode:
    id: int
    position: np.ndarray
    age: int = 0


@dataclass
class BezierEdgeRec:
    id: int
    a: int
    b: int
    width: float = 4.0
    alpha0: float = 1.0 / 3.0
    alpha1: float = 2.0 / 3.0
    d0: float = 0.0
    d1: float = 0.0
    age: int = 0

    @property
    def endpoints(self):
        return self.a, self.b

    def other(self, node_id: int) -> int:
        return self.b if node_id == self.a else self.a


@dataclass
class EdgeParams:
    width: float = 4.0
    alpha0: float = 1.0 / 3.0
    alpha1: float = 2.0 / 3.0
    d0: float = 0.0
    d1: float = 0.0


@dataclass(frozen=True)
class ParamLayout:
    """Where each scalar of the flat parameter vector lives.

    Nodes come first (sorted by id, ``x`` then ``y``), then edges sorted by id
    with ``EDGE_FIELDS`` order.
    """

    node_ids: tuple
    edge_ids: tuple
    node_index: dict = field(compare=False, hash=False)
    edge_index: dict = field(compare=False, hash=False)

    @classmethod
    def build(cls, node_ids, edge_ids) -> "ParamLayout":
        node_ids = tuple(sorted(node_ids))
        edge_ids = tuple(sorted(edge_ids))
        node_index = {nid: 2 * k for k, nid in enumerate(node_ids)}
        base = 2 * len(node_ids)
        edge_index = {eid: base + 5 * k for k, eid in enumerate(edge_ids)}
        return cls(node_ids, edge_ids, node_index, edge_index)

    @property
    def size(self) -> int:
        return 2 * len(self.node_ids) + 5 * len(self.edge_ids)

    def keys(self):
        for nid in self.node_ids:
            for f in NODE_FIELDS:
                yield ("node", nid, f)
        for eid in self.edge_ids:
            for f in EDGE_FIELDS:
                yield ("edge", eid, f)

    def field_slice(self, name: str) -> np.ndarray:
        """Indices of every scalar holding edge field ``name``."""
        off = EDGE_FIELDS.index(name)
        return np.array([self.edge_index[e] + off for e in self.edge_ids], dtype=int)


class BezierGraph:
    """Undirected graph whose edges carry reparameterized cubic curves."""

    def __init__(self, meters_per_pixel: float = 1.0):
        self.meters_per_pixel = float(meters_per_pixel)
        self.nodes: dict[int, GraphNode] = {}
        self.edges: dict[int, BezierEdgeRec] = {}
        self.adjacency: dict[int, list[int]] = {}
        self._next_node = 0
        self._next_edge = 0

    # ------------------------------------------------------------------ basics
    def __repr__(self):
        return f"BezierGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    def copy(self) -> "BezierGraph":
        return copy.deepcopy(self)

    def degree(self, node_id: int) -> int:
        return len(self.adjacency[node_id])

    def position(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].position

    def add_node(self, position, age: int = 0) -> int:
        pos = np.array(position, dtype=float).reshape(2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("node position must be finite")
        nid = self._next_node
        self._next_node += 1
        self.nodes[nid] = GraphNode(nid, pos, int(age))
        self.adjacency[nid] = []
        return nid

    def find_edge(self, i: int, j: int) -> int | None:
        for eid in self.adjacency.get(i, ()):
            if self.edges[eid].other(i) == j:
                return eid
        return None

    def add_edge(self, i: int, j: int, init: EdgeParams | None = None, age: int = 0) -> int:
        if i not in self.nodes:
            raise MissingNode(i)
        if j not in self.nodes:
            raise MissingNode(j)
        if i == j:
            raise SelfLoop(f"edge would loop on node {i}")
        if self.find_edge(i, j) is not None:
            raise DuplicateEdge(f"nodes {i} and {j} are already connected")
        p = init or EdgeParams()
        eid = self._next_edge
        self._next_edge += 1
        self.edges[eid] = BezierEdgeRec(eid, i, j, float(p.width), float(p.alpha0),
                                        float(p.alpha1), float(p.d0), float(p.d1), int(age))
        self.adjacency[i].append(eid)
        self.adjacency[j].append(eid)
        return eid

    def remove_edge(self, edge_id: int) -> None:
        if edge_id not in self.edges:
            raise MissingId(edge_id)
        e = self.edges.pop(edge_id)
        self.adjacency[e.a].remove(edge_id)
        self.adjacency[e.b].remove(edge_id)

    def remove_node(self, node_id: int) -> None:
        if node_id not in self.nodes:
            raise MissingId(node_id)
        if self.adjacency[node_id]:
            raise NodeStillConnected(f"node {node_id} has degree {self.degree(node_id)}")
        del self.nodes[node_id]
        del self.adjacency[node_id]

    def edge_params(self, edge_id: int) -> EdgeParams:
        e = self.edges[edge_id]
        return EdgeParams(e.width, e.alpha0, e.alpha1, e.d0, e.d1)

    def control_polygon(self, edge_id: int) -> ControlPolygon:
        e = self.edges[edge_id]
        return build_control_polygon(self.nodes[e.a].position, self.nodes[e.b].position,
                                     e.alpha0, e.alpha1, e.d0, e.d1)

    def chord_length(self, edge_id: int) -> float:
        e = self.edges[edge_id]
        return float(math.hypot(*(self.nodes[e.b].position - self.nodes[e.a].position)))

    def edge_length(self, edge_id: int) -> float:
        return arc_length(self.control_polygon(edge_id))

    def tick_ages(self) -> None:
        for n in self.nodes.values():
            n.age += 1
        for e in self.edges.values():
            e.age += 1

    def validate(self) -> None:
        """Raise :class:`GraphError` if adjacency and edge records disagree."""
        if set(self.adjacency) != set(self.nodes):
            raise GraphError("adjacency keys differ from node ids")
        expected = {nid: [] for nid in self.nodes}
        seen = set()
        for eid, e in self.edges.items():
            if e.a == e.b:
                raise GraphError(f"edge {eid} is a self-loop")
            if e.a not in self.nodes or e.b not in self.nodes:
                raise GraphError(f"edge {eid} references a missing node")
            key = frozenset((e.a, e.b))
            if key in seen:
                raise GraphError(f"edge {eid} duplicates another edge")
            seen.add(key)
            expected[e.a].append(eid)
            expected[e.b].append(eid)
        for nid, lst in self.adjacency.items():
            if sorted(lst) != sorted(expected[nid]):
                raise GraphError(f"adjacency of node {nid} is inconsistent")

    # -------------------------------------------------------------- parameters
    def layout(self) -> ParamLayout:
        return ParamLayout.build(self.nodes, self.edges)

    def flatten_params(self):
        layout = self.layout()
        x = np.empty(layout.size)
        for nid in layout.node_ids:
            k = layout.node_index[nid]
            x[k:k + 2] = self.nodes[nid].position
        for eid in layout.edge_ids:
            k = layout.edge_index[eid]
            e = self.edges[eid]
            x[k:k + 5] = (e.width, e.alpha0, e.alpha1, e.d0, e.d1)
        return x, layout

    def unflatten_params(self, x, layout: ParamLayout) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (layout.size,) or layout.node_ids != tuple(sorted(self.nodes)) \
                or layout.edge_ids != tuple(sorted(self.edges)):
            raise LayoutMismatch("parameter vector does not match the graph")
        for nid in layout.node_ids:
            k = layout.node_index[nid]
            self.nodes[nid].position = x[k:k + 2].copy()
        for eid in layout.edge_ids:
            k = layout.edge_index[eid]
            e = self.edges[eid]
            e.width, e.alpha0, e.alpha1, e.d0, e.d1 = (float(v) for v in x[k:k + 5])

    # ----------------------------------------------------------------- JSON I/O
    def to_dict(self) -> dict:
        return {
            "meters_per_pixel": self.meters_per_pixel,
            "nodes": [{"id": n.id, "x": float(n.position[0]), "y": float(n.position[1])}
                      for n in sorted(self.nodes.values(), key=lambda n: n.id)],
            "edges": [{"id": e.id, "a": e.a, "b": e.b, "width": e.width, "alpha0": e.alpha0,
                       "alpha1": e.alpha1, "d0": e.d0, "d1": e.d1}
                      for e in sorted(self.edges.values(), key=lambda e: e.id)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BezierGraph":
        g = cls(data.get("meters_per_pixel", 1.0))
        for n in data["nodes"]:
            nid = int(n["id"])
            g.nodes[nid] = GraphNode(nid, np.array([n["x"], n["y"]], dtype=float))
            g.adjacency[nid] = []
        for e in data["edges"]:
            eid, a, b = int(e["id"]), int(e["a"]), int(e["b"])
            if a == b:
                raise SelfLoop(f"edge {eid} loops on node {a}")
            if a not in g.nodes or b not in g.nodes:
                raise MissingNode(f"edge {eid} references a missing node")
            g.edges[eid] = BezierEdgeRec(eid, a, b, float(e["width"]), float(e["alpha0"]),
                                         float(e["alpha1"]), float(e["d0"]), float(e["d1"]))
            g.adjacency[a].append(eid)
            g.adjacency[b].append(eid)
        g._next_node = max(g.nodes, default=-1) + 1
        g._next_edge = max(g.edges, default=-1) + 1
        g.validate()
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "BezierGraph":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BezierGraph":
        with open(path) as fh:
            return cls.from_json(fh.read())
