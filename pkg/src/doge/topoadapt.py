"""Discrete topology operators and the age-gated pass that schedules them.

Order inside one pass: node merging and T-junction creation (after warm-up,
grid accelerated), collinear merging, pruning, and periodic road addition in
under-covered regions.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import IsEndpoint, NotCollinear, TooFar, TooYoung, WrongDegree
from .geometry import (CHORD_EPS, arc_length, bernstein, closest_point,
                       fit_curve_to_points, fit_edge_params, split_curve)
from .graph import BezierGraph, EdgeParams

log = logging.getLogger(__name__)


@dataclass
class TopoConfig:
    eps_merge: float = 4.0
    theta_collinear: float = 170.0
    min_edge_length: float = 0.6
    min_edge_width: float = 0.3
    min_unfit_area: float = 50.0
    road_add_period: int = 20
    connect_min_age: int = 15
    collinear_min_age: int = 60
    prune_grace: int = 20
    t_warmup: int = 15
    tau_seg: float = 0.5
    tau_render: float = 0.5
    init_edge_length: float = 10.0
    init_edge_width: float = 4.0
    grid_cell: float = 8.0
    enabled: bool = True

    def __post_init__(self):
        if self.eps_merge <= 0:
            raise ValueError("eps_merge must be positive")
        if not 90 < self.theta_collinear < 180:
            raise ValueError("theta_collinear must lie in (90, 180) degrees")
        for name in ("road_add_period", "connect_min_age", "collinear_min_age",
                     "prune_grace", "t_warmup"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.grid_cell < self.eps_merge:
            raise ValueError("grid_cell must be at least eps_merge")


# ---------------------------------------------------------------- spatial grid
class SpatialGrid:
    """Uniform cells over node positions and padded edge bounding boxes.

    An edge is registered in every cell its control-polygon box (padded by
    ``pad``) touches; by the convex-hull property that box contains the curve.
    """

    def __init__(self, cell_size: float, pad: float = 0.0):
        self.cell_size = float(cell_size)
        self.pad = float(pad)
        self.node_buckets: dict = defaultdict(list)
        self.edge_buckets: dict = defaultdict(list)
        self.node_cell: dict = {}

    def cell_of(self, p):
        return (int(math.floor(p[0] / self.cell_size)), int(math.floor(p[1] / self.cell_size)))

    def insert_node(self, nid, p):
        c = self.cell_of(p)
        self.node_cell[nid] = c
        self.node_buckets[c].append(nid)

    def insert_edge(self, eid, points):
        lo = points.min(axis=0) - self.pad
        hi = points.max(axis=0) + self.pad
        (i0, j0), (i1, j1) = self.cell_of(lo), self.cell_of(hi)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                self.edge_buckets[(i, j)].append(eid)

    def neighborhood(self, cell):
        i, j = cell
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                yield (i + di, j + dj)

    def node_candidates(self):
        """Unordered node pairs sharing a 3x3 neighborhood (each pair once)."""
        pairs = set()
        for nid, cell in self.node_cell.items():
            for nb in self.neighborhood(cell):
                for other in self.node_buckets.get(nb, ()):
                    if other > nid:
                        pairs.add((nid, other))
        return pairs

    def edge_candidates(self, p):
        out = set()
        for nb in self.neighborhood(self.cell_of(p)):
            out.update(self.edge_buckets.get(nb, ()))
        return out


def build_grid(g: BezierGraph, cell_size: float = 8.0, pad: float = 4.0) -> SpatialGrid:
    grid = SpatialGrid(cell_size, pad)
    for nid in sorted(g.nodes):
        grid.insert_node(nid, g.nodes[nid].position)
    for eid in sorted(g.edges):
        e = g.edges[eid]
        if g.chord_length(eid) <= CHORD_EPS:
            pts = np.array([g.nodes[e.a].position, g.nodes[e.b].position])
        else:
            pts = g.control_polygon(eid).points
        grid.insert_edge(eid, pts)
    return grid


def close_node_pairs(g: BezierGraph, eps: float, grid: SpatialGrid | None = None, nodes=None):
    """Node pairs closer than ``eps``, as ``(dist, u, v)`` sorted ascending."""
    grid = grid or build_grid(g, max(2 * eps, 1e-9), eps)
    allowed = None if nodes is None else set(nodes)
    out = []
    for u, v in grid.node_candidates():
        if allowed is not None and (u not in allowed or v not in allowed):
            continue
        d = float(np.hypot(*(g.nodes[u].position - g.nodes[v].position)))
        if d < eps:
            out.append((d, u, v))
    out.sort()
    return out


# ------------------------------------------------------------------ operators
def _resolve_duplicates(g: BezierGraph, node_id: int, lengths=None) -> list:
    """Keep only the longest edge per neighbor of ``node_id``; returns removed ids."""
    by_other = defaultdict(list)
    for eid in g.adjacency[node_id]:
        by_other[g.edges[eid].other(node_id)].append(eid)
    removed = []
    for other, eids in sorted(by_other.items()):
        if len(eids) < 2:
            continue
        ranked = sorted(eids, key=lambda k: (-_safe_length(g, k), k))
        for eid in ranked[1:]:
            g.remove_edge(eid)
            removed.append(eid)
    return removed


def _safe_length(g, eid):
    if g.chord_length(eid) <= CHORD_EPS:
        return 0.0
    return g.edge_length(eid)


def merge_nodes(g: BezierGraph, u: int, v: int, cfg: TopoConfig | None = None,
                check: bool = True) -> int:
    """Replace ``u`` and ``v`` by one node at their midpoint.

    The new node inherits every incident edge and the older of the two ages.
    Edges between ``u`` and ``v`` vanish; parallel duplicates keep the longer.
    """
    cfg = cfg or TopoConfig()
    if u == v:
        raise ValueError("cannot merge a node with itself")
    pu, pv = g.nodes[u].position, g.nodes[v].position
    if check:
        d = float(np.hypot(*(pu - pv)))
        if d >= cfg.eps_merge:
            raise TooFar(f"nodes {u},{v} are {d:.2f} m apart")
        if min(g.nodes[u].age, g.nodes[v].age) < cfg.connect_min_age:
            raise TooYoung(f"nodes {u},{v} are too young to merge")
    w = g.add_node(0.5 * (pu + pv), age=max(g.nodes[u].age, g.nodes[v].age))
    for old in (u, v):
        for eid in list(g.adjacency[old]):
            e = g.edges[eid]
            other = e.other(old)
            if other in (u, v):
                g.remove_edge(eid)
                continue
            if e.a == old:
                e.a = w
            else:
                e.b = w
            g.adjacency[old].remove(eid)
            g.adjacency[w].append(eid)
    _resolve_duplicates(g, w)
    g.remove_node(u)
    g.remove_node(v)
    return w


def split_edge(g: BezierGraph, edge_id: int, t: float):
    """Split an edge at curve parameter ``t`` by de Casteljau subdivision.

    Each half is projected back to the (alpha, d) form by least squares on 16
    samples. Returns ``(new_node, left_edge, right_edge)``; both halves and the
    node inherit the edge's age.
    """
    e = g.edges[edge_id]
    cp = g.control_polygon(edge_id)
    left, right = split_curve(cp, t)
    mid = left.p3
    if np.hypot(*(mid - cp.p0)) <= CHORD_EPS or np.hypot(*(cp.p3 - mid)) <= CHORD_EPS:
        raise IsEndpoint(f"split of edge {edge_id} at t={t:.3f} hits an endpoint")
    ts = np.linspace(0.0, 1.0, 16)
    params = []
    for half in (left, right):
        a0, a1, d0, d1, _ = fit_edge_params(bernstein(ts) @ half.points, ts, half.p0, half.p3)
        params.append(EdgeParams(e.width, a0, a1, d0, d1))
    a, b, age = e.a, e.b, e.age
    g.remove_edge(edge_id)
    s = g.add_node(mid, age=age)
    e1 = g.add_edge(a, s, params[0], age=age)
    e2 = g.add_edge(s, b, params[1], age=age)
    return s, e1, e2


def create_t_junction(g: BezierGraph, v: int, edge_id: int, cfg: TopoConfig | None = None,
                      check: bool = True):
    """Snap node ``v`` onto edge ``edge_id``: split at the closest point and merge.

    Returns ``(junction_node, left_edge, right_edge)``.
    """
    cfg = cfg or TopoConfig()
    e = g.edges[edge_id]
    if v in (e.a, e.b):
        raise IsEndpoint(f"node {v} is an endpoint of edge {edge_id}")
    t, dist = closest_point(g.control_polygon(edge_id), g.nodes[v].position)
    if check:
        if dist >= cfg.eps_merge:
            raise TooFar(f"node {v} is {dist:.2f} m from edge {edge_id}")
        if min(g.nodes[v].age, e.age) < cfg.connect_min_age:
            raise TooYoung(f"node {v} or edge {edge_id} is too young")
    s, e1, e2 = split_edge(g, edge_id, t)
    w = merge_nodes(g, s, v, cfg, check=False)
    return w, e1, e2


def continuation_angle(g: BezierGraph, node_id: int) -> float:
    """Angle (degrees) between the two edge tangents leaving a degree-2 node.

    180 means the path runs straight through the node.
    """
    if g.degree(node_id) != 2:
        raise WrongDegree(f"node {node_id} has degree {g.degree(node_id)}")
    p = g.nodes[node_id].position
    dirs = []
    for eid in sorted(g.adjacency[node_id]):
        e = g.edges[eid]
        cp = g.control_polygon(eid)
        q = cp.p1 if e.a == node_id else cp.p2
        d = q - p
        if np.hypot(*d) < CHORD_EPS:
            d = g.nodes[e.other(node_id)].position - p
        dirs.append(d / np.hypot(*d))
    return math.degrees(math.acos(float(np.clip(dirs[0] @ dirs[1], -1.0, 1.0))))


def _oriented(g, eid, start):
    cp = g.control_polygon(eid)
    return cp if g.edges[eid].a == start else cp.reversed()


def _resample(points, n):
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(target, s, points[:, 0]), np.interp(target, s, points[:, 1])], axis=1)


def merge_collinear(g: BezierGraph, v: int, cfg: TopoConfig | None = None, check: bool = True):
    """Replace a straight-through degree-2 node and its two edges by one refitted edge.

    Returns ``(new_edge_id, rms)`` where ``rms`` is the fit residual in meters.
    """
    cfg = cfg or TopoConfig()
    if g.degree(v) != 2:
        raise WrongDegree(f"node {v} has degree {g.degree(v)}")
    if check:
        if g.nodes[v].age <= cfg.collinear_min_age:
            raise TooYoung(f"node {v} is too young for collinear merging")
        angle = continuation_angle(g, v)
        if angle <= cfg.theta_collinear:
            raise NotCollinear(f"node {v} turns by {180 - angle:.1f} degrees")
    ea, eb = sorted(g.adjacency[v])
    a = g.edges[ea].other(v)
    b = g.edges[eb].other(v)
    first = _oriented(g, ea, a)
    second = _oriented(g, eb, v)
    dense = np.concatenate([bernstein(np.linspace(0, 1, 64)) @ first.points,
                            bernstein(np.linspace(0, 1, 64))[1:] @ second.points])
    samples = _resample(dense, 32)
    a0, a1, d0, d1, rms = fit_curve_to_points(samples)
    la, lb = arc_length(first), arc_length(second)
    width = (g.edges[ea].width * la + g.edges[eb].width * lb) / max(la + lb, CHORD_EPS)
    age = max(g.edges[ea].age, g.edges[eb].age)
    g.remove_edge(ea)
    g.remove_edge(eb)
    g.remove_node(v)
    existing = g.find_edge(a, b)
    new = g.add_edge(a, b, EdgeParams(width, a0, a1, d0, d1), age=age) if existing is None else None
    if new is None:
        # a parallel a-b edge already exists; keep whichever is longer
        new_len = la + lb
        if new_len > _safe_length(g, existing):
            g.remove_edge(existing)
            new = g.add_edge(a, b, EdgeParams(width, a0, a1, d0, d1), age=age)
        else:
            new = existing
    return new, rms


def prune(g: BezierGraph, cfg: TopoConfig | None = None):
    """Drop short/thin edges past their grace period, then dangling nodes.

    Edges with a degenerate chord are dropped regardless of age. Returns
    ``(removed_edges, removed_nodes)`` as lists of ``(id, position)``.
    """
    cfg = cfg or TopoConfig()
    removed_edges = []
    for eid in sorted(g.edges):
        e = g.edges[eid]
        chord = g.chord_length(eid)
        if chord <= CHORD_EPS:
            drop = True
        elif e.age > cfg.prune_grace:
            drop = e.width < cfg.min_edge_width or g.edge_length(eid) < cfg.min_edge_length
        else:
            drop = False
        if drop:
            mid = 0.5 * (g.nodes[e.a].position + g.nodes[e.b].position)
            removed_edges.append((eid, e.a, e.b, mid))
            g.remove_edge(eid)
    removed_nodes = []
    for nid in sorted(g.nodes):
        if g.degree(nid) == 0:
            removed_nodes.append((nid, g.nodes[nid].position.copy()))
            g.remove_node(nid)
    return removed_edges, removed_nodes


def unfit_mask(target, render, cfg: TopoConfig):
    return (np.asarray(target) > cfg.tau_seg) & (np.asarray(render) < cfg.tau_render)


def add_roads_at_unfit(g: BezierGraph, target, render, cfg: TopoConfig | None = None,
                       rng: np.random.Generator | None = None, meters_per_pixel: float = 1.0):
    """Seed one new edge in each large under-covered component.

    Components (8-connected) of the unfit mask with area at least
    ``min_unfit_area`` are processed largest first. Each new edge is centred
    on the component pixel nearest its centroid and aligned with the
    component's principal axis (random when the component is isotropic).
    Returns the list of ``(edge_id, node_a, node_b, center)`` added.
    """
    cfg = cfg or TopoConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    tgt = getattr(target, "data", target)
    ren = getattr(render, "data", render)
    mpp = getattr(target, "meters_per_pixel", meters_per_pixel)
    labels, n = ndimage.label(unfit_mask(tgt, ren, cfg), structure=np.ones((3, 3)))
    if n == 0:
        return []
    counts = np.bincount(labels.ravel())[1:]
    order = sorted(range(n), key=lambda k: (-counts[k], k))
    added = []
    for k in order:
        if counts[k] * mpp * mpp < cfg.min_unfit_area:
            break
        rows, cols = np.nonzero(labels == k + 1)
        pts = np.stack([(cols + 0.5) * mpp, (rows + 0.5) * mpp], axis=1)
        centroid = pts.mean(axis=0)
        center = pts[int(np.argmin(((pts - centroid) ** 2).sum(axis=1)))]
        evals, evecs = np.linalg.eigh(np.cov(pts.T) if len(pts) > 1 else np.eye(2))
        if evals[1] <= 1.1 * max(evals[0], 0.0) + 1e-12:
            ang = rng.uniform(0.0, 2 * math.pi)
            u = np.array([math.cos(ang), math.sin(ang)])
        else:
            u = evecs[:, 1]
        half = 0.5 * cfg.init_edge_length * u
        n0 = g.add_node(center - half)
        n1 = g.add_node(center + half)
        d0, d1 = rng.uniform(-0.1, 0.1, size=2)
        eid = g.add_edge(n0, n1, EdgeParams(cfg.init_edge_width, 1 / 3, 2 / 3, float(d0), float(d1)))
        added.append((eid, n0, n1, center))
    return added


# ----------------------------------------------------------------- the pass
def _edit(iteration, op, ids, pos):
    return {"iter": int(iteration), "op": op, "ids": [int(i) for i in ids],
            "pos": [float(pos[0]), float(pos[1])]}


def _next_merge(g, cfg):
    eligible = [n for n in g.nodes if g.nodes[n].age >= cfg.connect_min_age]
    if len(eligible) < 2:
        return None
    pairs = close_node_pairs(g, cfg.eps_merge, build_grid(g, cfg.grid_cell, cfg.eps_merge),
                             nodes=eligible)
    return pairs[0] if pairs else None


def t_junction_candidates(g: BezierGraph, cfg: TopoConfig, grid: SpatialGrid | None = None):
    """Eligible (dist, node, edge, t) snaps, sorted by distance.

    A snap is eligible when both node and edge are mature, the node is not an
    endpoint of the edge, the closest curve point is nearer than
    ``eps_merge`` and both split pieces keep at least ``min_edge_length`` of
    chord.
    """
    grid = grid or build_grid(g, cfg.grid_cell, cfg.eps_merge)
    out = []
    cache = {}
    for v in sorted(g.nodes):
        node = g.nodes[v]
        if node.age < cfg.connect_min_age:
            continue
        p = node.position
        for eid in sorted(grid.edge_candidates(p)):
            e = g.edges[eid]
            if e.age < cfg.connect_min_age or v in (e.a, e.b):
                continue
            if g.chord_length(eid) <= CHORD_EPS:
                continue
            if eid not in cache:
                cp = g.control_polygon(eid)
                cache[eid] = (cp, cp.points.min(axis=0), cp.points.max(axis=0))
            cp, lo, hi = cache[eid]
            gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
            if np.hypot(*gap) >= cfg.eps_merge:
                continue
            t, dist = closest_point(cp, p)
            if dist >= cfg.eps_merge:
                continue
            q = (bernstein(t) @ cp.points)[0]
            if (np.hypot(*(q - cp.p0)) < cfg.min_edge_length
                    or np.hypot(*(cp.p3 - q)) < cfg.min_edge_length):
                continue
            out.append((dist, v, eid, t))
    out.sort()
    return out


def _collinear_candidates(g, cfg):
    out = []
    for v in sorted(g.nodes):
        if g.degree(v) != 2 or g.nodes[v].age <= cfg.collinear_min_age:
            continue
        ea, eb = g.adjacency[v]
        if g.chord_length(ea) <= CHORD_EPS or g.chord_length(eb) <= CHORD_EPS:
            continue
        if g.edges[ea].other(v) == g.edges[eb].other(v):
            continue
        if continuation_angle(g, v) > cfg.theta_collinear:
            out.append(v)
    return out


def topo_pass(g: BezierGraph, target, render, cfg: TopoConfig | None = None,
              iteration: int = 0, rng: np.random.Generator | None = None,
              renderer=None, max_rounds: int = 8) -> list:
    """Run every due operator once to exhaustion and return the edit log.

    Connectivity, collinear merging and pruning are repeated as a group
    until a round makes no edit, so an immediate second pass is a no-op
    apart from road addition. ``render`` may be ``None``, in which case
    ``renderer(g)`` supplies the current coverage when road addition is due.
    """
    cfg = cfg or TopoConfig()
    edits = []
    if not cfg.enabled:
        return edits
    budget = 4 * (len(g.nodes) + len(g.edges)) + 100
    for _ in range(max_rounds):
        before = len(edits)
        if iteration > cfg.t_warmup:
            while budget > 0:
                nxt = _next_merge(g, cfg)
                if nxt is None:
                    break
                _, u, v = nxt
                w = merge_nodes(g, u, v, cfg)
                edits.append(_edit(iteration, "merge", [u, v, w], g.nodes[w].position))
                budget -= 1
            while budget > 0:
                cands = t_junction_candidates(g, cfg)
                if not cands:
                    break
                _, v, eid, _ = cands[0]
                w, e1, e2 = create_t_junction(g, v, eid, cfg)
                edits.append(_edit(iteration, "tjunction", [v, eid, w, e1, e2],
                                   g.nodes[w].position))
                budget -= 1
        while budget > 0:
            cands = _collinear_candidates(g, cfg)
            if not cands:
                break
            v = cands[0]
            pos = g.nodes[v].position.copy()
            ea, eb = sorted(g.adjacency[v])
            new, _ = merge_collinear(g, v, cfg)
            edits.append(_edit(iteration, "collinear", [v, ea, eb, new], pos))
            budget -= 1
        removed_edges, removed_nodes = prune(g, cfg)
        for eid, a, b, mid in removed_edges:
            edits.append(_edit(iteration, "prune", [eid, a, b], mid))
        for nid, pos in removed_nodes:
            edits.append(_edit(iteration, "prune", [nid], pos))
        if len(edits) == before:
            break
    if budget <= 0:
        log.warning("topology edit budget exhausted at iteration %d", iteration)
    if cfg.road_add_period > 0 and iteration % cfg.road_add_period == 0:
        if render is None:
            render = renderer(g)
        for eid, n0, n1, center in add_roads_at_unfit(g, target, render, cfg, rng):
            edits.append(_edit(iteration, "add", [eid, n0, n1], center))
    return edits
