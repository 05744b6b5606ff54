import math

import numpy as np
import pytest

from doge.graph import BezierGraph, EdgeParams
from doge.geometry import bernstein, closest_point


def random_graph(rng, n_edges=2, extent=64.0, margin=10.0):
    """Chain/star of 1-3 random curved edges well inside a square canvas."""
    g = BezierGraph()
    ids = [g.add_node(rng.uniform(margin, extent - margin, 2))]
    while len(g.edges) < n_edges:
        a = ids[int(rng.integers(len(ids)))]
        p = rng.uniform(margin, extent - margin, 2)
        if np.hypot(*(p - g.nodes[a].position)) < 8:
            continue
        b = g.add_node(p)
        chord = np.hypot(*(p - g.nodes[a].position))
        d = rng.uniform(-0.3, 0.3, 2) * chord
        g.add_edge(a, b, EdgeParams(rng.uniform(2.5, 5.0), rng.uniform(0.2, 0.45),
                                    rng.uniform(0.55, 0.8), d[0], d[1]))
        ids.append(b)
    return g


def dense_trace(cp, n=2000):
    return bernstein(np.linspace(0, 1, n)) @ cp.points


def trace_distance(points, cp, n=4000):
    """Distance from each point to a densely sampled curve."""
    dense = dense_trace(cp, n)
    d = np.hypot(*(points[:, None, :] - dense[None, :, :]).transpose(2, 0, 1))
    return d.min(axis=1)


def straight_graph(p, q, width=4.0, age=0):
    g = BezierGraph()
    a = g.add_node(p, age=age)
    b = g.add_node(q, age=age)
    g.add_edge(a, b, EdgeParams(width), age=age)
    return g, a, b


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(g, loss_fn, i, h):
    x, layout = g.flatten_params()
    xp = x.copy()
    xp[i] += h
    g.unflatten_params(xp, layout)
    lp = loss_fn(g)
    xp[i] = x[i] - h
    g.unflatten_params(xp, layout)
    lm = loss_fn(g)
    g.unflatten_params(x, layout)
    return (lp - lm) / (2 * h)


def fd_gradient_check(g, loss_fn, analytic, h_len=1e-3, h_alpha=1e-4, detect_kinks=True,
                      kink_tol=1e-2):
    """Compare ``analytic`` against central differences of ``loss_fn(g)``.

    With ``detect_kinks`` a parameter is skipped when its perturbation
    crosses a clamp or indicator boundary: the loss is then not smooth on
    ``[x - h, x + h]`` and the step-``h`` difference disagrees with one
    taken at ``h / 100`` (relative ``kink_tol``); on a smooth stretch the two
    agree to O(h^2). Returns ``(results, skipped)`` with ``results`` a list
    of ``(key, analytic, numeric, ok)``.
    """
    _, layout = g.flatten_params()
    results, skipped = [], []
    for i, key in enumerate(layout.keys()):
        h = h_alpha if "alpha" in key[2] else h_len
        fd = central_difference(g, loss_fn, i, h)
        if detect_kinks:
            fine = central_difference(g, loss_fn, i, h / 100)
            if abs(fd - fine) > kink_tol * abs(fine) + 1e-9:
                skipped.append(key)
                continue
        a = analytic[i]
        ok = abs(a - fd) <= 1e-2 * abs(fd) or abs(a - fd) <= 1e-6
        results.append((key, a, fd, ok))
    return results, skipped


MATURE = 100


def brute_node_pairs(g, eps, nodes=None):
    """Every node pair closer than eps, from the full pairwise distance matrix."""
    ids = sorted(g.nodes if nodes is None else nodes)
    if len(ids) < 2:
        return set()
    pos = np.array([g.nodes[u].position for u in ids])
    d = np.hypot(*(pos[:, None] - pos[None]).transpose(2, 0, 1))
    iu, jv = np.nonzero(np.triu(d < eps, k=1))
    return {(ids[i], ids[j]) for i, j in zip(iu, jv)}


def node_edge_distance(g, v, eid, memo=None):
    """Closest-point distance from node v to edge eid, optionally memoized."""
    if memo is not None and (v, eid) in memo:
        return memo[(v, eid)]
    dist = closest_point(g.control_polygon(eid), g.nodes[v].position)[1]
    if memo is not None:
        memo[(v, eid)] = dist
    return dist


def brute_node_edge_pairs(g, eps, memo=None):
    """Every (node, edge) pair closer than eps, scanning all pairs.

    A curve lies inside the convex hull of its control points, hence inside
    their bounding box; pairs whose box is eps or farther away are skipped
    exactly without the closest-point solve. A shared memo lets the grid
    path and this scan solve each (node, edge) pair once; the candidate
    sets are still built independently.
    """
    out = set()
    boxes = {eid: (g.control_polygon(eid).points.min(axis=0), g.control_polygon(eid).points.max(axis=0))
             for eid in g.edges}
    for v in g.nodes:
        p = g.nodes[v].position
        for eid, e in g.edges.items():
            if v in (e.a, e.b):
                continue
            lo, hi = boxes[eid]
            if np.hypot(*np.maximum(np.maximum(lo - p, p - hi), 0.0)) >= eps:
                continue
            if node_edge_distance(g, v, eid, memo) < eps:
                out.add((v, eid))
    return out


def grid_node_edge_pairs(g, eps, grid, memo=None):
    out = set()
    for v in g.nodes:
        for eid in grid.edge_candidates(g.nodes[v].position):
            e = g.edges[eid]
            if v in (e.a, e.b):
                continue
            if node_edge_distance(g, v, eid, memo) < eps:
                out.add((v, eid))
    return out


def random_config(rng, n_nodes=200, n_edges=100, extent=200.0):
    g = BezierGraph()
    ids = [g.add_node(rng.uniform(0, extent, 2), age=MATURE) for _ in range(n_nodes)]
    while len(g.edges) < n_edges:
        a = ids[int(rng.integers(n_nodes))]
        # connect to a nearby node so edges stay short
        d = [np.hypot(*(g.nodes[a].position - g.nodes[b].position)) for b in ids]
        order = np.argsort(d)[1:6]
        b = ids[int(rng.choice(order))]
        if g.find_edge(a, b) is None:
            chord = d[ids.index(b)]
            off = rng.uniform(-0.3, 0.3, 2) * chord
            g.add_edge(a, b, EdgeParams(4.0, 1 / 3, 2 / 3, off[0], off[1]), age=MATURE)
    return g


def messy_graph(rng, extent=64.0):
    g = BezierGraph()
    for _ in range(int(rng.integers(5, 30))):
        c = rng.uniform(0, extent, 2)
        a = rng.uniform(0, 2 * math.pi)
        u = np.array([math.cos(a), math.sin(a)]) * rng.uniform(0.3, 15) / 2
        n0 = g.add_node(c - u, age=MATURE)
        n1 = g.add_node(c + u, age=MATURE)
        g.add_edge(n0, n1, EdgeParams(rng.uniform(0.1, 5), rng.uniform(0, 1), rng.uniform(0, 1),
                                      *rng.uniform(-3, 3, 2)), age=MATURE)
    return g


def eligible_violations(g, cfg):
    """Brute-force scan for anything the connectivity step should have fixed."""
    mature = [n for n in g.nodes if g.nodes[n].age >= cfg.connect_min_age]
    pairs = brute_node_pairs(g, cfg.eps_merge, mature)
    snaps = []
    for v in mature:
        for eid, e in g.edges.items():
            if e.age < cfg.connect_min_age or v in (e.a, e.b):
                continue
            cp = g.control_polygon(eid)
            t, d = closest_point(cp, g.nodes[v].position)
            q = (bernstein(t) @ cp.points)[0]
            if d < cfg.eps_merge and min(np.hypot(*(q - cp.p0)), np.hypot(*(cp.p3 - q))) >= cfg.min_edge_length:
                snaps.append((v, eid))
    return pairs, snaps


# ------------------------------------------------------ acceptance report
_CRITERIA = {}


def record_criterion(number, passed, detail):
    _CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
