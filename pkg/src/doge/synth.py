"""Seeded synthetic road networks and an independent hard rasterizer.

The hard rasterizer fills ribbon polygons on a supersampled lattice with
scikit-image's scanline fill and averages blocks. It shares only the ribbon
serialization with the differentiable renderer, which makes it a usable
cross-check for that renderer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay
from scipy.stats import qmc
from skimage.draw import polygon as fill_polygon

from .geometry import CHORD_EPS, build_control_polygon, sample_polyline, serialize_ribbon
from .graph import BezierGraph, EdgeParams
from .raster import Canvas, CoverageMap
from .topoadapt import split_edge

LAYOUTS = ("single_curve", "grid", "t_junctions", "random_planar")
DEFAULT_WIDTHS = {"single_curve": (8.0, 10.0), "grid": (5.0, 7.0),
                  "t_junctions": (5.0, 7.0), "random_planar": (5.0, 7.0)}
ROAD_FRACTION = (0.02, 0.5)


@dataclass
class SynthSpec:
    layout: str = "single_curve"
    extent: float = 256.0          # meters, square canvas side
    width_range: tuple | None = None
    curvature: float = 0.25        # max |d| / chord
    seed: int = 0
    meters_per_pixel: float = 1.0
    grid_shape: tuple = (2, 2)     # (vertical roads, horizontal roads)
    n_stubs: int = 2

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.extent <= 0 or self.meters_per_pixel <= 0:
            raise ValueError("extent and meters_per_pixel must be positive")
        if not 0 <= self.curvature <= 0.5:
            raise ValueError("curvature must lie in [0, 0.5]")
        if self.width_range is None:
            self.width_range = DEFAULT_WIDTHS[self.layout]
        lo, hi = self.width_range
        if not 0 < lo <= hi:
            raise ValueError("width range must be positive and ordered")

    @property
    def canvas(self) -> Canvas:
        n = int(round(self.extent / self.meters_per_pixel))
        return Canvas(n, n, self.meters_per_pixel)


def _width(rng, spec):
    return float(rng.uniform(*spec.width_range))


def _single_curve(rng, spec, g):
    L = spec.extent
    ang = rng.uniform(0, 2 * math.pi)
    u = np.array([math.cos(ang), math.sin(ang)])
    # longest chord that keeps the S-curve inside a 12% margin
    half = 0.5 * L * 0.76 / max(abs(u[0]), abs(u[1]))
    c = np.full(2, 0.5 * L) + rng.uniform(-0.03, 0.03, 2) * L
    a = g.add_node(c - 0.85 * half * u)
    b = g.add_node(c + 0.85 * half * u)
    chord = 1.7 * half
    k = rng.uniform(0.4, 1.0) * spec.curvature
    g.add_edge(a, b, EdgeParams(_width(rng, spec), 1 / 3, 2 / 3, k * chord, -k * chord))


def _grid(rng, spec, g):
    L = spec.extent
    nv, nh = spec.grid_shape
    margin = 0.06 * L
    xs = (np.arange(nv) + 0.5) / nv * (L - 2 * margin) + margin
    ys = (np.arange(nh) + 0.5) / nh * (L - 2 * margin) + margin
    jitter = 0.04 * L
    junction = {}
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            junction[i, j] = g.add_node((x + rng.uniform(-jitter, jitter), y + rng.uniform(-jitter, jitter)))
    k = 0.4 * spec.curvature

    def road(ids, width):
        for a, b in zip(ids[:-1], ids[1:]):
            chord = float(np.hypot(*(g.nodes[b].position - g.nodes[a].position)))
            d = rng.uniform(-k, k, 2) * chord
            g.add_edge(a, b, EdgeParams(width, 1 / 3, 2 / 3, float(d[0]), float(d[1])))

    for i in range(nv):
        first, last = g.nodes[junction[i, 0]].position, g.nodes[junction[i, nh - 1]].position
        top = g.add_node((first[0] + rng.uniform(-jitter, jitter) * 0.5, margin * 0.5))
        bottom = g.add_node((last[0] + rng.uniform(-jitter, jitter) * 0.5, L - margin * 0.5))
        road([top] + [junction[i, j] for j in range(nh)] + [bottom], _width(rng, spec))
    for j in range(nh):
        first, last = g.nodes[junction[0, j]].position, g.nodes[junction[nv - 1, j]].position
        left = g.add_node((margin * 0.5, first[1] + rng.uniform(-jitter, jitter) * 0.5))
        right = g.add_node((L - margin * 0.5, last[1] + rng.uniform(-jitter, jitter) * 0.5))
        road([left] + [junction[i, j] for i in range(nv)] + [right], _width(rng, spec))


def _t_junctions(rng, spec, g):
    L = spec.extent
    margin = 0.08 * L
    y = 0.5 * L + rng.uniform(-0.08, 0.08) * L
    a = g.add_node((margin, y + rng.uniform(-0.05, 0.05) * L))
    b = g.add_node((L - margin, y + rng.uniform(-0.05, 0.05) * L))
    chord = float(np.hypot(*(g.nodes[b].position - g.nodes[a].position)))
    k = rng.uniform(0.3, 0.6) * spec.curvature
    sign = rng.choice([-1.0, 1.0])
    main = g.add_edge(a, b, EdgeParams(_width(rng, spec), 1 / 3, 2 / 3, sign * k * chord, sign * k * chord))
    # split points, left to right, spaced away from the ends and from each other
    ts = np.sort((np.arange(spec.n_stubs) + 0.5) / spec.n_stubs * 0.7 + 0.15
                 + rng.uniform(-0.04, 0.04, spec.n_stubs))
    remaining, t_prev = main, 0.0
    junctions = []
    for t in ts:
        local = (t - t_prev) / (1.0 - t_prev)
        s, _, right = split_edge(g, remaining, local)
        junctions.append(s)
        remaining, t_prev = right, t
    for n, s in enumerate(junctions):
        p = g.nodes[s].position
        eid = g.adjacency[s][0]
        cp = g.control_polygon(eid)
        tangent = cp.p3 - cp.p0 if g.edges[eid].b == s else cp.p0 - cp.p3
        normal = np.array([-tangent[1], tangent[0]]) / np.hypot(*tangent)
        side = 1.0 if n % 2 == 0 else -1.0
        if rng.random() < 0.5:
            side = -side
        length = rng.uniform(0.22, 0.32) * L
        end = p + side * length * normal
        end = np.clip(end, margin * 0.5, L - margin * 0.5)
        tip = g.add_node(end)
        d = rng.uniform(-0.5, 0.5, 2) * spec.curvature * length
        g.add_edge(s, tip, EdgeParams(_width(rng, spec), 1 / 3, 2 / 3, float(d[0]), float(d[1])))


def _angle_ok(g, a, b, min_angle):
    pa, pb = g.nodes[a].position, g.nodes[b].position
    for node, other_pos in ((a, pb), (b, pa)):
        here = g.nodes[node].position
        u = other_pos - here
        u = u / np.hypot(*u)
        for eid in g.adjacency[node]:
            v = g.nodes[g.edges[eid].other(node)].position - here
            v = v / np.hypot(*v)
            if math.degrees(math.acos(float(np.clip(u @ v, -1, 1)))) < min_angle:
                return False
    return True


def _ribbons_clear(g, a, b, params, junction_radius=3.0):
    """True when the candidate edge's ribbon stays off every existing ribbon,
    except within ``junction_radius`` widths of a shared node."""
    pa, pb = g.nodes[a].position, g.nodes[b].position
    cp = build_control_polygon(pa, pb, params.alpha0, params.alpha1, params.d0, params.d1)
    mine = sample_polyline(cp, 1.0)
    for eid, e in g.edges.items():
        other = sample_polyline(g.control_polygon(eid), 1.0)
        pts = mine
        for shared in {a, b} & {e.a, e.b}:
            r = junction_radius * max(params.width, e.width)
            pts = pts[np.hypot(*(pts - g.nodes[shared].position).T) > r]
        if not len(pts):
            continue
        gap = np.hypot(*(pts[:, None, :] - other[None, :, :]).transpose(2, 0, 1)).min()
        if gap < 0.5 * (params.width + e.width):
            return False
    return True


def _random_planar(rng, spec, g):
    L = spec.extent
    margin = 0.08 * L
    radius = 0.3
    sampler = qmc.PoissonDisk(d=2, radius=radius, seed=rng)
    pts = sampler.fill_space() * (L - 2 * margin) + margin
    if len(pts) < 3:
        pts = np.array([[margin, margin], [L - margin, margin], [0.5 * L, L - margin]])
    ids = [g.add_node(p) for p in pts]
    tri = Delaunay(pts)
    pairs = set()
    for simplex in tri.simplices:
        for i in range(3):
            a, b = sorted((int(simplex[i]), int(simplex[(i + 1) % 3])))
            pairs.add((a, b))
    max_len = 1.7 * radius * (L - 2 * margin)
    cand = sorted(pairs, key=lambda ab: (np.hypot(*(pts[ab[0]] - pts[ab[1]])), ab))
    k = 0.3 * spec.curvature
    for a, b in cand:
        chord = float(np.hypot(*(pts[a] - pts[b])))
        if chord > max_len or not _angle_ok(g, ids[a], ids[b], 45.0):
            continue
        d = rng.uniform(-k, k, 2) * chord
        params = EdgeParams(_width(rng, spec), 1 / 3, 2 / 3, float(d[0]), float(d[1]))
        if _ribbons_clear(g, ids[a], ids[b], params):
            g.add_edge(ids[a], ids[b], params)
    for nid in list(g.nodes):
        if g.degree(nid) == 0:
            g.remove_node(nid)


_BUILDERS = {"single_curve": _single_curve, "grid": _grid, "t_junctions": _t_junctions,
             "random_planar": _random_planar}


def road_fraction(g: BezierGraph, canvas: Canvas) -> float:
    return float(hard_rasterize(g, canvas, supersample=2).data.mean())


def generate(spec: SynthSpec, max_attempts: int = 20) -> BezierGraph:
    """Build a seeded ground-truth graph for ``spec.layout``.

    Draws are repeated (from the same seeded stream) until the rasterized
    road fraction lies inside ``ROAD_FRACTION``.
    """
    rng = np.random.default_rng(spec.seed)
    g = None
    for _ in range(max_attempts):
        g = BezierGraph(spec.meters_per_pixel)
        _BUILDERS[spec.layout](rng, spec, g)
        g.validate()
        lo, hi = ROAD_FRACTION
        if lo <= road_fraction(g, spec.canvas) <= hi:
            return g
    raise RuntimeError(f"could not generate a {spec.layout} layout with road fraction in {ROAD_FRACTION}")


def hard_rasterize(g: BezierGraph, canvas: Canvas, supersample: int = 8) -> CoverageMap:
    """Binary point-in-ribbon coverage on a supersampled lattice, block-averaged."""
    if supersample < 1:
        raise ValueError("supersample must be at least 1")
    ss = int(supersample)
    h, w = canvas.height * ss, canvas.width * ss
    fine = np.zeros((h, w), dtype=bool)
    scale = ss / canvas.meters_per_pixel
    for eid in sorted(g.edges):
        e = g.edges[eid]
        if e.width <= 0 or g.chord_length(eid) <= CHORD_EPS:
            continue
        verts = serialize_ribbon(g.control_polygon(eid), e.width).vertices
        # subpixel (r, c) has its center at ((c + 0.5) / scale, (r + 0.5) / scale)
        rr, cc = fill_polygon(verts[:, 1] * scale - 0.5, verts[:, 0] * scale - 0.5, shape=(h, w))
        fine[rr, cc] = True
    cov = fine.reshape(canvas.height, ss, canvas.width, ss).mean(axis=(1, 3))
    return CoverageMap(cov, canvas.meters_per_pixel)
