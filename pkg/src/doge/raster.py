"""Soft rasterization of edge ribbons with analytic gradients.

Each edge is serialized into a ribbon polygon and shaded by a linear ramp over
its signed distance field::

    cov(p) = clamp(0.5 - sdf(p) / beta, 0, 1),   beta = meters_per_pixel

so coverage is exactly 0 or 1 outside a one-pixel anti-aliasing band and the
gradient of any pixel loss flows only through band pixels. Per-edge maps are
stored inside a padded bounding box and composited twice: an unclipped sum
(for the overlap term) and ``min(1, sum)`` (the union, for the coverage term).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
from PIL import Image

from .errors import DegenerateChord, DimensionMismatch, LayoutMismatch
from .geometry import (CHORD_EPS, ControlPolygon, RibbonFrame, bernstein, bernstein_deriv,
                       control_polygon_vjp, ribbon_frame, ribbon_sample_count,
                       ribbon_vertices)
from .graph import BezierGraph, ParamLayout

AA_BAND_PX = 1.0


class Canvas(NamedTuple):
    width: int
    height: int
    meters_per_pixel: float = 1.0

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def beta(self) -> float:
        return AA_BAND_PX * self.meters_per_pixel


@dataclass
class CoverageMap:
    """Row-major grid of coverage values in [0, 1] at a fixed resolution."""

    data: np.ndarray
    meters_per_pixel: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("coverage map must be a non-empty 2-D grid")
        if np.any(self.data < 0) or np.any(self.data > 1) or not np.all(np.isfinite(self.data)):
            raise ValueError("coverage values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def canvas(self) -> Canvas:
        return Canvas(self.width, self.height, self.meters_per_pixel)

    def to_uint8(self) -> np.ndarray:
        return np.round(255.0 * self.data).astype(np.uint8)

    def save(self, path) -> None:
        """Write an 8-bit grayscale PNG or PGM (chosen by file extension)."""
        path = str(path)
        fmt = "PPM" if path.lower().endswith((".pgm", ".pnm")) else "PNG"
        Image.fromarray(self.to_uint8(), mode="L").save(path, format=fmt)

    @classmethod
    def load(cls, path, meters_per_pixel: float = 1.0) -> "CoverageMap":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=float) / 255.0
        return cls(arr, meters_per_pixel)


@numba.njit(cache=True, nogil=True)
def _polygon_sdf(xs, ys, vx, vy, sdf, seg, frac):
    """Signed distance to a closed polygon (negative inside, nonzero winding).

    Also records, per pixel, the nearest segment index and the clamped
    projection parameter on it; the backward pass needs both.
    """
    m = vx.shape[0]
    for r in range(ys.shape[0]):
        py = ys[r]
        for c in range(xs.shape[0]):
            px = xs[c]
            best = 1e300
            bk = 0
            bs = 0.0
            wind = 0
            for k in range(m):
                k1 = k + 1
                if k1 == m:
                    k1 = 0
                ax = vx[k]
                ay = vy[k]
                ex = vx[k1] - ax
                ey = vy[k1] - ay
                wx = px - ax
                wy = py - ay
                ee = ex * ex + ey * ey
                s = 0.0
                if ee > 0.0:
                    s = (wx * ex + wy * ey) / ee
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                dx = wx - s * ex
                dy = wy - s * ey
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
                    bk = k
                    bs = s
                cross = ex * wy - ey * wx
                if ay <= py:
                    if vy[k1] > py and cross > 0.0:
                        wind += 1
                elif vy[k1] <= py and cross < 0.0:
                    wind -= 1
            d = math.sqrt(best)
            sdf[r, c] = -d if wind != 0 else d
            seg[r, c] = bk
            frac[r, c] = bs


@dataclass
class EdgeRender:
    """One edge's coverage inside its padded bounding box plus backward state."""

    edge_id: int | None
    origin: tuple            # (row0, col0) of the box on the canvas
    coverage: np.ndarray     # (h, w)
    sdf: np.ndarray
    seg: np.ndarray
    frac: np.ndarray
    vertices: np.ndarray     # (2n, 2) ribbon polygon
    frame: RibbonFrame
    control: ControlPolygon
    width: float

    @property
    def box(self):
        r0, c0 = self.origin
        h, w = self.coverage.shape
        return slice(r0, r0 + h), slice(c0, c0 + w)

    @property
    def mass(self) -> float:
        return float(self.coverage.sum())


def _pixel_range(lo, hi, mpp, n):
    first = max(0, int(math.ceil(lo / mpp - 0.5)))
    last = min(n - 1, int(math.floor(hi / mpp - 0.5)))
    return first, last


def render_edge(cp: ControlPolygon, width: float, canvas: Canvas, edge_id=None,
                samples: int | None = None) -> EdgeRender:
    """Soft coverage of one ribbon, restricted to its bounding box."""
    if width <= 0:
        raise ValueError("edge width must be positive")
    if math.hypot(*(cp.p3 - cp.p0)) <= CHORD_EPS:
        raise DegenerateChord(f"edge {edge_id} has coincident endpoints")
    if samples is None:
        samples = ribbon_sample_count(cp)
    frame = ribbon_frame(cp, samples)
    verts = ribbon_vertices(frame, width)
    mpp = canvas.meters_per_pixel
    beta = canvas.beta
    lo = verts.min(axis=0) - beta
    hi = verts.max(axis=0) + beta
    c0, c1 = _pixel_range(lo[0], hi[0], mpp, canvas.width)
    r0, r1 = _pixel_range(lo[1], hi[1], mpp, canvas.height)
    h, w = max(0, r1 - r0 + 1), max(0, c1 - c0 + 1)
    sdf = np.empty((h, w))
    seg = np.empty((h, w), dtype=np.int64)
    frac = np.empty((h, w))
    if h and w:
        xs = (np.arange(c0, c0 + w) + 0.5) * mpp
        ys = (np.arange(r0, r0 + h) + 0.5) * mpp
        _polygon_sdf(xs, ys, np.ascontiguousarray(verts[:, 0]),
                     np.ascontiguousarray(verts[:, 1]), sdf, seg, frac)
    cov = np.clip(0.5 - sdf / beta, 0.0, 1.0)
    return EdgeRender(edge_id, (r0, c0), cov, sdf, seg, frac, verts, frame, cp, float(width))


@dataclass
class RenderBundle:
    canvas: Canvas
    per_edge: dict            # edge id -> EdgeRender, insertion order = sorted ids
    composite_sum: np.ndarray
    composite_union: np.ndarray

    def union_map(self) -> CoverageMap:
        return CoverageMap(self.composite_union, self.canvas.meters_per_pixel)

    def edge_map(self, edge_id) -> np.ndarray:
        """The edge's coverage pasted onto a full-size canvas."""
        out = np.zeros(self.canvas.shape)
        er = self.per_edge[edge_id]
        out[er.box] = er.coverage
        return out


def renderable_edges(g: BezierGraph):
    """Edge ids that can be rendered: positive width, non-degenerate chord."""
    return [eid for eid in sorted(g.edges)
            if g.edges[eid].width > 0 and g.chord_length(eid) > CHORD_EPS]


def render_graph(g: BezierGraph, canvas: Canvas, workers: int = 1) -> RenderBundle:
    """Render every edge and composite them.

    With ``workers > 1`` the per-edge work runs on a thread pool; compositing
    always happens afterwards in sorted edge order, so results are identical.
    """
    ids = renderable_edges(g)
    jobs = [(g.control_polygon(eid), g.edges[eid].width, eid) for eid in ids]

    def one(job):
        cp, width, eid = job
        return render_edge(cp, width, canvas, eid)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            renders = list(pool.map(one, jobs))
    else:
        renders = [one(j) for j in jobs]
    total = np.zeros(canvas.shape)
    per_edge = {}
    for er in renders:
        per_edge[er.edge_id] = er
        total[er.box] += er.coverage
    return RenderBundle(canvas, per_edge, total, np.minimum(total, 1.0))


@dataclass
class GradSink:
    """Gradient accumulator aligned with a graph's flat parameter layout."""

    layout: ParamLayout
    values: np.ndarray

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "GradSink":
        return cls(layout, np.zeros(layout.size))

    def add_node(self, node_id, g_xy) -> None:
        k = self.layout.node_index[node_id]
        self.values[k:k + 2] += g_xy

    def add_edge(self, edge_id, width=0.0, alpha0=0.0, alpha1=0.0, d0=0.0, d1=0.0) -> None:
        k = self.layout.edge_index[edge_id]
        self.values[k:k + 5] += (width, alpha0, alpha1, d0, d1)


def edge_vertex_grad(er: EdgeRender, upstream: np.ndarray, beta: float) -> np.ndarray:
    """d(loss)/d(ribbon vertices) given d(loss)/d(coverage) on the edge box."""
    m = er.vertices.shape[0]
    cov = er.coverage
    band = (cov > 0.0) & (cov < 1.0) & (upstream != 0.0) & (er.sdf != 0.0)
    gv = np.zeros((m, 2))
    if not np.any(band):
        return gv
    rows, cols = np.nonzero(band)
    r0, c0 = er.origin
    mpp = beta / AA_BAND_PX
    px = (cols + c0 + 0.5) * mpp
    py = (rows + r0 + 0.5) * mpp
    k = er.seg[rows, cols]
    k1 = (k + 1) % m
    s = er.frac[rows, cols]
    sdf = er.sdf[rows, cols]
    va, vb = er.vertices[k], er.vertices[k1]
    qx = va[:, 0] + s * (vb[:, 0] - va[:, 0])
    qy = va[:, 1] + s * (vb[:, 1] - va[:, 1])
    # dcov/dsdf = -1/beta; dsdf/dq = -(p - q)/sdf; dq/dva = 1 - s, dq/dvb = s
    coef = upstream[rows, cols] / (sdf * beta)
    gx = coef * (px - qx)
    gy = coef * (py - qy)
    gv[:, 0] = np.bincount(k, gx * (1 - s), m) + np.bincount(k1, gx * s, m)
    gv[:, 1] = np.bincount(k, gy * (1 - s), m) + np.bincount(k1, gy * s, m)
    return gv


def ribbon_vjp(er: EdgeRender, gv: np.ndarray):
    """Pull vertex gradients back to control points and width."""
    fr = er.frame
    n = fr.t.shape[0]
    g_left = gv[:n]
    g_right = gv[n:][::-1]
    g_center = g_left + g_right
    g_diff = g_left - g_right
    g_width = 0.5 * float((fr.normals * g_diff).sum())
    g_normal = 0.5 * er.width * g_diff
    # normal = J u, u = T/|T|  ->  g_u = J^T g_normal
    g_u = np.stack([g_normal[:, 1], -g_normal[:, 0]], axis=1)
    u = fr.tangents / fr.tnorm[:, None]
    g_tan = (g_u - u * (u * g_u).sum(axis=1, keepdims=True)) / fr.tnorm[:, None]
    g_tan[fr.fallback] = 0.0
    g_points = bernstein(fr.t).T @ g_center + bernstein_deriv(fr.t).T @ g_tan
    return g_points, g_width


def backward(bundle: RenderBundle, g: BezierGraph, grad_sum=None, grad_union=None,
             layout: ParamLayout | None = None) -> GradSink:
    """Chain per-pixel gradients on both composites down to graph parameters.

    The union clip passes gradient only where ``composite_sum < 1``.
    """
    shape = bundle.canvas.shape
    if layout is None:
        layout = g.layout()
    if layout.node_ids != tuple(sorted(g.nodes)) or layout.edge_ids != tuple(sorted(g.edges)):
        raise LayoutMismatch("layout does not describe this graph")
    upstream = np.zeros(shape)
    for m in (grad_sum, grad_union):
        if m is not None and np.shape(m) != shape:
            raise DimensionMismatch(f"upstream map {np.shape(m)} vs canvas {shape}")
    if grad_sum is not None:
        upstream += grad_sum
    if grad_union is not None:
        upstream += np.where(bundle.composite_sum < 1.0, grad_union, 0.0)
    sink = GradSink.zeros(layout)
    if not np.any(upstream):
        return sink
    beta = bundle.canvas.beta
    for eid, er in bundle.per_edge.items():
        up = upstream[er.box]
        gv = edge_vertex_grad(er, up, beta)
        if not np.any(gv):
            continue
        g_points, g_width = ribbon_vjp(er, gv)
        e = g.edges[eid]
        pi, pj = g.nodes[e.a].position, g.nodes[e.b].position
        g_pi, g_pj, ga0, ga1, gd0, gd1 = control_polygon_vjp(
            pi, pj, e.alpha0, e.alpha1, e.d0, e.d1, g_points)
        sink.add_node(e.a, g_pi)
        sink.add_node(e.b, g_pj)
        sink.add_edge(eid, g_width, ga0, ga1, gd0, gd1)
    return sink
