"""Five-term geometric objective, its gradients, and the Adam update.

The two pixel terms (coverage and overlap) are evaluated on a render and
differentiated through :func:`doge.raster.backward`; the three curve priors
(G1 continuity, offset, spacing) act directly on graph parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LayoutMismatch
from .geometry import CHORD_EPS, control_polygon_vjp
from .graph import BezierGraph, ParamLayout
from .raster import CoverageMap, GradSink, RenderBundle, backward, render_graph

ALPHA_HAT = (1.0 / 3.0, 2.0 / 3.0)
MIN_WIDTH = 0.05


@dataclass
class LossWeights:
    lambda_cover: float = 1.0
    lambda_overlap: float = 0.3
    lambda_g1: float = 0.012
    lambda_offset: float = 6e-3
    lambda_spacing: float = 6e-3
    t_g1: float = 90.0   # degrees
    tau_d: float = 0.75

    def __post_init__(self):
        for name in ("lambda_cover", "lambda_overlap", "lambda_g1", "lambda_offset",
                     "lambda_spacing"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.t_g1 <= 180:
            raise ValueError("t_g1 must lie in (0, 180] degrees")
        if self.tau_d <= 0:
            raise ValueError("tau_d must be positive")


@dataclass
class LossBreakdown:
    cover: float = 0.0
    overlap: float = 0.0
    g1: float = 0.0
    offset: float = 0.0
    spacing: float = 0.0
    total: float = 0.0

    CSV_HEADER = "iter,cover,overlap,g1,offset,spacing,total,nodes,edges"

    def csv_row(self, iteration: int, nodes: int, edges: int) -> str:
        vals = (self.cover, self.overlap, self.g1, self.offset, self.spacing, self.total)
        return ",".join([str(iteration), *(repr(float(v)) for v in vals), str(nodes), str(edges)])


# ---------------------------------------------------------------- pixel terms
def loss_cover(bundle: RenderBundle, target: CoverageMap):
    """Mean squared difference between the union render and the target.

    Returns ``(value, d value / d union)``.
    """
    if target.data.shape != bundle.canvas.shape:
        raise DimensionMismatch(f"target {target.data.shape} vs canvas {bundle.canvas.shape}")
    diff = bundle.composite_union - target.data
    count = diff.size
    return float((diff * diff).sum() / count), 2.0 * diff / count


def loss_overlap(bundle: RenderBundle, n_edges: int | None = None):
    """Excess of the summed render above 1, per edge and per pixel.

    Returns ``(value, d value / d sum)``.
    """
    if n_edges is None:
        n_edges = len(bundle.per_edge)
    shape = bundle.canvas.shape
    if n_edges == 0:
        return 0.0, np.zeros(shape)
    norm = n_edges * bundle.composite_sum.size
    excess = bundle.composite_sum - 1.0
    over = excess > 0
    return float(excess[over].sum() / norm), over / norm


# ------------------------------------------------------------- vector priors
def _adjacent_control(g: BezierGraph, eid: int, node_id: int):
    """(control polygon, index of the control point next to ``node_id``)."""
    e = g.edges[eid]
    cp = g.control_polygon(eid)
    return cp, (1 if e.a == node_id else 2)


def _push_control_grad(g, sink, eid, g_points):
    e = g.edges[eid]
    g_pi, g_pj, ga0, ga1, gd0, gd1 = control_polygon_vjp(
        g.nodes[e.a].position, g.nodes[e.b].position, e.alpha0, e.alpha1, e.d0, e.d1, g_points)
    sink.add_node(e.a, g_pi)
    sink.add_node(e.b, g_pj)
    sink.add_edge(eid, 0.0, ga0, ga1, gd0, gd1)


def g1_angle(g: BezierGraph, node_id: int):
    """Turning angle (degrees) at a degree-2 node; 0 means a smooth pass."""
    ea, eb = sorted(g.adjacency[node_id])
    p = g.nodes[node_id].position
    cpa, ia = _adjacent_control(g, ea, node_id)
    cpb, ib = _adjacent_control(g, eb, node_id)
    v_in = p - cpa.points[ia]
    v_out = cpb.points[ib] - p
    na, nb = np.hypot(*v_in), np.hypot(*v_out)
    if na < CHORD_EPS or nb < CHORD_EPS:
        return None
    cos = float(np.clip(v_in @ v_out / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(cos))


def loss_g1(g: BezierGraph, t_g1: float = 90.0, layout: ParamLayout | None = None):
    """Tangent misalignment at degree-2 nodes whose turning angle is below ``t_g1``."""
    layout = layout or g.layout()
    sink = GradSink.zeros(layout)
    n_edges = len(g.edges)
    if n_edges == 0:
        return 0.0, sink
    total = 0.0
    for nid in sorted(g.nodes):
        if g.degree(nid) != 2:
            continue
        ea, eb = sorted(g.adjacency[nid])
        if g.chord_length(ea) <= CHORD_EPS or g.chord_length(eb) <= CHORD_EPS:
            continue
        p = g.nodes[nid].position
        cpa, ia = _adjacent_control(g, ea, nid)
        cpb, ib = _adjacent_control(g, eb, nid)
        a = p - cpa.points[ia]
        b = cpb.points[ib] - p
        na, nb = np.hypot(*a), np.hypot(*b)
        if na < CHORD_EPS or nb < CHORD_EPS:
            continue
        cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
        if math.degrees(math.acos(cos)) >= t_g1:
            continue
        total += 1.0 - cos
        # d(1 - cos)/da and /db
        ga = -(b / (na * nb) - cos * a / na**2) / n_edges
        gb = -(a / (na * nb) - cos * b / nb**2) / n_edges
        sink.add_node(nid, ga - gb)
        gpa = np.zeros((4, 2))
        gpa[ia] = -ga
        gpb = np.zeros((4, 2))
        gpb[ib] = gb
        _push_control_grad(g, sink, ea, gpa)
        _push_control_grad(g, sink, eb, gpb)
    return total / n_edges, sink


def loss_offset(g: BezierGraph, tau_d: float = 0.75, layout: ParamLayout | None = None):
    """Exponential penalty on offsets whose ratio to the chord exceeds ``tau_d``.

    Edges with a degenerate chord contribute nothing (they are pruned later).
    """
    layout = layout or g.layout()
    sink = GradSink.zeros(layout)
    n_edges = len(g.edges)
    if n_edges == 0:
        return 0.0, sink
    total = 0.0
    for eid in sorted(g.edges):
        e = g.edges[eid]
        chord = g.nodes[e.b].position - g.nodes[e.a].position
        length = float(np.hypot(*chord))
        if length <= CHORD_EPS:
            continue
        g_len = 0.0
        g_d = [0.0, 0.0]
        for i, d in enumerate((e.d0, e.d1)):
            z = math.exp(abs(d) / length - tau_d)
            if z - 1.0 <= 0.0:
                continue
            total += z - 1.0
            g_d[i] = z * math.copysign(1.0, d) / length / n_edges
            g_len -= z * abs(d) / length**2 / n_edges
        if g_len:
            u = chord / length
            sink.add_node(e.b, g_len * u)
            sink.add_node(e.a, -g_len * u)
        sink.add_edge(eid, d0=g_d[0], d1=g_d[1])
    return total / n_edges, sink


def loss_spacing(g: BezierGraph, layout: ParamLayout | None = None):
    layout = layout or g.layout()
    sink = GradSink.zeros(layout)
    n_edges = len(g.edges)
    if n_edges == 0:
        return 0.0, sink
    total = 0.0
    for eid in sorted(g.edges):
        e = g.edges[eid]
        r0, r1 = e.alpha0 - ALPHA_HAT[0], e.alpha1 - ALPHA_HAT[1]
        total += r0 * r0 + r1 * r1
        sink.add_edge(eid, alpha0=2 * r0 / n_edges, alpha1=2 * r1 / n_edges)
    return total / n_edges, sink


def total_loss_and_grad(g: BezierGraph, target: CoverageMap, weights: LossWeights | None = None,
                        workers: int = 1):
    """Render once and evaluate all five terms.

    Returns ``(LossBreakdown, GradSink, RenderBundle)``; the sink holds the
    gradient of the weighted total.
    """
    w = weights or LossWeights()
    layout = g.layout()
    bundle = render_graph(g, target.canvas, workers=workers)
    cover, g_union = loss_cover(bundle, target)
    overlap, g_sum = loss_overlap(bundle, len(g.edges))
    sink = backward(bundle, g, grad_sum=w.lambda_overlap * g_sum,
                    grad_union=w.lambda_cover * g_union, layout=layout)
    g1, s_g1 = loss_g1(g, w.t_g1, layout)
    offset, s_off = loss_offset(g, w.tau_d, layout)
    spacing, s_sp = loss_spacing(g, layout)
    sink.values += (w.lambda_g1 * s_g1.values + w.lambda_offset * s_off.values
                    + w.lambda_spacing * s_sp.values)
    total = (w.lambda_cover * cover + w.lambda_overlap * overlap + w.lambda_g1 * g1
             + w.lambda_offset * offset + w.lambda_spacing * spacing)
    return LossBreakdown(cover, overlap, g1, offset, spacing, total), sink, bundle


# ---------------------------------------------------------------------- Adam
@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    layout: ParamLayout | None = None

    def realign(self, layout: ParamLayout) -> None:
        """Carry moments over to a new layout after a topology edit.

        Scalars whose (entity, field) survives keep their moments; new ones
        start from zero.
        """
        if self.layout is not None and self.layout.node_ids == layout.node_ids \
                and self.layout.edge_ids == layout.edge_ids:
            return
        m = np.zeros(layout.size)
        v = np.zeros(layout.size)
        old = self.layout
        if old is not None and self.m is not None:
            for nid in set(old.node_ids) & set(layout.node_ids):
                i, j = old.node_index[nid], layout.node_index[nid]
                m[j:j + 2] = self.m[i:i + 2]
                v[j:j + 2] = self.v[i:i + 2]
            for eid in set(old.edge_ids) & set(layout.edge_ids):
                i, j = old.edge_index[eid], layout.edge_index[eid]
                m[j:j + 5] = self.m[i:i + 5]
                v[j:j + 5] = self.v[i:i + 5]
        self.m, self.v, self.layout = m, v, layout


def project_params(params: np.ndarray, layout: ParamLayout, min_width: float = MIN_WIDTH):
    """Clamp alphas to [0, 1] and widths to at least ``min_width`` (in place)."""
    if len(layout.edge_ids):
        for name in ("alpha0", "alpha1"):
            idx = layout.field_slice(name)
            params[idx] = np.clip(params[idx], 0.0, 1.0)
        idx = layout.field_slice("width")
        params[idx] = np.maximum(params[idx], min_width)
    return params


def param_scale(layout: ParamLayout, length_scale: float) -> np.ndarray:
    """Per-scalar step scale: ``length_scale`` for lengths, 1 for alphas."""
    scale = np.full(layout.size, float(length_scale))
    if len(layout.edge_ids):
        for name in ("alpha0", "alpha1"):
            scale[layout.field_slice(name)] = 1.0
    return scale


def adam_step(state: AdamState, params, grads, layout: ParamLayout | None = None,
              scale=None, project: bool = True) -> np.ndarray:
    """One bias-corrected Adam update followed by projection.

    ``scale`` multiplies the step per scalar; it is equivalent to running
    Adam on ``params / scale``.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise LayoutMismatch("parameter and gradient vectors differ in length")
    if layout is not None:
        if layout.size != params.size:
            raise LayoutMismatch("layout does not match the parameter vector")
        state.realign(layout)
    elif state.m is None or state.m.shape != params.shape:
        if state.m is not None:
            raise LayoutMismatch("Adam moments do not match the parameter vector")
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if scale is not None:
        step = step * scale
    out = params - step
    if project and layout is not None:
        project_params(out, layout)
    return out

