"""Pixel agreement, node/junction recovery against known truth, and compactness."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroLength
from .geometry import CHORD_EPS, sample_polyline
from .graph import BezierGraph


@dataclass
class EvalReport:
    pixel_precision: float = 0.0
    pixel_recall: float = 0.0
    pixel_f1: float = 0.0
    iou: float = 0.0
    node_recovery: float = 0.0
    junction_recovery: float = 0.0
    nodes_per_km: float = 0.0
    edges_per_km: float = 0.0
    total_length_km: float = 0.0
    polyline_segment_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _data(m):
    return np.asarray(getattr(m, "data", m), dtype=float)


def pixel_metrics(pred, truth, threshold: float = 0.5):
    """Precision, recall, F1 and IoU of two maps binarized at ``threshold``.

    Empty-set conventions: a rate whose denominator is empty is 1 when both
    maps are empty and 0 otherwise.
    """
    p, t = _data(pred), _data(truth)
    if p.shape != t.shape:
        raise DimensionMismatch(f"prediction is {p.shape[1]}x{p.shape[0]}, truth is {t.shape[1]}x{t.shape[0]}")
    pb, tb = p > threshold, t > threshold
    tp = int(np.count_nonzero(pb & tb))
    n_pred, n_truth = int(pb.sum()), int(tb.sum())
    union = int(np.count_nonzero(pb | tb))
    both_empty = n_pred == 0 and n_truth == 0
    empty_rate = 1.0 if both_empty else 0.0
    precision = tp / n_pred if n_pred else empty_rate
    recall = tp / n_truth if n_truth else empty_rate
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    iou = tp / union if union else empty_rate
    return precision, recall, f1, iou


def greedy_match(truth_pts, pred_pts, tol: float):
    """Globally greedy one-to-one matching by ascending distance within ``tol``.

    Returns the list of ``(truth_index, pred_index)`` pairs.
    """
    truth_pts = np.asarray(truth_pts, dtype=float).reshape(-1, 2)
    pred_pts = np.asarray(pred_pts, dtype=float).reshape(-1, 2)
    if len(truth_pts) == 0 or len(pred_pts) == 0:
        return []
    d = np.hypot(*(truth_pts[:, None, :] - pred_pts[None, :, :]).transpose(2, 0, 1))
    ti, pi = np.nonzero(d < tol)
    order = np.lexsort((pi, ti, d[ti, pi]))
    used_t, used_p, pairs = set(), set(), []
    for k in order:
        a, b = int(ti[k]), int(pi[k])
        if a in used_t or b in used_p:
            continue
        used_t.add(a)
        used_p.add(b)
        pairs.append((a, b))
    return pairs


def graph_recovery(pred: BezierGraph, truth: BezierGraph, tol: float = 5.0):
    """Fraction of truth nodes (and of truth junctions) with a predicted node within ``tol``.

    Junctions are nodes of degree 3 or more and are matched only against
    predicted junctions. A truth graph without junctions scores 1.0 on
    junction recovery.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")

    def positions(g, ids):
        return np.array([g.nodes[n].position for n in ids]).reshape(-1, 2)

    t_ids = sorted(truth.nodes)
    p_ids = sorted(pred.nodes)
    node_rec = (len(greedy_match(positions(truth, t_ids), positions(pred, p_ids), tol)) / len(t_ids)
                if t_ids else 1.0)
    tj = [n for n in t_ids if truth.degree(n) >= 3]
    pj = [n for n in p_ids if pred.degree(n) >= 3]
    junc_rec = (len(greedy_match(positions(truth, tj), positions(pred, pj), tol)) / len(tj)
                if tj else 1.0)
    return node_rec, junc_rec


def compactness(g: BezierGraph, interval: float = 1.0):
    """Node and edge densities per km of road, total length, and the size of
    the equivalent polyline sampled every ``interval`` meters."""
    total = 0.0
    segments = 0
    for eid in sorted(g.edges):
        if g.chord_length(eid) <= CHORD_EPS:
            continue
        total += g.edge_length(eid)
        segments += len(sample_polyline(g.control_polygon(eid), interval)) - 1
    if total <= 0:
        raise ZeroLength("graph has no road length")
    km = total / 1000.0
    return len(g.nodes) / km, len(g.edges) / km, km, segments


def evaluate(pred: BezierGraph, truth: BezierGraph | None = None, pred_map=None, truth_map=None,
             threshold: float = 0.5, tol: float = 5.0) -> EvalReport:
    rep = EvalReport()
    if pred_map is not None and truth_map is not None:
        rep.pixel_precision, rep.pixel_recall, rep.pixel_f1, rep.iou = pixel_metrics(pred_map, truth_map, threshold)
    if truth is not None:
        rep.node_recovery, rep.junction_recovery = graph_recovery(pred, truth, tol)
    try:
        rep.nodes_per_km, rep.edges_per_km, rep.total_length_km, rep.polyline_segment_count = compactness(pred)
    except ZeroLength:
        pass
    return rep


def polyline_density(report: EvalReport) -> float:
    """Segments per km of the 1 m polyline equivalent of the evaluated graph."""
    if report.total_length_km <= 0:
        return math.nan
    return report.polyline_segment_count / report.total_length_km
