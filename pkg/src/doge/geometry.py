"""Cubic Bezier math for graph edges.

Points are plain ``float64`` arrays of shape ``(2,)`` in meters. An edge's
inner control points are not stored directly; they are rebuilt from the chord
between the endpoint nodes, a position along that chord (``alpha``) and a
perpendicular offset (``d``) along the chord's left normal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DegenerateChord

CHORD_EPS = 1e-9
TANGENT_EPS = 1e-9
ARC_SAMPLES = 100
RIBBON_SPACING = 1.0
MIN_RIBBON_SAMPLES = 8


def left_normal(v):
    """Rotate ``v`` by +90 degrees: ``(x, y) -> (-y, x)``."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class ControlPolygon:
    points: np.ndarray  # (4, 2)

    @property
    def p0(self):
        return self.points[0]

    @property
    def p1(self):
        return self.points[1]

    @property
    def p2(self):
        return self.points[2]

    @property
    def p3(self):
        return self.points[3]

    def reversed(self) -> "ControlPolygon":
        return ControlPolygon(self.points[::-1].copy())

    @classmethod
    def from_points(cls, p0, p1, p2, p3) -> "ControlPolygon":
        return cls(np.array([p0, p1, p2, p3], dtype=float))


@dataclass(frozen=True)
class Ribbon:
    vertices: np.ndarray  # (2 * samples, 2), closed implicitly
    source_edge: int | None = None


def chord_frame(pi, pj):
    """Return ``(chord, length, unit_normal)`` for the chord ``pi -> pj``."""
    c = np.asarray(pj, dtype=float) - np.asarray(pi, dtype=float)
    length = math.hypot(c[0], c[1])
    if length <= CHORD_EPS:
        raise DegenerateChord(f"chord length {length:.3g} m is degenerate")
    return c, length, left_normal(c / length)


def build_control_polygon(pi, pj, alpha0, alpha1, d0, d1) -> ControlPolygon:
    pi = np.asarray(pi, dtype=float)
    pj = np.asarray(pj, dtype=float)
    c, _, n = chord_frame(pi, pj)
    p1 = pi + alpha0 * c + d0 * n
    p2 = pi + alpha1 * c + d1 * n
    return ControlPolygon(np.array([pi, p1, p2, pj]))


def control_polygon_vjp(pi, pj, alpha0, alpha1, d0, d1, grad_points):
    """Pull a gradient on the four control points back to edge parameters.

    Returns ``(g_pi, g_pj, g_alpha0, g_alpha1, g_d0, g_d1)``.
    """
    pi = np.asarray(pi, dtype=float)
    pj = np.asarray(pj, dtype=float)
    g = np.asarray(grad_points, dtype=float)
    c, length, n = chord_frame(pi, pj)
    g1, g2 = g[1], g[2]
    g_alpha0 = float(g1 @ c)
    g_alpha1 = float(g2 @ c)
    g_d0 = float(g1 @ n)
    g_d1 = float(g2 @ n)
    g_n = d0 * g1 + d1 * g2
    # n = J c / |c|, J = +90 rotation, so dn/dc = J (I - u u^T) / |c|
    u = c / length
    g_u = np.array([g_n[1], -g_n[0]])
    g_c = (g_u - u * (u @ g_u)) / length
    g_pi = g[0] + (1 - alpha0) * g1 + (1 - alpha1) * g2 - g_c
    g_pj = g[3] + alpha0 * g1 + alpha1 * g2 + g_c
    return g_pi, g_pj, g_alpha0, g_alpha1, g_d0, g_d1


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise ValueError("curve parameter t must lie in [0, 1]")
    return t


def bernstein(t):
    """Cubic Bernstein basis evaluated at ``t``; shape ``(len(t), 4)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = 1.0 - t
    return np.stack([s**3, 3 * s**2 * t, 3 * s * t**2, t**3], axis=-1)


def bernstein_deriv(t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = 1.0 - t
    return np.stack([-3 * s**2, 3 * s**2 - 6 * s * t, 6 * s * t - 3 * t**2, 3 * t**2], axis=-1)


def eval_curve(cp: ControlPolygon, t):
    """Evaluate the curve; a scalar ``t`` gives a point, an array gives ``(n, 2)``."""
    t = _check_t(t)
    pts = bernstein(t) @ cp.points
    return pts[0] if t.ndim == 0 else pts


def _raw_tangent(cp, t):
    return bernstein_deriv(t) @ cp.points


def eval_tangent(cp: ControlPolygon, t):
    """Derivative of the curve, falling back to the chord where it vanishes."""
    t = _check_t(t)
    tan = _raw_tangent(cp, t)
    norms = np.hypot(tan[:, 0], tan[:, 1])
    bad = norms < TANGENT_EPS
    if np.any(bad):
        tan[bad] = cp.p3 - cp.p0
    return tan[0] if t.ndim == 0 else tan


def arc_length(cp: ControlPolygon, samples: int = ARC_SAMPLES) -> float:
    # relative to P0 so coincident control points give exactly zero
    pts = bernstein(np.linspace(0.0, 1.0, samples)) @ (cp.points - cp.points[0])
    seg = np.diff(pts, axis=0)
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


def sample_polyline(cp: ControlPolygon, interval: float = 1.0) -> np.ndarray:
    """Points at uniform ``t`` with roughly ``interval`` meters between them."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    n = max(1, int(round(arc_length(cp) / interval)))
    return bernstein(np.linspace(0.0, 1.0, n + 1)) @ cp.points


def ribbon_sample_count(cp: ControlPolygon) -> int:
    return max(MIN_RIBBON_SAMPLES, int(math.ceil(arc_length(cp) / RIBBON_SPACING)))


@dataclass
class RibbonFrame:
    """Centerline samples and unit normals, kept for gradient transport."""

    t: np.ndarray        # (n,)
    centers: np.ndarray  # (n, 2)
    tangents: np.ndarray  # (n, 2) raw derivative (chord where it vanished)
    normals: np.ndarray  # (n, 2) unit left normals
    tnorm: np.ndarray    # (n,) |tangent|
    fallback: np.ndarray  # (n,) bool, tangent replaced by the chord


def ribbon_frame(cp: ControlPolygon, samples: int) -> RibbonFrame:
    t = np.linspace(0.0, 1.0, samples)
    centers = bernstein(t) @ cp.points
    tan = _raw_tangent(cp, t)
    tnorm = np.hypot(tan[:, 0], tan[:, 1])
    fallback = tnorm < TANGENT_EPS
    if np.any(fallback):
        chord = cp.p3 - cp.p0
        if math.hypot(*chord) <= CHORD_EPS:
            raise DegenerateChord("cannot orient a ribbon with a vanishing tangent and chord")
        tan[fallback] = chord
        tnorm[fallback] = math.hypot(*chord)
    normals = left_normal(tan / tnorm[:, None])
    return RibbonFrame(t, centers, tan, normals, tnorm, fallback)


def ribbon_vertices(frame: RibbonFrame, width: float) -> np.ndarray:
    half = 0.5 * width * frame.normals
    left = frame.centers + half
    right = frame.centers - half
    return np.concatenate([left, right[::-1]], axis=0)


def serialize_ribbon(cp: ControlPolygon, width: float, samples: int | None = None,
                     source_edge: int | None = None) -> Ribbon:
    """Offset the centerline by ``+-width/2`` into one closed polygon."""
    if width <= 0:
        raise ValueError("ribbon width must be positive")
    if samples is None:
        samples = ribbon_sample_count(cp)
    if samples < 2:
        raise ValueError("a ribbon needs at least two centerline samples")
    if math.hypot(*(cp.p3 - cp.p0)) <= CHORD_EPS:
        raise DegenerateChord("ribbon endpoints coincide")
    frame = ribbon_frame(cp, samples)
    return Ribbon(ribbon_vertices(frame, width), source_edge)


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def split_curve(cp: ControlPolygon, t: float):
    """De Casteljau subdivision at ``t``; returns the two halves."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("split parameter must lie in [0, 1]")
    p0, p1, p2, p3 = cp.points
    p01 = p0 + t * (p1 - p0)
    p12 = p1 + t * (p2 - p1)
    p23 = p2 + t * (p3 - p2)
    p012 = p01 + t * (p12 - p01)
    p123 = p12 + t * (p23 - p12)
    mid = p012 + t * (p123 - p012)
    return (ControlPolygon(np.array([p0, p01, p012, mid])),
            ControlPolygon(np.array([mid, p123, p23, p3])))


def closest_point(cp: ControlPolygon, p, coarse: int = 64, iters: int = 8):
    """Parameter and distance of the curve point nearest to ``p``.

    A coarse scan brackets the minimum, then Newton steps on the squared
    distance refine it (clamped to [0, 1]).
    """
    p = np.asarray(p, dtype=float)
    ts = np.linspace(0.0, 1.0, coarse + 1)
    pts = bernstein(ts) @ cp.points
    d2 = ((pts - p) ** 2).sum(axis=1)
    t = float(ts[int(np.argmin(d2))])
    P = cp.points
    for _ in range(iters):
        b = bernstein(t)[0] @ P
        db = bernstein_deriv(t)[0] @ P
        s = 1.0 - t
        ddb = (6 * s * (P[2] - 2 * P[1] + P[0])
               + 6 * t * (P[3] - 2 * P[2] + P[1]))
        r = b - p
        f1 = r @ db
        f2 = db @ db + r @ ddb
        if f2 <= 0:
            break
        t_new = min(1.0, max(0.0, t - f1 / f2))
        if abs(t_new - t) < 1e-12:
            t = t_new
            break
        t = t_new
    q = bernstein(t)[0] @ cp.points
    return t, float(np.hypot(*(q - p)))


def fit_edge_params(points, t, p0, p3):
    """Least-squares ``(alpha0, alpha1, d0, d1)`` for a curve through samples.

    The endpoints stay pinned to ``p0``/``p3``; ``points[k]`` is matched to
    the curve at ``t[k]``. Alphas are bounded to [0, 1]. Returns the four
    parameters and the RMS residual in meters.
    """
    points = np.asarray(points, dtype=float)
    t = np.asarray(t, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    p3 = np.asarray(p3, dtype=float)
    c, _, n = chord_frame(p0, p3)
    b = bernstein(t)
    rhs = points - (b[:, 0] + b[:, 1] + b[:, 2])[:, None] * p0 - b[:, 3:4] * p3
    # unknowns: alpha0, d0, alpha1, d1
    cols = [b[:, 1:2] * c, b[:, 1:2] * n, b[:, 2:3] * c, b[:, 2:3] * n]
    A = np.stack([col.reshape(-1) for col in cols], axis=1)
    res = lsq_linear(A, rhs.reshape(-1), bounds=([0, -np.inf, 0, -np.inf], [1, np.inf, 1, np.inf]),
                     method="bvls")
    a0, d0, a1, d1 = (float(v) for v in res.x)
    resid = (A @ res.x - rhs.reshape(-1)).reshape(-1, 2)
    rms = float(np.sqrt(np.mean((resid**2).sum(axis=1))))
    return a0, a1, d0, d1, rms


def fit_curve_to_points(points, iterations: int = 4):
    """Fit an (alpha, d) cubic through ordered samples with pinned ends.

    Starts from chord-length parameters and re-projects each sample onto the
    current fit a few times. Returns ``(alpha0, alpha1, d0, d1, rms)`` where
    ``rms`` is the RMS distance from the samples to their nearest fitted point.
    """
    points = np.asarray(points, dtype=float)
    p0, p3 = points[0], points[-1]
    seg = np.hypot(*np.diff(points, axis=0).T)
    total = seg.sum()
    if total <= CHORD_EPS:
        raise DegenerateChord("cannot fit a curve to coincident samples")
    t = np.concatenate([[0.0], np.cumsum(seg) / total])
    fit = fit_edge_params(points, t, p0, p3)
    for _ in range(iterations):
        cp = build_control_polygon(p0, p3, *fit[:4])
        t = np.array([closest_point(cp, q)[0] for q in points])
        t[0], t[-1] = 0.0, 1.0
        fit = fit_edge_params(points, t, p0, p3)
    cp = build_control_polygon(p0, p3, *fit[:4])
    dists = [closest_point(cp, q)[1] for q in points]
    return (*fit[:4], float(np.sqrt(np.mean(np.square(dists)))))
