"""Bezier edges: how (alpha, d) place the inner control points, what the
ribbon polygon looks like, and that splitting keeps the trace."""
import numpy as np

from doge.geometry import arc_length, bernstein, build_control_polygon, serialize_ribbon, split_curve
from doge.graph import BezierGraph, EdgeParams

# A straight chord with zero offsets puts P1, P2 on the chord at 1/3 and 2/3.
cp = build_control_polygon((0, 0), (30, 0), 1 / 3, 2 / 3, 0.0, 0.0)
print("straight control points:\n", cp.points)

# Offsets push P1 and P2 along the chord's left normal; opposite signs give an S.
s = build_control_polygon((0, 0), (30, 0), 1 / 3, 2 / 3, 6.0, -6.0)
print("S-curve control points:\n", s.points)
print(f"arc length {arc_length(s):.3f} m for a 30 m chord")

# The ribbon is the closed outline used by both rasterizers.
ribbon = serialize_ribbon(s, width=5.0)
print(f"ribbon: {len(ribbon.vertices)} vertices")

# de Casteljau split at t=0.4, then check both halves lie on the original.
left, right = split_curve(s, 0.4)
dense = bernstein(np.linspace(0, 1, 4000)) @ s.points
for name, half in (("left", left), ("right", right)):
    pts = bernstein(np.linspace(0, 1, 200)) @ half.points
    gap = np.hypot(*(pts[:, None] - dense[None]).transpose(2, 0, 1)).min(axis=1).max()
    print(f"{name} half: {half.p0} -> {half.p3}, farthest from original {gap:.2e} m")

# Graphs own nodes and edges; parameters flatten to one vector for the optimizer.
g = BezierGraph()
a, b, c = g.add_node((0, 0)), g.add_node((30, 0)), g.add_node((30, 25))
g.add_edge(a, b, EdgeParams(5.0, 1 / 3, 2 / 3, 6.0, -6.0))
g.add_edge(b, c, EdgeParams(4.0))
x, layout = g.flatten_params()
print(f"{len(g.nodes)} nodes, {len(g.edges)} edges, {layout.size} parameters")
print("first node as JSON:", g.to_dict()["nodes"][0])
