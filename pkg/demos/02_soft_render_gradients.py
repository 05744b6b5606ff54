"""Soft rendering and its analytic gradient, checked against finite
differences for every parameter of a small graph."""
import numpy as np

from doge.diffalign import total_loss_and_grad
from doge.graph import BezierGraph, EdgeParams
from doge.raster import Canvas, CoverageMap, render_graph

canvas = Canvas(64, 64, 1.0)
g = BezierGraph()
a, b, c = g.add_node((12.3, 20.1)), g.add_node((48.7, 28.4)), g.add_node((30.2, 52.9))
g.add_edge(a, b, EdgeParams(4.2, 0.3, 0.7, 5.0, -2.5))
g.add_edge(b, c, EdgeParams(3.3, 0.35, 0.65, -3.0, 1.0))

bundle = render_graph(g, canvas)
print(f"rendered mass {bundle.composite_union.sum():.1f} px, max {bundle.composite_union.max():.2f}")

# A target slightly off the current geometry so every term has a gradient.
target = np.zeros(canvas.shape)
target[22:30, 14:50] = 1.0
target = CoverageMap(target)
lb, sink, _ = total_loss_and_grad(g, target)
print("loss terms:", {k: round(v, 6) for k, v in vars(lb).items()})

x, layout = g.flatten_params()
print(f"{'parameter':28s} {'analytic':>12s} {'numeric':>12s}")
for i, key in enumerate(layout.keys()):
    h = 1e-4 if key[2].startswith("alpha") else 1e-3
    xp = x.copy()
    xp[i] += h
    g.unflatten_params(xp, layout)
    up = total_loss_and_grad(g, target)[0].total
    xp[i] -= 2 * h
    g.unflatten_params(xp, layout)
    down = total_loss_and_grad(g, target)[0].total
    g.unflatten_params(x, layout)
    print(f"{str(key):28s} {sink.values[i]:12.4e} {(up - down) / (2 * h):12.4e}")
