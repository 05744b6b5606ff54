"""The discrete operators one at a time: merge, T-junction, collinear
merge, prune, and a full pass that runs them to a fixpoint."""
import numpy as np

from doge.graph import BezierGraph, EdgeParams
from doge.topoadapt import (TopoConfig, create_t_junction, merge_collinear, merge_nodes, prune,
                            topo_pass)

cfg = TopoConfig()
OLD = 100  # old enough for every age gate

g = BezierGraph()
u, v = g.add_node((10, 10), age=OLD), g.add_node((12.5, 10.5), age=OLD)
w = merge_nodes(g, u, v, cfg)
print("merged node at", g.nodes[w].position)

g = BezierGraph()
a, b = g.add_node((0, 0), age=OLD), g.add_node((40, 0), age=OLD)
main = g.add_edge(a, b, EdgeParams(5.0, 1 / 3, 2 / 3, 4.0, 4.0), age=OLD)
tip = g.add_node((20, 25), age=OLD)
end = g.add_node((20, 5.5), age=OLD)
g.add_edge(end, tip, age=OLD)
j, e1, e2 = create_t_junction(g, end, main, cfg)
print(f"T-junction node {j} at {g.nodes[j].position}, degree {g.degree(j)}")

g = BezierGraph()
p = [g.add_node(q, age=OLD) for q in ((0, 0), (20, 1), (40, 0))]
g.add_edge(p[0], p[1], age=OLD)
g.add_edge(p[1], p[2], age=OLD)
new, rms = merge_collinear(g, p[1], cfg)
print(f"collinear merge -> one edge, refit rms {rms:.3f} m")

g = BezierGraph()
g.add_edge(g.add_node((5, 5), age=OLD), g.add_node((5.4, 5), age=OLD), age=OLD)
print("prune removed", prune(g, cfg))

# A messy graph: a full pass edits it, a second pass finds nothing to do.
rng = np.random.default_rng(3)
g = BezierGraph()
for _ in range(12):
    c = rng.uniform(10, 54, 2)
    d = rng.normal(size=2)
    d *= 5 / np.hypot(*d)
    g.add_edge(g.add_node(c - d, age=OLD), g.add_node(c + d, age=OLD), age=OLD)
z = np.zeros((64, 64))
log = topo_pass(g, z, z, cfg, iteration=21, rng=rng)
print(f"first pass: {len(log)} edits:", sorted({e['op'] for e in log}))
print("second pass:", topo_pass(g, z, z, cfg, iteration=21, rng=rng))
