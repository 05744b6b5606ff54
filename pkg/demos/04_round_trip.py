"""Round trip on synthetic truth: generate a network, rasterize it with the
hard rasterizer, fit a graph from the mask alone, then score it.

usage: python 04_round_trip.py [layout] [seed] [out_dir]
"""
import sys
from pathlib import Path

from doge.metrics import evaluate, polyline_density
from doge.pipeline import RunConfig, run, write_outputs
from doge.raster import render_graph
from doge.synth import SynthSpec, generate, hard_rasterize

layout = sys.argv[1] if len(sys.argv) > 1 else "t_junctions"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
out = Path(sys.argv[3] if len(sys.argv) > 3 else "demo_out") / f"{layout}_{seed}"

spec = SynthSpec(layout, seed=seed)
truth = generate(spec)
mask = hard_rasterize(truth, spec.canvas)
print(f"{layout}: {len(truth.nodes)} nodes, {len(truth.edges)} edges, "
      f"road fraction {mask.data.mean():.3f}")


def progress(it, lb, g):
    if it % 25 == 0:
        print(f"  iter {it:3d}  cover {lb.cover:.5f}  nodes {len(g.nodes):3d}  edges {len(g.edges):3d}")


report = run(mask, RunConfig(seed=seed), snapshot_dir=out / "snapshots", progress=progress)
write_outputs(report, out)
mask.save(out / "mask.png")
truth.save(out / "truth.json")

rep = evaluate(report.graph, truth, render_graph(report.graph, spec.canvas).union_map(), mask)
print(f"stopped: {report.stop_reason} after {report.iterations} iterations ({report.wall_time:.1f} s)")
print(f"pixel F1 {rep.pixel_f1:.3f}, IoU {rep.iou:.3f}, node recovery {rep.node_recovery:.2f}, "
      f"junction recovery {rep.junction_recovery:.2f}")
print(f"{rep.edges_per_km:.1f} edges/km against {polyline_density(rep):.0f} segments/km as a 1 m polyline")
print("outputs in", out)
