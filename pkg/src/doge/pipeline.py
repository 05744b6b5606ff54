"""The optimization loop: initialize from a mask, then alternate topology
edits with Adam steps on the geometric loss until the coverage plateaus."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffalign import AdamState, LossBreakdown, LossWeights, adam_step, param_scale, total_loss_and_grad
from .errors import EmptyTarget, IterationFailed
from .graph import BezierGraph, EdgeParams
from .raster import CoverageMap, RenderBundle, render_graph
from .topoadapt import TopoConfig, topo_pass

log = logging.getLogger(__name__)

INIT_AREA_PER_EDGE = 300.0  # m^2 of road per initial edge
INIT_MIN_EDGES, INIT_MAX_EDGES = 4, 256


@dataclass
class RunConfig:
    max_iterations: int = 300
    early_stop_window: int = 30
    early_stop_tol: float = 1e-3
    seed: int = 0
    snapshot_period: int = 10
    lr: float = 1e-3
    workers: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    topo: TopoConfig = field(default_factory=TopoConfig)

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.early_stop_window < 1:
            raise ValueError("early_stop_window must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class RunReport:
    graph: BezierGraph
    losses: list                 # LossBreakdown per executed iteration
    edits: list                  # edit-log dicts
    stop_reason: str             # "converged" | "max_iter"
    wall_time: float
    iterations: int = 0
    node_counts: list = field(default_factory=list)
    edge_counts: list = field(default_factory=list)

    def losses_csv(self) -> str:
        rows = [LossBreakdown.CSV_HEADER]
        for it, (lb, n, e) in enumerate(zip(self.losses, self.node_counts, self.edge_counts)):
            rows.append(lb.csv_row(it, n, e))
        return "\n".join(rows) + "\n"

    def edits_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.edits)


def initialize_graph(target: CoverageMap, cfg: RunConfig | None = None,
                     rng: np.random.Generator | None = None) -> BezierGraph:
    """Scatter straight edges over road pixels at random orientations."""
    cfg = cfg or RunConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    topo = cfg.topo
    rows, cols = np.nonzero(target.data > topo.tau_seg)
    if len(rows) == 0:
        raise EmptyTarget("target has no pixel above the road threshold")
    mpp = target.meters_per_pixel
    area = len(rows) * mpp * mpp
    n = int(np.clip(round(area / INIT_AREA_PER_EDGE), INIT_MIN_EDGES, INIT_MAX_EDGES))
    picks = rng.choice(len(rows), size=n, replace=len(rows) < n)
    g = BezierGraph(mpp)
    half = 0.5 * topo.init_edge_length
    for k in picks:
        c = np.array([(cols[k] + 0.5) * mpp, (rows[k] + 0.5) * mpp])
        ang = rng.uniform(0.0, 2 * math.pi)
        u = np.array([math.cos(ang), math.sin(ang)])
        a = g.add_node(c - half * u)
        b = g.add_node(c + half * u)
        g.add_edge(a, b, EdgeParams(topo.init_edge_width))
    return g


def _plateaued(cover_history, edit_iters, window, tol) -> bool:
    """True when the moving average of the last ``window`` coverage losses
    moved by less than ``tol`` (relative) since the previous iteration and
    no topology edit happened inside that window."""
    n = len(cover_history)
    if n < window + 1:
        return False
    if edit_iters and edit_iters[-1] > n - 1 - window:
        return False
    last = float(np.mean(cover_history[n - window:]))
    prev = float(np.mean(cover_history[n - window - 1:n - 1]))
    return abs(last - prev) / max(prev, 1e-12) < tol


def run(target: CoverageMap, cfg: RunConfig | None = None, init_graph: BezierGraph | None = None,
        snapshot_dir=None, progress=None) -> RunReport:
    """Optimize a Bezier graph against ``target``.

    Each iteration edits topology first, then takes one Adam step on the
    resulting graph, then ages every node and edge. ``init_graph`` replaces
    the random initialization (it is copied, not modified).
    """
    cfg = cfg or RunConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    g = init_graph.copy() if init_graph is not None else initialize_graph(target, cfg, rng)
    canvas = target.canvas
    scale_len = max(canvas.width, canvas.height) * canvas.meters_per_pixel
    state = AdamState(lr=cfg.lr)
    losses, edits, covers, edit_iters = [], [], [], []
    nodes, edges_n = [], []
    stop = "max_iter"
    bundle = None
    for it in range(cfg.max_iterations):
        render = bundle.composite_union if bundle is not None else None
        try:
            new_edits = topo_pass(g, target, render, cfg.topo, it, rng,
                                  renderer=lambda gg: render_graph(gg, canvas, cfg.workers).composite_union)
            if new_edits:
                edits.extend(new_edits)
                edit_iters.append(it)
            lb, sink, bundle = total_loss_and_grad(g, target, cfg.weights, cfg.workers)
        except Exception as exc:
            raise IterationFailed(it, exc) from exc
        if snapshot_dir is not None and cfg.snapshot_period > 0 and it % cfg.snapshot_period == 0:
            snapshot(g, bundle, it, snapshot_dir)
        losses.append(lb)
        covers.append(lb.cover)
        nodes.append(len(g.nodes))
        edges_n.append(len(g.edges))
        params, layout = g.flatten_params()
        if layout.size:
            params = adam_step(state, params, sink.values, layout, param_scale(layout, scale_len))
            g.unflatten_params(params, layout)
        g.tick_ages()
        if progress is not None:
            progress(it, lb, g)
        log.debug("iter %d total %.6f nodes %d edges %d", it, lb.total, len(g.nodes), len(g.edges))
        if _plateaued(covers, edit_iters, cfg.early_stop_window, cfg.early_stop_tol):
            stop = "converged"
            break
    if snapshot_dir is not None and cfg.snapshot_period > 0:
        # closing frame: the graph after the last update
        snapshot(g, render_graph(g, canvas, cfg.workers), len(losses), snapshot_dir)
    return RunReport(g, losses, edits, stop, time.perf_counter() - t0, len(losses), nodes, edges_n)


# ----------------------------------------------------------------- outputs
def graph_svg(g: BezierGraph, width_px: int, height_px: int, meters_per_pixel: float | None = None) -> str:
    """SVG with one cubic path per edge (stroke = road width) and a circle per node."""
    mpp = meters_per_pixel or g.meters_per_pixel
    s = 1.0 / mpp
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{height_px}" '
           f'viewBox="0 0 {width_px} {height_px}">',
           f'<rect width="{width_px}" height="{height_px}" fill="black"/>']
    for eid in sorted(g.edges):
        if g.chord_length(eid) <= 0:
            continue
        p = g.control_polygon(eid).points * s
        d = "M {:.3f} {:.3f} C {:.3f} {:.3f} {:.3f} {:.3f} {:.3f} {:.3f}".format(*p.ravel())
        out.append(f'<path id="e{eid}" d="{d}" fill="none" stroke="white" stroke-opacity="0.6" '
                   f'stroke-width="{g.edges[eid].width * s:.3f}"/>')
    for nid in sorted(g.nodes):
        x, y = g.nodes[nid].position * s
        out.append(f'<circle id="n{nid}" cx="{x:.3f}" cy="{y:.3f}" r="1.5" fill="red"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def snapshot(g: BezierGraph, bundle: RenderBundle, iteration: int, out_dir):
    """Write ``iter_%05d.svg`` and ``iter_%05d.png`` for one iteration."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"iter_{iteration:05d}"
    c = bundle.canvas
    (stem.with_suffix(".svg")).write_text(graph_svg(g, c.width, c.height, c.meters_per_pixel))
    bundle.union_map().save(stem.with_suffix(".png"))
    return stem.with_suffix(".svg"), stem.with_suffix(".png")


def write_outputs(report: RunReport, out_dir, extra: dict | None = None) -> None:
    """Write graph.json, losses.csv, edits.jsonl and report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.graph.save(out / "graph.json")
    (out / "losses.csv").write_text(report.losses_csv())
    (out / "edits.jsonl").write_text(report.edits_jsonl())
    final = asdict(report.losses[-1]) if report.losses else {}
    summary = {"stop_reason": report.stop_reason, "iterations": report.iterations,
               "wall_time": report.wall_time, "nodes": len(report.graph.nodes),
               "edges": len(report.graph.edges), "final_loss": final}
    if extra:
        summary.update(extra)
    (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
