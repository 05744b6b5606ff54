import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from doge.errors import EmptyTarget
from doge.graph import BezierGraph
from doge.pipeline import (RunConfig, graph_svg, initialize_graph, run, snapshot,
                           write_outputs)
from doge.raster import Canvas, CoverageMap, render_graph

from conftest import random_graph, straight_graph

C64 = Canvas(64, 64, 1.0)


def blob(x0, y0, w, h, shape=(64, 64)):
    t = np.zeros(shape)
    t[y0:y0 + h, x0:x0 + w] = 1.0
    return CoverageMap(t)


def test_initialize_empty_target():
    with pytest.raises(EmptyTarget):
        initialize_graph(CoverageMap(np.zeros((32, 32))))


def test_initialize_in_blob():
    t = blob(20, 30, 10, 4)
    g = initialize_graph(t, RunConfig(seed=1))
    assert len(g.edges) >= 1
    for e in g.edges.values():
        mid = 0.5 * (g.nodes[e.a].position + g.nodes[e.b].position)
        assert t.data[int(mid[1]), int(mid[0])] == 1.0
        assert (e.alpha0, e.alpha1, e.d0, e.d1) == (1 / 3, 2 / 3, 0.0, 0.0)


def test_initialize_count_and_determinism():
    t = blob(0, 0, 64, 40)  # 2560 m^2 -> about 9 edges
    g1 = initialize_graph(t, RunConfig(seed=4))
    g2 = initialize_graph(t, RunConfig(seed=4))
    assert len(g1.edges) == round(2560 / 300)
    assert g1.to_json() == g2.to_json()
    assert len(initialize_graph(blob(0, 0, 3, 3), RunConfig()).edges) == 4


def test_zero_iterations():
    t = blob(10, 10, 30, 6)
    rep = run(t, RunConfig(max_iterations=0, seed=2))
    assert rep.stop_reason == "max_iter" and rep.losses == [] and rep.iterations == 0
    assert rep.graph.to_json() == initialize_graph(t, RunConfig(seed=2)).to_json()


def test_history_lengths():
    t = blob(10, 10, 30, 6)
    rep = run(t, RunConfig(max_iterations=12, seed=0))
    assert len(rep.losses) == rep.iterations == 12
    assert len(rep.losses_csv().strip().splitlines()) == 13


def test_infinite_tolerance_stops_at_first_window():
    t = blob(10, 10, 30, 6)
    g, _, _ = straight_graph((12, 13), (38, 13), width=6)
    cfg = RunConfig(max_iterations=300, early_stop_window=5, early_stop_tol=np.inf)
    cfg.topo.road_add_period = 0
    rep = run(t, cfg, init_graph=g)
    assert rep.stop_reason == "converged" and rep.iterations == 6


def test_converged_implies_quiet_window():
    g, _, _ = straight_graph((12.3, 20.2), (50.1, 41.7), width=6)
    t = render_graph(g, C64).union_map()
    rep = run(t, RunConfig(max_iterations=300), init_graph=g)
    assert rep.stop_reason == "converged" and rep.iterations > 30
    last = rep.iterations - 1
    assert not [e for e in rep.edits if e["iter"] > last - 30]


def test_run_determinism():
    rng = np.random.default_rng(7)
    truth = random_graph(rng, 3)
    t = render_graph(truth, C64).union_map()
    a = run(t, RunConfig(max_iterations=40, seed=3))
    b = run(t, RunConfig(max_iterations=40, seed=3, workers=3))
    assert a.graph.to_json() == b.graph.to_json()
    assert a.losses_csv() == b.losses_csv()


def test_run_does_not_mutate_init_graph():
    g, _, _ = straight_graph((12, 13), (38, 13), width=6)
    before = g.to_json()
    run(blob(10, 10, 30, 6), RunConfig(max_iterations=3), init_graph=g)
    assert g.to_json() == before


def test_snapshot_files(tmp_path):
    t = blob(10, 10, 30, 6)
    rep = run(t, RunConfig(max_iterations=60, snapshot_period=10, early_stop_tol=0.0),
              snapshot_dir=tmp_path)
    assert rep.iterations == 60
    svgs = sorted(p.name for p in tmp_path.glob("iter_*.svg"))
    assert svgs == [f"iter_{k:05d}.svg" for k in range(0, 61, 10)]
    assert len(sorted(tmp_path.glob("iter_*.png"))) == len(svgs)


def test_snapshot_zero_iterations(tmp_path):
    run(blob(10, 10, 30, 6), RunConfig(max_iterations=0), snapshot_dir=tmp_path)
    assert [p.name for p in tmp_path.glob("iter_*.svg")] == ["iter_00000.svg"]


def test_snapshot_contents(tmp_path):
    rng = np.random.default_rng(2)
    g = random_graph(rng, 3)
    bundle = render_graph(g, C64)
    svg_path, png_path = snapshot(g, bundle, 0, tmp_path)
    root = ET.parse(svg_path).getroot()
    paths = [el for el in root.iter() if el.tag.endswith("path")]
    assert len(paths) == len(g.edges)
    back = CoverageMap.load(png_path)
    assert np.array_equal(back.to_uint8(), bundle.union_map().to_uint8())


def test_graph_svg_empty():
    assert "<path" not in graph_svg(BezierGraph(), 10, 10)


def test_write_outputs(tmp_path):
    t = blob(10, 10, 30, 6)
    rep = run(t, RunConfig(max_iterations=5))
    write_outputs(rep, tmp_path)
    for name in ("graph.json", "losses.csv", "edits.jsonl", "report.json"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "losses.csv").read_text().splitlines()[0] == \
        "iter,cover,overlap,g1,offset,spacing,total,nodes,edges"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["stop_reason"] in ("converged", "max_iter") and "wall_time" in report
    BezierGraph.load(tmp_path / "graph.json").validate()
    for line in (tmp_path / "edits.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert rec["op"] in ("merge", "tjunction", "collinear", "prune", "add")


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(max_iterations=-1)
    with pytest.raises(ValueError):
        RunConfig(lr=0)
