"""``doge`` command line: optimize, synth, eval, render.

Tunable values are flat dotted keys (``weights.lambda_cover``,
``topo.eps_merge``, ``run.max_iterations`` ...). They come from built-in
defaults, then an optional ``--config`` file of ``key = value`` lines, then
``--key value`` flags, later layers winning. Exit status is 0 on success,
2 when the mask contains no road, 1 on any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image

from .diffalign import LossWeights
from .errors import EmptyTarget, IterationFailed
from .graph import BezierGraph
from .raster import Canvas, CoverageMap, render_graph
from .topoadapt import TopoConfig

log = logging.getLogger("doge")

EXIT_OK, EXIT_FAIL, EXIT_EMPTY = 0, 1, 2
MASK_SUFFIXES = (".png", ".pgm", ".pnm")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAIL, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ config keys
def _keys():
    """Every configurable key with its type, default and help line."""
    out = {}
    for f in fields(LossWeights):
        out[f"weights.{f.name}"] = (float, f.default, "loss weight / threshold")
    for f in fields(TopoConfig):
        typ = type(f.default)
        out[f"topo.{f.name}"] = (typ, f.default, "topology operator setting")
    out["run.max_iterations"] = (int, 300, "iteration cap")
    out["run.early_stop_window"] = (int, 30, "moving-average window for the plateau test")
    out["run.early_stop_tol"] = (float, 1e-3, "relative coverage-loss change counted as a plateau")
    out["run.seed"] = (int, 0, "seed for every random choice")
    out["run.snapshot_period"] = (int, 10, "iterations between snapshots (0 disables)")
    out["run.workers"] = (int, 1, "render threads per run")
    out["optim.lr"] = (float, 1e-3, "Adam learning rate (on canvas-normalized lengths)")
    out["canvas.meters_per_pixel"] = (float, 1.0, "ground resolution of the mask")
    return out


KEYS = _keys()


def _convert(key, raw):
    typ = KEYS[key][0]
    if typ is bool:
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise CliError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise CliError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def resolve_config(args) -> dict:
    """Merge defaults < config file < flags into a flat dict."""
    conf = {k: v[1] for k, v in KEYS.items()}
    if getattr(args, "config", None):
        conf.update(read_config_file(args.config))
    for key in KEYS:
        val = getattr(args, key, None)
        if val is not None:
            conf[key] = _convert(key, val)
    if getattr(args, "seed", None) is not None:
        conf["run.seed"] = args.seed
    return conf


def build_run_config(conf: dict):
    from .pipeline import RunConfig
    weights = LossWeights(**{k.split(".", 1)[1]: v for k, v in conf.items() if k.startswith("weights.")})
    topo = TopoConfig(**{k.split(".", 1)[1]: v for k, v in conf.items() if k.startswith("topo.")})
    return RunConfig(max_iterations=conf["run.max_iterations"],
                     early_stop_window=conf["run.early_stop_window"],
                     early_stop_tol=conf["run.early_stop_tol"], seed=conf["run.seed"],
                     snapshot_period=conf["run.snapshot_period"], lr=conf["optim.lr"],
                     workers=conf["run.workers"], weights=weights, topo=topo)


def _add_keys(p):
    grp = p.add_argument_group("configuration keys (defaults shown; override with --config or flags)")
    for key, (typ, default, text) in KEYS.items():
        grp.add_argument(f"--{key}", dest=key, type=str if typ is bool else typ, default=None,
                         metavar=typ.__name__.upper(), help=f"{text} (default: {default})")
    p.add_argument("--config", help="file of 'key = value' lines")


# ---------------------------------------------------------------- mask I/O
def load_mask(path, meters_per_pixel: float = 1.0) -> CoverageMap:
    """Read an 8-bit grayscale mask; the soft target is pixel/255 (>= 128 is road)."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"mask not found: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=float) / 255.0
    except OSError as exc:
        raise CliError(f"cannot read mask {path}: {exc}") from None
    return CoverageMap(arr, meters_per_pixel)


def _optimize_one(mask_path, out_dir, conf, snapshots: bool):
    from .pipeline import run, write_outputs
    target = load_mask(mask_path, conf["canvas.meters_per_pixel"])
    cfg = build_run_config(conf)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run(target, cfg, snapshot_dir=out / "snapshots" if snapshots else None)
    write_outputs(report, out, {"mask": str(mask_path), "seed": cfg.seed})
    return str(out), report.stop_reason, report.iterations


def _job(args):
    mask_path, out_dir, conf, snapshots = args
    try:
        return EXIT_OK, _optimize_one(mask_path, out_dir, conf, snapshots), None
    except EmptyTarget as exc:
        return EXIT_EMPTY, None, f"{mask_path}: {exc}"
    except Exception as exc:  # reported per job, the batch carries on
        return EXIT_FAIL, None, f"{mask_path}: {type(exc).__name__}: {exc}"


def cmd_optimize(args) -> int:
    conf = resolve_config(args)
    mask = Path(args.mask)
    if not mask.exists():
        raise CliError(f"mask not found: {mask}")
    if mask.is_dir():
        masks = sorted(p for p in mask.iterdir() if p.suffix.lower() in MASK_SUFFIXES)
        if not masks:
            raise CliError(f"no masks in directory {mask}")
        jobs = [(str(m), str(Path(args.out) / m.stem), dict(conf), args.snapshots) for m in masks]
    else:
        jobs = [(str(mask), args.out, dict(conf), args.snapshots)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    status = EXIT_OK
    for code, res, msg in results:
        if code != EXIT_OK:
            print(f"doge optimize: {msg}", file=sys.stderr)
            # any hard failure wins over an empty-mask status
            status = EXIT_FAIL if EXIT_FAIL in (status, code) else code
        else:
            log.info("%s: %s after %d iterations", *res)
    return status


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate, hard_rasterize
    nv, nh = (int(v) for v in args.grid.lower().split("x"))
    width = None if args.width_min is None else (args.width_min, args.width_max or args.width_min)
    spec = SynthSpec(layout=args.layout, extent=args.extent, width_range=width,
                     curvature=args.curvature, seed=args.seed,
                     meters_per_pixel=args.meters_per_pixel, grid_shape=(nv, nh), n_stubs=args.stubs)
    g = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g.save(out / "truth.json")
    hard_rasterize(g, spec.canvas, args.supersample).save(out / "mask.png")
    return EXIT_OK


def _load_graph(path) -> BezierGraph:
    path = Path(path)
    if not path.exists():
        raise CliError(f"graph not found: {path}")
    try:
        return BezierGraph.load(path)
    except (ValueError, KeyError) as exc:
        raise CliError(f"cannot parse graph {path}: {exc}") from None


def cmd_eval(args) -> int:
    from .metrics import evaluate
    pred = _load_graph(args.pred)
    truth = _load_graph(args.truth) if args.truth else None
    truth_map = pred_map = None
    if args.mask:
        truth_map = load_mask(args.mask, args.meters_per_pixel or pred.meters_per_pixel)
        if args.pred_render:
            pred_map = load_mask(args.pred_render, truth_map.meters_per_pixel)
        else:
            pred_map = render_graph(pred, truth_map.canvas).union_map()
    rep = evaluate(pred, truth, pred_map, truth_map, args.threshold, args.tol)
    text = json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _graph_canvas(g: BezierGraph, width, height, mpp) -> Canvas:
    mpp = mpp or g.meters_per_pixel
    if width is None or height is None:
        hi = np.zeros(2)
        for n in g.nodes.values():
            hi = np.maximum(hi, n.position)
        pad = max((e.width for e in g.edges.values()), default=0.0)
        auto = np.ceil((hi + pad) / mpp).astype(int)
        width = width or int(max(auto[0], 1))
        height = height or int(max(auto[1], 1))
    return Canvas(int(width), int(height), mpp)


def cmd_render(args) -> int:
    from .pipeline import graph_svg
    from .synth import hard_rasterize
    g = _load_graph(args.graph)
    canvas = _graph_canvas(g, args.width, args.height, args.meters_per_pixel)
    if not (args.svg or args.png):
        raise CliError("nothing to write: pass --svg and/or --png")
    if args.svg:
        Path(args.svg).write_text(graph_svg(g, canvas.width, canvas.height, canvas.meters_per_pixel))
    if args.png:
        hard = hard_rasterize(g, canvas).data
        soft = render_graph(g, canvas).composite_union
        side = np.concatenate([hard, np.ones((canvas.height, 2)), soft], axis=1)
        CoverageMap(side, canvas.meters_per_pixel).save(args.png)
    return EXIT_OK


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="doge", description="Fit a graph of Bezier road curves to a raster road mask.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("optimize", help="fit a graph to a mask (or a directory of masks)")
    o.add_argument("--mask", required=True, help="8-bit grayscale PNG/PGM, or a directory of them")
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("--seed", type=int, default=None, help="shorthand for --run.seed")
    o.add_argument("--jobs", type=int, default=1, help="parallel runs when --mask is a directory")
    o.add_argument("--snapshots", action="store_true", help="write SVG/PNG snapshots under out/snapshots")
    _add_keys(o)
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("synth", help="generate a synthetic truth graph and its mask")
    s.add_argument("--layout", default="single_curve",
                   choices=["single_curve", "grid", "t_junctions", "random_planar"])
    s.add_argument("--extent", type=float, default=256.0, help="canvas side in meters (default: 256)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--meters-per-pixel", type=float, default=1.0)
    s.add_argument("--width-min", type=float, default=None, help="road width range (per-layout default)")
    s.add_argument("--width-max", type=float, default=None)
    s.add_argument("--curvature", type=float, default=0.25, help="max |d| / chord (default: 0.25)")
    s.add_argument("--grid", default="2x2", help="vertical x horizontal roads for the grid layout")
    s.add_argument("--stubs", type=int, default=2, help="side roads for the t_junctions layout")
    s.add_argument("--supersample", type=int, default=8)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score a predicted graph against a mask and/or a truth graph")
    e.add_argument("--pred", required=True, help="predicted graph.json")
    e.add_argument("--truth", help="truth graph.json")
    e.add_argument("--mask", help="target mask for pixel metrics")
    e.add_argument("--pred-render", help="use this PNG instead of rendering --pred")
    e.add_argument("--out", help="report path (stdout if omitted)")
    e.add_argument("--tol", type=float, default=5.0, help="node match radius in meters (default: 5)")
    e.add_argument("--threshold", type=float, default=0.5, help="binarization level (default: 0.5)")
    e.add_argument("--meters-per-pixel", type=float, default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="draw a graph as SVG and as hard|soft PNG")
    r.add_argument("--graph", required=True)
    r.add_argument("--svg")
    r.add_argument("--png", help="hard (left) and soft (right) rasters side by side")
    r.add_argument("--width", type=int, default=None, help="pixels (default: fit the graph)")
    r.add_argument("--height", type=int, default=None)
    r.add_argument("--meters-per-pixel", type=float, default=None)
    r.set_defaults(func=cmd_render)
    return p


def _setup_logging():
    level = os.environ.get("DOGE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EmptyTarget as exc:
        print(f"doge {args.command}: empty target: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (CliError, IterationFailed) as exc:
        print(f"doge {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:
        print(f"doge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
