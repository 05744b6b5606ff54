"""Road-network reconstruction as a graph of cubic Bezier edges fitted to a raster mask."""
from .errors import DogeError, EmptyTarget
from .geometry import ControlPolygon, build_control_polygon, serialize_ribbon
from .graph import BezierGraph, EdgeParams
from .raster import Canvas, CoverageMap, render_graph

__all__ = ["BezierGraph", "EdgeParams", "ControlPolygon", "build_control_polygon",
           "serialize_ribbon", "Canvas", "CoverageMap", "render_graph", "DogeError",
           "EmptyTarget"]
__version__ = "0.1.0"
