"""Exception hierarchy shared across the package."""


class DogeError(Exception):
    """Base class for all errors raised by :mod:`doge`."""


class DegenerateChord(DogeError, ValueError):
    """Edge endpoints coincide, so the chord normal is undefined."""


class GraphError(DogeError):
    pass


class SelfLoop(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class MissingNode(GraphError, KeyError):
    pass


class MissingId(GraphError, KeyError):
    pass


class NodeStillConnected(GraphError):
    pass


class LayoutMismatch(DogeError, ValueError):
    """A parameter/gradient vector does not match the graph layout."""


class DimensionMismatch(DogeError, ValueError):
    """Two coverage maps (or a map and a canvas) disagree in shape."""


class TopologyError(DogeError):
    pass


class TooFar(TopologyError):
    pass


class TooYoung(TopologyError):
    pass


class IsEndpoint(TopologyError):
    pass


class WrongDegree(TopologyError):
    pass


class NotCollinear(TopologyError):
    pass


class EmptyTarget(DogeError):
    """The target mask has no pixel above the segmentation threshold."""


class ZeroLength(DogeError, ValueError):
    pass


class IterationFailed(DogeError):
    """An operator raised during an optimization run; carries the iteration."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.cause = cause
