"""Exception types raised by the annotation pipeline and its helpers."""


class RatAnnotError(Exception):
    """Base class for all library errors."""


class EmptyMaskError(RatAnnotError):
    """An operation that needs at least one foreground pixel got none."""


class MultipleComponentsError(RatAnnotError):
    """A single connected component was required."""


class DegeneratePolygonError(RatAnnotError):
    """Polygon area is below one pixel."""


class DimensionMismatchError(RatAnnotError):
    """Two rasters that must share dimensions do not."""


class EmptySequenceError(RatAnnotError):
    """A frame sequence needs at least one frame."""


class ContourTooShortError(RatAnnotError):
    """Contour has too few points for the requested arc step."""


class TooFewEndpointsError(RatAnnotError):
    """Skeleton graph has fewer than two endpoints."""


class DisconnectedEndpointsError(RatAnnotError):
    """Skeleton endpoints do not share a connected component."""


class NoMarkersError(RatAnnotError):
    """Watershed needs at least one marker label."""


class MarkerOutsideDomainError(RatAnnotError):
    """Watershed markers must lie inside the flooding domain."""


class PathTooShortError(RatAnnotError):
    """Skeleton path has too few nodes for the requested split."""


class KeypointOutsideMaskError(RatAnnotError):
    """A keypoint that must sit on the instance mask does not."""


class SplineFitError(RatAnnotError):
    """Boundary spline fitting failed on degenerate geometry."""


class SingularSystemError(RatAnnotError):
    """Thin-plate-spline system is singular (collinear or duplicate points)."""


class TooFewInstancesError(RatAnnotError):
    """Occlusion synthesis needs at least two instances."""


class PlacementFailureError(RatAnnotError):
    """Rejection sampling could not find a valid placement."""


class OutOfBoundsError(RatAnnotError):
    """Paste offset leaves too little of the patch inside the canvas."""


class SchemaError(RatAnnotError):
    """A JSON document does not match the annotation schema."""


class UnknownImageIdError(RatAnnotError):
    """Predictions reference an image id absent from the ground truth."""


class NoVisibleKeypointsError(RatAnnotError):
    """OKS needs at least one ground-truth-visible keypoint."""


class NonPositiveAreaError(RatAnnotError):
    """OKS needs a positive ground-truth area."""


class PoseInvalidError(RatAnnotError):
    """A synthetic pose violates its geometric invariants."""
