"""In-memory slicing kd-tree for low-dimensional points."""

from .construction import BuildConfig, LeafThresholds, build, compute_thresholds
from .model import MAXVAL, BoundingBox, Point, RangeQuery, Schema, encode_dataset
from .nodes import Layout, LeafType, QueryStats
from .query import KnnResult, RangeResult
from .tree import InvariantError, SkdTree
from .updates import DeleteOutcome, InsertOutcome

__all__ = [
    "MAXVAL",
    "BoundingBox",
    "BuildConfig",
    "DeleteOutcome",
    "InsertOutcome",
    "InvariantError",
    "KnnResult",
    "Layout",
    "LeafThresholds",
    "LeafType",
    "Point",
    "QueryStats",
    "RangeQuery",
    "RangeResult",
    "Schema",
    "SkdTree",
    "build",
    "compute_thresholds",
    "encode_dataset",
]
