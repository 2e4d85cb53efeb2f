"""Video and caption encoders."""

from .caption import NORM_FLOOR, CaptionEncoder, GatedUnit
from .video import (
    PreparedVideos,
    VideoEncoder,
    num_buckets,
    temporal_bucket,
)

__all__ = [
    "NORM_FLOOR",
    "CaptionEncoder",
    "GatedUnit",
    "PreparedVideos",
    "VideoEncoder",
    "num_buckets",
    "temporal_bucket",
]
