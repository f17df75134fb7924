"""Event-video toolkit built around the .adder representation.

Transcodes framed video and DVS-style event streams into per-pixel intensity
events, serializes them raw or arithmetic-coded, reconstructs displayable
frames, and runs corner-cluster detection and ROI rate control inside a live,
steerable pipeline.
"""

from .events import (
    D_MAX,
    D_ZERO,
    Event,
    StreamParams,
    SentinelDecimationError,
    display_value,
    intensity_per_tick,
    validate_params,
)
from .pixel import PixelState, integrate, next_d

__all__ = [
    "D_MAX",
    "D_ZERO",
    "Event",
    "StreamParams",
    "SentinelDecimationError",
    "display_value",
    "intensity_per_tick",
    "validate_params",
    "PixelState",
    "integrate",
    "next_d",
]

__version__ = "0.1.0"
