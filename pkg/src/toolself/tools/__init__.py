from .registry import (
    DEFAULT_TIMEOUT,
    MockEnvironment,
    MockResponse,
    Observation,
    ToolAdapter,
    ToolRegistry,
    ToolSession,
    fan_out,
)
from .truncation import compress_old_observations, truncate_message

__all__ = [
    "DEFAULT_TIMEOUT",
    "MockEnvironment",
    "MockResponse",
    "Observation",
    "ToolAdapter",
    "ToolRegistry",
    "ToolSession",
    "compress_old_observations",
    "fan_out",
    "truncate_message",
]
