"""Parallel search over the (iVoteID, PIN) space behind a login id."""

from .bench import (
    DEFAULT_PRICE_PER_CORE_HOUR,
    REFERENCE_ITERATIONS_PER_CORE_SECOND,
    BenchReport,
    benchmark,
    extrapolate_seconds,
    physical_cores,
)
from .kernels import DEFAULT_BACKEND, available as available_backends
from .search import (
    CrackResult,
    Cracker,
    Keyspace,
    ProgressEvent,
    SpaceSize,
    WorkUnit,
    crack,
    iter_units,
    partition,
    search_space_size,
)

__all__ = [
    "BenchReport", "CrackResult", "Cracker", "DEFAULT_BACKEND", "DEFAULT_PRICE_PER_CORE_HOUR",
    "Keyspace", "ProgressEvent", "REFERENCE_ITERATIONS_PER_CORE_SECOND", "SpaceSize", "WorkUnit",
    "available_backends", "benchmark", "crack", "extrapolate_seconds", "iter_units",
    "partition", "physical_cores", "search_space_size",
]
