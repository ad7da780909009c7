"""Throughput measurement and crack-time extrapolation."""

from __future__ import annotations

import os
import threading
import time
from dataclasses import asdict, dataclass, field

from ..crypto import DEFAULT_ITERATIONS
from . import kernels

# 20-core droplet, 6-digit PIN, known id: ~7 minutes for USD 0.11
REFERENCE_CORES = 20
REFERENCE_SECONDS = 420.0
REFERENCE_COST_USD = 0.11
KNOWN_ID_PIN_SPACE = 10 ** 6
REFERENCE_ITERATIONS_PER_CORE_SECOND = (
    KNOWN_ID_PIN_SPACE * DEFAULT_ITERATIONS / REFERENCE_SECONDS / REFERENCE_CORES)
DEFAULT_PRICE_PER_CORE_HOUR = REFERENCE_COST_USD / (REFERENCE_SECONDS / 3600) / REFERENCE_CORES

HYPOTHETICAL_RATES = {
    # iteration units (HMAC-SHA1 invocations) per second
    "gpu_1e9": 1e9,
    "asic_1e12": 1e12,
}


def physical_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def extrapolate_seconds(iterations_per_second: float, pin_digits: int = 6,
                        iterations: int = DEFAULT_ITERATIONS) -> float:
    """Worst-case time to exhaust a known-id PIN space."""
    return 10 ** pin_digits * iterations / iterations_per_second


@dataclass
class BenchReport:
    backend: str
    workers: int
    cores_used: int
    iterations: int
    # rates; an "iteration unit" is one PBKDF2 iteration = one HMAC-SHA1
    candidates_per_second: float
    iterations_per_second: float
    sha1_blocks_per_second: float
    per_core_iterations_per_second: float
    # extrapolations for a known-id, 6-digit PIN crack
    extrapolated_seconds: float
    extrapolated_cost_usd: float
    price_per_core_hour: float
    reference_ratio: float
    hypothetical_seconds: dict = field(default_factory=dict)
    # measurement quarantine: the only nondeterministic fields
    measured_candidates: int = 0
    measured_elapsed: float = 0.0

    @classmethod
    def from_rate(cls, iterations_per_second: float, workers: int, *, backend: str = "given",
                  cores_used: int | None = None, iterations: int = DEFAULT_ITERATIONS,
                  price_per_core_hour: float = DEFAULT_PRICE_PER_CORE_HOUR,
                  measured_candidates: int = 0, measured_elapsed: float = 0.0) -> "BenchReport":
        cores = cores_used if cores_used is not None else workers
        seconds = extrapolate_seconds(iterations_per_second, 6, iterations)
        per_core = iterations_per_second / cores
        return cls(
            backend=backend,
            workers=workers,
            cores_used=cores,
            iterations=iterations,
            candidates_per_second=iterations_per_second / iterations,
            iterations_per_second=iterations_per_second,
            sha1_blocks_per_second=2 * iterations_per_second,
            per_core_iterations_per_second=per_core,
            extrapolated_seconds=seconds,
            extrapolated_cost_usd=seconds / 3600 * cores * price_per_core_hour,
            price_per_core_hour=price_per_core_hour,
            reference_ratio=per_core / REFERENCE_ITERATIONS_PER_CORE_SECOND,
            hypothetical_seconds={name: extrapolate_seconds(rate, 6, iterations)
                                  for name, rate in HYPOTHETICAL_RATES.items()},
            measured_candidates=measured_candidates,
            measured_elapsed=measured_elapsed,
        )

    def as_dict(self) -> dict:
        return asdict(self)


def _timed_scan(kernel, workers: int, candidates: int, iterations: int) -> float:
    stop = bytearray(1)
    target = bytes(16)  # never matches in practice
    share = -(-candidates // workers)

    def run(start):
        kernel.scan_range(start, min(start + share, candidates), 6, 8, b"00000000", target,
                          iterations, stop)

    threads = [threading.Thread(target=run, args=(i * share,)) for i in range(workers)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return time.perf_counter() - t0


def benchmark(workers: int = 1, sample_candidates: int = 64, *, backend: str | None = None,
              iterations: int = DEFAULT_ITERATIONS, min_seconds: float = 1.0,
              price_per_core_hour: float = DEFAULT_PRICE_PER_CORE_HOUR) -> BenchReport:
    """Measure real search throughput and extrapolate a 6-digit known-id crack.

    The sample is doubled until one timed run lasts at least ``min_seconds``.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    kernel = kernels.get(backend)
    sample = max(sample_candidates, workers)
    while True:
        elapsed = _timed_scan(kernel, workers, sample, iterations)
        if elapsed >= min_seconds or sample >= 10 ** 6:
            break
        sample *= 2
    rate = sample * iterations / elapsed
    return BenchReport.from_rate(rate, workers, backend=kernel.BACKEND,
                                 cores_used=min(workers, physical_cores()),
                                 iterations=iterations, price_per_core_hour=price_per_core_hour,
                                 measured_candidates=sample, measured_elapsed=elapsed)
