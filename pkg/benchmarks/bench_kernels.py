"""Compare the compiled and pure-Python PBKDF2 search kernels.

    python3 benchmarks/bench_kernels.py [--iterations 8000] [--candidates 64]
"""

import argparse
import json
import time

from ivotesim.bruteforce import kernels
from ivotesim.bruteforce.bench import REFERENCE_ITERATIONS_PER_CORE_SECOND


def time_backend(name, iterations, candidates):
    kernel = kernels.get(name)
    stop = bytearray(1)
    target = bytes(16)   # never matches, so the whole range is scanned
    started = time.perf_counter()
    _, tried = kernel.scan_range(0, candidates, 6, 8, b"12345678", target, iterations, stop)
    elapsed = time.perf_counter() - started
    rate = tried * iterations / elapsed
    return {"backend": name, "candidates": tried, "seconds": round(elapsed, 4),
            "iterations_per_second": round(rate),
            "vs_reference_per_core": round(rate / REFERENCE_ITERATIONS_PER_CORE_SECOND, 2)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=8000)
    ap.add_argument("--candidates", type=int, default=64)
    args = ap.parse_args()
    rows = [time_backend(name, args.iterations, args.candidates) for name in kernels.available()]
    if len(rows) == 2:
        fast, slow = sorted(rows, key=lambda r: -r["iterations_per_second"])
        print(f"speedup {fast['backend']} over {slow['backend']}: "
              f"{fast['iterations_per_second'] / slow['iterations_per_second']:.2f}x")
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
