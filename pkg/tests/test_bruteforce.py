import math

import pytest
from hypothesis import given, settings, strategies as st

from ivotesim.bruteforce import (
    BenchReport,
    Cracker,
    benchmark,
    Keyspace,
    crack,
    extrapolate_seconds,
    kernels,
    partition,
    physical_cores,
    search_space_size,
)
from ivotesim.bruteforce.bench import (
    DEFAULT_PRICE_PER_CORE_HOUR,
    REFERENCE_ITERATIONS_PER_CORE_SECOND,
)
from ivotesim.crypto import Credentials, derive_login_id
from ivotesim.errors import BudgetExceeded, KeyspaceExhausted, ValidationError

import oracles

FAST = 80
BACKENDS = kernels.available()


class TestKeyspace:
    def test_full_space_arithmetic(self):
        size = search_space_size(Keyspace.all_ids())
        assert size.operations == 8 * 10 ** 17
        assert size.candidates == 10 ** 14
        assert size.log2 == pytest.approx(math.log2(8e17))

    def test_known_id_arithmetic(self):
        size = search_space_size(Keyspace.known_id("12345678"))
        assert size.operations == 8 * 10 ** 9
        assert size.log2 == pytest.approx(32.897, abs=1e-3)

    def test_one_digit_pins(self):
        assert search_space_size(Keyspace.known_id("12345678", pin_digits=1)).operations == 80_000

    def test_bad_fixed_id(self):
        with pytest.raises(ValidationError):
            Keyspace(fixed_id="12ab5678")

    def test_candidate_layout(self):
        ks = Keyspace.all_ids(id_digits=2, pin_digits=3)
        assert ks.candidate(0) == Credentials("00", "000")
        assert ks.candidate(1234) == Credentials("01", "234")
        assert ks.candidate(ks.candidates - 1) == Credentials("99", "999")

    @given(id_digits=st.integers(1, 3), pin_digits=st.integers(1, 3), unit=st.integers(1, 5000))
    @settings(max_examples=80, deadline=None)
    def test_partition_is_exact_cover(self, id_digits, pin_digits, unit):
        ks = Keyspace.all_ids(id_digits, pin_digits)
        unit = max(unit, ks.candidates // 1000)
        units = partition(ks, unit)
        assert units[0].start == 0 and units[-1].end == ks.candidates
        for a, b in zip(units, units[1:]):
            assert a.end == b.start
        assert all(0 < u.end - u.start <= unit for u in units)


@pytest.mark.parametrize("backend", BACKENDS)
class TestKernelScan:
    def test_finds_known_pin(self, backend):
        kernel = kernels.get(backend)
        target = bytes.fromhex(oracles.login_id("12345678", "0417", FAST))
        found, _ = kernel.scan_range(0, 10 ** 4, 4, 8, b"12345678", target, FAST, bytearray(1))
        assert found == 417

    def test_finds_in_full_space(self, backend):
        kernel = kernels.get(backend)
        target = bytes.fromhex(oracles.login_id("07", "35", FAST))
        found, _ = kernel.scan_range(0, 10 ** 4, 2, 2, None, target, FAST, bytearray(1))
        assert found == 7 * 100 + 35

    def test_respects_range(self, backend):
        kernel = kernels.get(backend)
        target = bytes.fromhex(oracles.login_id("12345678", "05", FAST))
        found, tried = kernel.scan_range(10, 40, 2, 8, b"12345678", target, FAST, bytearray(1))
        assert found == -1 and tried == 30

    def test_preset_stop_halts_early(self, backend):
        kernel = kernels.get(backend)
        _, tried = kernel.scan_range(0, 5000, 4, 8, b"12345678", bytes(16), FAST, bytearray(b"\1"))
        assert tried <= kernel.STOP_CHECK_INTERVAL


class TestCrack:
    @pytest.mark.parametrize("backend", BACKENDS)
    @pytest.mark.parametrize("workers", [1, 3])
    def test_known_id_crack(self, backend, workers):
        creds = Credentials("31415926", "5358")
        target = derive_login_id(creds, FAST)
        res = crack(target, Keyspace.known_id("31415926", 4, FAST), workers, backend=backend)
        assert res.credentials == creds
        assert derive_login_id(res.credentials, FAST) == target

    def test_full_space_crack(self):
        creds = Credentials("042", "17")
        res = crack(derive_login_id(creds, FAST), Keyspace.all_ids(3, 2, FAST), 2)
        assert res.credentials == creds

    def test_exhausted(self):
        target = derive_login_id(Credentials("99999999", "123"), FAST)
        with pytest.raises(KeyspaceExhausted) as err:
            crack(target, Keyspace.known_id("12345678", 2, FAST))
        assert err.value.tried == 100

    def test_budget(self):
        target = derive_login_id(Credentials("99999999", "123456"), 8000)
        with pytest.raises(BudgetExceeded) as err:
            crack(target, Keyspace.known_id("12345678", 6, 8000), budget_seconds=0.2)
        assert 0 < err.value.tried < 10 ** 6

    def test_progress_events(self):
        events = []
        target = derive_login_id(Credentials("12345678", "999"), FAST)
        crack(target, Keyspace.known_id("12345678", 3, FAST), unit_size=100,
              progress=events.append)
        assert events and events[-1].tried == 1000
        assert all(e.total == 1000 for e in events)

    def test_cracker_handle(self):
        creds = Credentials("12345678", "77")
        res = Cracker(workers=2).crack(derive_login_id(creds, FAST),
                                       Keyspace.known_id("12345678", 2, FAST))
        assert res.credentials == creds

    @pytest.mark.parametrize("bad", ["zz", "ab" * 15, None])
    def test_bad_target(self, bad):
        with pytest.raises(ValidationError):
            crack(bad, Keyspace.known_id("12345678", 2, FAST))


class TestBenchArithmetic:
    def test_reference_rate(self):
        assert REFERENCE_ITERATIONS_PER_CORE_SECOND == pytest.approx(952_381, rel=1e-6)

    def test_reference_price_reproduces_cost(self):
        # 20 cores for 7 minutes at the derived price is the reported $0.11
        assert 20 * 420 / 3600 * DEFAULT_PRICE_PER_CORE_HOUR == pytest.approx(0.11)

    def test_reference_rate_gives_reference_time(self):
        rep = BenchReport.from_rate(20 * REFERENCE_ITERATIONS_PER_CORE_SECOND, 20)
        assert rep.extrapolated_seconds == pytest.approx(420)
        assert rep.extrapolated_cost_usd == pytest.approx(0.11)
        assert rep.reference_ratio == pytest.approx(1.0)

    def test_sha1_block_accounting(self):
        rep = BenchReport.from_rate(1e6, 1)
        assert rep.sha1_blocks_per_second == 2e6
        assert rep.candidates_per_second == pytest.approx(125)

    def test_extrapolation(self):
        assert extrapolate_seconds(8e9, 6, 8000) == pytest.approx(1.0)
        rep = BenchReport.from_rate(1e6, 1)
        assert rep.hypothetical_seconds["gpu_1e9"] == pytest.approx(8.0)


class TestWorkerIndependence:
    @given(pin=st.integers(0, 999), workers=st.sampled_from([1, 2, 8]))
    @settings(max_examples=10, deadline=None)
    def test_same_result_any_worker_count(self, pin, workers):
        creds = Credentials("55555555", f"{pin:03d}")
        target = oracles.login_id(creds.ivote_id, creds.pin, 20)
        ks = Keyspace.known_id(creds.ivote_id, 3, 20)
        res = crack(target, ks, workers, unit_size=64)
        assert res.credentials == creds and res.index == pin

    def test_three_digit_one_vs_eight(self):
        creds = Credentials("12121212", "640")
        target = derive_login_id(creds, FAST)
        ks = Keyspace.known_id(creds.ivote_id, 3, FAST)
        assert crack(target, ks, 1).credentials == crack(target, ks, 8).credentials == creds


@pytest.mark.slow
@pytest.mark.parametrize("n", [2, 4])
def test_rate_scales_with_workers(n):
    if n > physical_cores():
        pytest.skip(f"only {physical_cores()} core(s) available; scaling needs {n}")
    one = benchmark(1, 16, iterations=2000, min_seconds=0.5).iterations_per_second
    many = benchmark(n, 16, iterations=2000, min_seconds=0.5).iterations_per_second
    assert many >= 0.6 * n * one
