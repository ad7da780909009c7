"""Acceptance gate: one test per primary criterion, each reporting PASS/FAIL.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
lines are printed in the terminal summary.
"""

import contextlib
import json
import math
import random
import time

import pytest

from ivotesim import client, crypto, proxy, sim, wire
from ivotesim.ballot import DEFAULT_RACES
from ivotesim.bruteforce import Keyspace, benchmark, crack, kernels, physical_cores, search_space_size
from ivotesim.bruteforce.bench import REFERENCE_ITERATIONS_PER_CORE_SECOND
from ivotesim.certscan import covers, extract_sans, footprint_report
from ivotesim.certscan.fixtures import SHARED_CERT_SANS, TLSFixtureServer, make_certificate
from ivotesim.crypto import Credentials, SealedBlob
from ivotesim.proxy import AttackConfig, DDoSProxy, Message, Transcript
from ivotesim.server import ElectionConfig, IVoteServer

import oracles
from test_crypto import GCM_TC2, GCM_TC3, RFC6070

RESULTS = {}


@contextlib.contextmanager
def criterion(name):
    detail = {}
    try:
        yield detail
    except BaseException:
        RESULTS[name] = ("FAIL", detail)
        raise
    RESULTS[name] = ("PASS", detail)


class TestAcceptance:
    def test_search_space_arithmetic(self):
        with criterion("search-space arithmetic") as d:
            full = search_space_size(Keyspace.all_ids(8, 6, 8000))
            known = search_space_size(Keyspace.known_id("12345678", 6, 8000))
            assert full.operations == 8 * 10 ** 17
            assert known.operations == 8 * 10 ** 9
            # independent log2 of the exact integers
            for size in (full, known):
                n = size.operations
                exact = (n.bit_length() - 1) + math.log2(n / 2 ** (n.bit_length() - 1))
                assert abs(size.log2 - exact) <= 0.05
            assert round(full.log2 / 10) * 10 == 60     # "about 2^60"
            assert round(known.log2) == 33               # "about 2^33"
            d.update(full_log2=round(full.log2, 3), known_log2=round(known.log2, 3),
                     literal_59_8_gap=round(abs(full.log2 - 59.8), 3))

    @pytest.mark.slow
    def test_bruteforce_timing(self):
        with criterion("brute-force timing (scaled)") as d:
            workers = 4
            rep = benchmark(workers, 32, backend="python", min_seconds=3.0)
            d.update(cores_available=physical_cores(), workers=workers,
                     cores_used=rep.cores_used,
                     hashlib_per_core=round(rep.per_core_iterations_per_second),
                     hashlib_ratio=round(rep.reference_ratio, 2),
                     extrapolated_seconds_one_core=round(rep.extrapolated_seconds, 1))
            if "cython" in kernels.available():
                fast = benchmark(workers, 32, backend="cython", min_seconds=2.0)
                d["cython_ratio_info"] = round(fast.reference_ratio, 2)
            assert 1 / 5 <= rep.reference_ratio <= 5

            creds = Credentials("27182818", "9999")    # last PIN: the whole space is scanned
            target = crypto.derive_login_id(creds, 8000)
            started = time.perf_counter()
            res = crack(target, Keyspace.known_id(creds.ivote_id, 4, 8000), workers)
            d["crack_4digit_seconds"] = round(time.perf_counter() - started, 2)
            assert res.credentials == creds
            assert d["crack_4digit_seconds"] < 60

    @pytest.mark.slow
    def test_protocol_round_trip(self):
        with criterion("protocol round trip") as d:
            started = time.perf_counter()
            rep = sim.simulate(sim.RunConfig(seed=2017, voters=1000, iterations=80))
            d["seconds_1000_at_80"] = round(time.perf_counter() - started, 1)
            receipts = [r["receipt"] for r in rep["results"]]
            assert rep["failures"] == 0 and rep["ok"]
            assert rep["readbacks_ok"] == rep["resumes_ok"] == 1000
            assert len(set(receipts)) == 1000
            assert all(len(r) == 12 and r.isdigit() for r in receipts)
            assert rep["revotes_rejected"] == 1000
            assert d["seconds_1000_at_80"] <= 60

            full = sim.simulate(sim.RunConfig(seed=2017, voters=10, iterations=8000))
            d["full_iteration_voters_ok"] = full["readbacks_ok"]
            assert full["ok"] and full["readbacks_ok"] == 10 and full["revotes_rejected"] == 10

    def test_partial_vote_exposure(self):
        with criterion("partial-vote exposure") as d:
            rng = random.Random(25)
            clock = wire.SimClock()
            srv = IVoteServer(ElectionConfig(DEFAULT_RACES, pin_digits=4, kdf_iterations=80), rng)
            px = DDoSProxy(wire.LocalTransport(srv),
                           AttackConfig(kdf_iterations=80, pin_digits=4), clock, rng)
            browser = client.Browser(clock, rng)
            client.register(px.connect(), browser, "voter", "8080", srv.registration_public_key,
                            rng)
            creds = Credentials(srv.mailbox.collect("voter"), "8080")
            conn = px.connect()
            s = client.login(creds, conn, server_key=srv.server_verify_key, browser=browser,
                             iterations=80, rng=rng)
            p1 = {"assembly": ["BROOKS"]}
            p2 = {"assembly": ["BROOKS", "EVANS"], "council": ["HOLT", "FARRAR"]}
            client.save_partial(s, p1)
            client.save_partial(s, p2)
            receipt = client.cast(s, p2)
            cracked = px.crack_session(conn.session_id, creds.ivote_id)
            recovered = list(px.decrypt_partials(conn.session_id, cracked))
            d["recovered"] = len(recovered)
            assert cracked == creds
            assert recovered == [p1, p2]
            assert recovered[-1] == srv.verify_readback(creds.ivote_id, creds.pin, receipt)

    def test_ballot_substitution(self):
        with criterion("ballot substitution") as d:
            rep = sim.attack(sim.RunConfig(seed=50, voters=50, targets=5, iterations=80),
                             "substitute")
            d.update({k: rep[k] for k in ("substituted", "receipts_for_substituted",
                                          "readbacks_attacker_prefs", "readbacks_voter_prefs")})
            assert rep["failures"] == 0
            assert rep["substituted"] == rep["receipts_for_substituted"] == 5
            assert rep["readbacks_attacker_prefs"] == 5
            assert rep["readbacks_voter_prefs"] == 45

    def test_injection_stealth_and_yield(self):
        with criterion("injection stealth and yield") as d:
            srv = IVoteServer(ElectionConfig(kdf_iterations=80), random.Random(3))
            page = srv.handle_raw(wire.encode_request(wire.LOGIN_PAGE))
            env = json.loads(page)
            env["body"]["html"] += proxy.profiling_script()
            original = json.dumps(env, sort_keys=True, separators=(",", ":")).encode() + b"\n"
            injected = proxy.inject(original, proxy.make_leak_payload())
            d["page_bytes"] = (len(original), len(injected))
            assert len(injected) == len(original)

            rep = sim.attack(sim.RunConfig(seed=6, voters=25, iterations=80), "inject")
            d["harvested"] = f"{rep['credentials_correct']}/{rep['sessions']}"
            assert rep["credentials_correct"] == rep["sessions"] == 50
            assert rep["distinct_credentials"] == 25

            slow = sim.attack(sim.RunConfig(seed=6, voters=5, iterations=80, submit_delay=25.0),
                              "inject")
            assert slow["sessions_harvested"] == 0
            value = "iVoteID=12345678&PIN=123456&ts=0.000"
            t = Transcript("s", messages=[
                Message("c2s", wire.LOGIN, wire.encode_request(wire.LOGIN, cookies={
                    proxy.PROFILE_COOKIE: value}), age) for age in (20.001, 21, 60, 3600)])
            assert proxy.harvest_credentials(t, 20) == []
            d["stale_harvested"] = 0

    def test_session_linkage(self):
        with criterion("session linkage") as d:
            rep = sim.attack(sim.RunConfig(seed=11, voters=40, iterations=80, same_device=0.5),
                             "link")
            d.update(sharing=rep["sharing_fingerprint"], linked=rep["linked_correctly"],
                     wrongly=rep["linked_without_shared_fingerprint"])
            assert rep["linked_correctly"] == rep["sharing_fingerprint"] == 20
            assert rep["linked_without_shared_fingerprint"] == 0

    def test_certscan_fixtures(self):
        with criterion("certscan fixtures") as d:
            shared = make_certificate(SHARED_CERT_SANS, "incapsula.com")
            distinct = make_certificate(["portal.example.test"], "portal.example.test")
            servers = [TLSFixtureServer(*shared[:2]).start() for _ in range(3)]
            servers.append(TLSFixtureServer(*distinct[:2]).start())
            try:
                rep = footprint_report([s.endpoint for s in servers],
                                       "ivote-cvs.elections.wa.gov.au", parallelism=4)
            finally:
                for s in servers:
                    s.stop()
            sizes = sorted(len(v) for v in rep.clusters.values())
            d.update(cluster_sizes=sizes, san_count=len(SHARED_CERT_SANS))
            assert sizes == [1, 3]
            assert extract_sans(shared[2]) == list(SHARED_CERT_SANS)
            assert len(SHARED_CERT_SANS) >= 70
            assert covers("*.elections.wa.gov.au", "ivote-cvs.elections.wa.gov.au")
            assert sorted(rep.coverage) == sorted(s.endpoint.label for s in servers[:3])

    def test_primitive_conformance(self):
        with criterion("primitive conformance") as d:
            checked = 0
            for password, salt, iters, dklen, expected in RFC6070:
                assert oracles.pbkdf2_sha1(password, salt, iters, dklen).hex() == expected
                for name in kernels.available():
                    got = kernels.get(name).pbkdf2_hmac_sha1(password, salt, iters, dklen)
                    assert got.hex() == expected
                    checked += 1
            for vec in (GCM_TC2, GCM_TC3):
                key, iv = bytes.fromhex(vec["key"]), bytes.fromhex(vec["iv"])
                blob = crypto.seal(key, bytes.fromhex(vec["pt"]), nonce=iv)
                assert blob.ciphertext_and_tag.hex() == vec["ct"] + vec["tag"]
                assert crypto.unseal(key, SealedBlob(iv, blob.ciphertext_and_tag)).hex() == vec["pt"]
                checked += 1
            d["vectors_checked"] = checked
