import json
import random

import pytest

from ivotesim import client, crypto, wire
from ivotesim.ballot import (
    DEFAULT_RACES,
    Ballot,
    make_ballot,
    make_partial_vote,
    open_ballot,
    open_partial_vote,
)
from ivotesim.certscan.fixtures import closed_port
from ivotesim.crypto import CredentialFile, Credentials
from ivotesim.errors import (
    AlreadyVoted,
    AuthenticationError,
    CapacityError,
    CorruptPartial,
    LoginFailed,
    NotFound,
    ServerAuthError,
    TransportError,
    ValidationError,
    VerificationFailed,
)
from ivotesim.server import ElectionConfig, IVoteServer

from conftest import FAST

FULL = {"assembly": ["CHEN", "ALLEN"], "council": ["LUND"]}


def enrol(server, rng, identity="alice", pin="246810", transport=None, browser=None):
    transport = transport or wire.LocalTransport(server)
    browser = browser or client.Browser(rng=rng)
    client.register(transport, browser, identity, pin, server.registration_public_key, rng)
    return Credentials(server.mailbox.collect(identity), pin)


def login(server, creds, rng, transport=None, **kw):
    return client.login(creds, transport or wire.LocalTransport(server),
                        server_key=server.server_verify_key, iterations=FAST, rng=rng, **kw)


class TestRegistration:
    def test_issues_distinct_ids(self, server, rng):
        ids = {enrol(server, rng, f"v{i}").ivote_id for i in range(30)}
        assert len(ids) == 30 and all(len(i) == 8 and i.isdigit() for i in ids)

    def test_no_raw_id_in_snapshot(self, server, rng):
        creds = enrol(server, rng)
        assert creds.ivote_id not in server.snapshot_json()
        assert creds.pin not in server.snapshot_json()

    @pytest.mark.parametrize("pin", ["12345", "1234567", "12a456"])
    def test_bad_pin(self, server, pin):
        with pytest.raises(ValidationError):
            server.register("x", pin)

    def test_capacity(self, rng):
        srv = IVoteServer(ElectionConfig(id_digits=1, kdf_iterations=FAST), rng)
        for i in range(10):
            srv.register(f"v{i}", "123456")
        with pytest.raises(CapacityError):
            srv.register("v10", "123456")

    def test_credential_file_inverts(self, server):
        creds = Credentials("11223344", "556677")
        cf = server.make_credential_file(creds)
        assert crypto.open_credential_file(creds, cf, FAST).voter_keys_id == cf.voter_keys_id


class TestVotingFlow:
    def test_full_round_trip(self, server, rng):
        creds = enrol(server, rng)
        s = login(server, creds, rng)
        assert set(s.races) == set(DEFAULT_RACES)
        client.save_partial(s, {"assembly": ["CHEN"]})
        client.save_partial(s, FULL)
        s2 = login(server, creds, rng)
        assert client.resume(s2) == FULL
        receipt = client.cast(s2, FULL)
        assert len(receipt) == 12 and receipt.isdigit()
        assert server.verify_readback(creds.ivote_id, creds.pin, receipt) == FULL

    def test_resume_without_partials(self, server, rng):
        s = login(server, enrol(server, rng), rng)
        assert client.resume(s) is None

    def test_revote_rejected(self, server, rng):
        s = login(server, enrol(server, rng), rng)
        client.cast(s, FULL)
        with pytest.raises(AlreadyVoted):
            client.cast(s, FULL)

    def test_incomplete_ballot_rejected_client_side(self, server, rng):
        s = login(server, enrol(server, rng), rng)
        with pytest.raises(ValidationError):
            client.cast(s, {"assembly": ["CHEN"]})

    def test_unknown_candidate_rejected(self, server, rng):
        s = login(server, enrol(server, rng), rng)
        with pytest.raises(ValidationError):
            client.save_partial(s, {"assembly": ["NOBODY"]})

    def test_wrong_pin_fails_login(self, server, rng):
        creds = enrol(server, rng)
        with pytest.raises(LoginFailed):
            login(server, Credentials(creds.ivote_id, "000000" if creds.pin != "000000" else "1"),
                  rng)

    def test_unknown_login_id(self, server):
        with pytest.raises(NotFound):
            server.lookup_credential("00" * 16)

    def test_impostor_server_detected(self, server, rng):
        creds = enrol(server, rng)
        other = crypto.public_key_bytes(crypto.generate_signing_key(rng))
        with pytest.raises(ServerAuthError):
            client.login(creds, wire.LocalTransport(server), server_key=other, iterations=FAST,
                         rng=rng)

    def test_corrupt_partial_on_resume(self, server, rng):
        creds = enrol(server, rng)
        s = login(server, creds, rng)
        client.save_partial(s, FULL)
        rec = server._records[s.voter_keys_id]
        pv = rec.partial_votes[-1]
        broken = bytearray(pv.eo.ciphertext_and_tag)
        broken[0] ^= 1
        rec.partial_votes[-1] = type(pv)(crypto.SealedBlob(pv.eo.nonce, bytes(broken)),
                                         pv.signature)
        with pytest.raises(CorruptPartial):
            client.resume(s)

    def test_ballot_hidden_from_all_but_election_key(self, server, rng):
        s = login(server, enrol(server, rng), rng)
        client.cast(s, FULL)
        ballot = server._records[s.voter_keys_id].final_ballot
        assert open_ballot(server.election_decryptor(), ballot) == FULL
        with pytest.raises(Exception):
            open_ballot(crypto.generate_election_key(rng), ballot)


class TestReadback:
    def test_failures_are_uniform(self, server, rng):
        creds = enrol(server, rng)
        s = login(server, creds, rng)
        receipt = client.cast(s, FULL)
        bad_receipt = f"{(int(receipt) + 1) % 10 ** 12:012d}"
        messages = set()
        for args in [(creds.ivote_id, creds.pin, bad_receipt),
                     (creds.ivote_id, "999999" if creds.pin != "999999" else "1", receipt),
                     ("00000000", "000000", receipt), ("x", "y", receipt)]:
            with pytest.raises(VerificationFailed) as err:
                server.verify_readback(*args)
            messages.add(str(err.value))
        assert len(messages) == 1

    def test_readback_over_wire(self, server, rng):
        creds = enrol(server, rng)
        receipt = client.cast(login(server, creds, rng), FULL)
        body = client.send(wire.LocalTransport(server), client.Browser(rng=rng), wire.READBACK,
                           {"ivote_id": creds.ivote_id, "pin": creds.pin, "receipt": receipt})
        assert body["preferences"] == FULL


class TestTamperInTransit:
    def test_every_credential_file_byte(self, server, rng):
        """Flip each byte of the credential file on its way to the client; login must fail."""
        creds = enrol(server, rng)
        honest = wire.LocalTransport(server)
        cf_json = json.dumps(json.loads(server.lookup_credential_json(
            crypto.derive_login_id(creds, FAST))), sort_keys=True, separators=(",", ":"))
        survivors = []
        for i in range(len(cf_json)):
            class Flipper:
                def exchange(self, raw, i=i):
                    out = honest.exchange(raw)
                    if wire.decode_request(raw)["endpoint"] != wire.LOGIN:
                        return out
                    start = out.index(cf_json.encode())
                    buf = bytearray(out)
                    buf[start + i] ^= 0x01
                    return bytes(buf)
            try:
                login(server, creds, rng, transport=Flipper())
            except (LoginFailed, ServerAuthError):
                continue
            except Exception as exc:   # anything else is a bug in error handling
                pytest.fail(f"byte {i}: unexpected {exc!r}")
            survivors.append(i)
        assert survivors == []

    def test_tampered_stored_file_fails(self, server, rng):
        creds = enrol(server, rng)
        rec = next(iter(server._records.values()))
        d = json.loads(rec.credential_json)
        d["vk"]["store"] = d["vk"]["store"][:-6] + ("A" if d["vk"]["store"][-6] != "A" else "B") \
            + d["vk"]["store"][-5:]
        rec.credential_json = json.dumps(d)
        with pytest.raises(LoginFailed):
            login(server, creds, rng)


class TestPersistence:
    def test_snapshot_round_trip(self, server, rng):
        creds = enrol(server, rng)
        s = login(server, creds, rng)
        client.save_partial(s, FULL)
        restored = IVoteServer.from_snapshot(json.loads(server.snapshot_json()), random.Random(9))
        assert restored.snapshot_json() == server.snapshot_json()
        s2 = login(restored, creds, rng)
        assert client.resume(s2) == FULL
        receipt = client.cast(s2, FULL)
        assert restored.verify_readback(creds.ivote_id, creds.pin, receipt) == FULL
        with pytest.raises(ValidationError):
            restored.register("bob", "12")

    def test_save_load(self, server, rng, tmp_path):
        enrol(server, rng)
        server.save(tmp_path / "s.json")
        assert IVoteServer.load(tmp_path / "s.json").snapshot_json() == server.snapshot_json()


class TestSocketTransport:
    def test_flow_over_tcp(self, server, rng):
        with_server = wire.LineServer(server)
        with_server.start()
        try:
            t = wire.SocketTransport(*with_server.server_address)
            creds = enrol(server, rng, transport=t)
            s = login(server, creds, rng, transport=t)
            receipt = client.cast(s, FULL)
            assert server.verify_readback(creds.ivote_id, creds.pin, receipt) == FULL
            t.close()
        finally:
            with_server.stop()

    def test_connection_refused(self):
        ep = closed_port()
        with pytest.raises(TransportError):
            wire.SocketTransport(ep.host, ep.port, timeout=1).exchange(b"{}\n")


class TestBrowser:
    def test_expired_cookie_not_sent(self, clock):
        b = client.Browser(clock, random.Random(0))
        b.apply_set_cookies({"a": {"value": "1", "max_age": 20}, "b": "2"})
        clock.advance(21)
        assert b.request_cookies() == {"b": "2"}

    def test_unrecognised_script_is_inert(self, clock):
        b = client.Browser(clock, random.Random(0))
        b.load_page("<script>var w=['PIN'];</script>")
        b.type_into("PIN", "123456")
        assert b.request_cookies() == {}


class TestServerOperations:
    def test_register_shape(self, server):
        assert len(server.register("alice", "123456")) == 8

    def test_distinct_voter_keys_ids(self, server):
        server.register("a", "123456")
        server.register("b", "123456")
        assert len({r.voter_keys_id for r in server._records.values()}) == 2

    def test_fresh_randomness_per_file(self, server):
        creds = Credentials("11223344", "556677")
        a, b = server.make_credential_file(creds), server.make_credential_file(creds)
        assert a.to_json() != b.to_json()
        for cf in (a, b):
            crypto.open_credential_file(creds, cf, FAST)

    def test_server_side_kp_matches_client_side(self, rng):
        creds = Credentials("11223344", "556677")
        cf, km = crypto.build_credential_file(creds, "abc123", crypto.generate_signing_key(rng),
                                              rng, FAST)
        pv = make_partial_vote(FULL, km.kp, km.sk, rng)
        assert open_partial_vote(crypto.open_credential_file(creds, cf, FAST).kp, pv) == FULL

    def test_common_name_parse(self, server):
        cf = server.make_credential_file(Credentials("11223344", "556677"), "abc123")
        assert cf.common_name == "VoterAuth_abc123" and cf.voter_keys_id == "abc123"

    def test_lookup_is_stored_not_regenerated(self, server, rng):
        creds = enrol(server, rng)
        login_id = crypto.derive_login_id(creds, FAST)
        assert server.lookup_credential_json(login_id) == server.lookup_credential_json(login_id)

    def _answer(self, server, creds, rng, sk=None):
        cf = server.lookup_credential(crypto.derive_login_id(creds, FAST))
        km = crypto.open_credential_file(creds, cf, FAST)
        response = cf.challenge_object + rng.randbytes(crypto.CLIENT_NONCE_LEN)
        return km, response, crypto.sign(sk or km.sk, response)

    def test_token_for_fresh_voter(self, server, rng):
        km, response, sig = self._answer(server, enrol(server, rng), rng)
        assert server.issue_token(km.voter_keys_id, response, sig)["partial_votes"] == []

    def test_token_rejects_other_voters_key(self, server, rng):
        other_km, *_ = self._answer(server, enrol(server, rng, "bob", "111111"), rng)
        km, response, sig = self._answer(server, enrol(server, rng), rng, sk=other_km.sk)
        with pytest.raises(AuthenticationError):
            server.issue_token(km.voter_keys_id, response, sig)

    def test_partials_kept_in_order_and_bad_signature_rejected(self, server, rng):
        km, response, sig = self._answer(server, enrol(server, rng), rng)
        pvs = [make_partial_vote({"assembly": [c]}, km.kp, km.sk, rng)
               for c in ("ALLEN", "BROOKS", "CHEN")]
        for n, pv in enumerate(pvs, 1):
            assert server.store_partial_vote(km.voter_keys_id, pv) == {"stored": n}
        forged = type(pvs[0])(pvs[0].eo, bytes(64))
        with pytest.raises(AuthenticationError):
            server.store_partial_vote(km.voter_keys_id, forged)
        token = server.issue_token(km.voter_keys_id, response, sig)
        assert token["partial_votes"] == [pv.to_dict() for pv in pvs]

    def test_tampered_ballot_rejected(self, server, rng):
        km, *_ = self._answer(server, enrol(server, rng), rng)
        ballot = make_ballot(FULL, server.election_public_key, km.sk, rng)
        raw = bytearray(ballot.sealed_prefs.ciphertext_and_tag)
        raw[0] ^= 1
        bad = Ballot(ballot.wrapped_key, crypto.SealedBlob(ballot.sealed_prefs.nonce, bytes(raw)),
                     ballot.signature)
        with pytest.raises(AuthenticationError):
            server.cast_ballot(km.voter_keys_id, bad)
        assert len(server.cast_ballot(km.voter_keys_id, ballot)) == 12


class TestKeySeparation:
    def test_keystore_key_differs_from_login_id(self):
        r = random.Random(100)
        for _ in range(100):
            creds = Credentials(f"{r.randrange(10**8):08d}", f"{r.randrange(10**6):06d}")
            salt = r.randbytes(16)
            assert crypto.derive_keystore_password_key(creds, salt, 20) != \
                bytes.fromhex(crypto.derive_login_id(creds, 20))

    def test_signature_with_other_key(self, rng):
        a, b = crypto.generate_signing_key(rng), crypto.generate_signing_key(rng)
        msg = rng.randbytes(64)
        assert crypto.verify(crypto.public_key_bytes(a), msg, crypto.sign(a, msg))
        assert not crypto.verify(crypto.public_key_bytes(b), msg, crypto.sign(a, msg))
