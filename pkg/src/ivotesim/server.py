"""Stand-in for the iVote registration/voting/verification back end.

One logical server holds the credential-file database keyed by login id,
issues tokens after the signed challenge response, stores opaque partial
votes, accepts exactly one final ballot per voter and answers telephone
read-back requests. It never stores a PIN, an iVoteID, ``kp`` or a voter
signing key in recoverable form.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import crypto, wire
from .ballot import DEFAULT_RACES, Ballot, PartialVote, open_ballot
from .crypto import CredentialFile, Credentials, b64d, b64e
from .errors import (
    AlreadyVoted,
    AuthenticationError,
    CapacityError,
    IVoteError,
    NotFound,
    ValidationError,
    VerificationFailed,
)

RECEIPT_DIGITS = 12
VOTER_KEYS_ID_BYTES = 12


@dataclass
class ElectionConfig:
    races: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_RACES.items()})
    pin_digits: int = crypto.DEFAULT_PIN_DIGITS
    id_digits: int = crypto.DEFAULT_ID_DIGITS
    kdf_iterations: int = crypto.DEFAULT_ITERATIONS
    api_version: str = "1"

    def __post_init__(self):
        if not self.races or any(not c for c in self.races.values()):
            raise ValidationError("every race needs a non-empty candidate list")
        for race, cands in self.races.items():
            if len(set(cands)) != len(cands):
                raise ValidationError(f"duplicate candidates in race {race!r}")
        if min(self.pin_digits, self.id_digits, self.kdf_iterations) < 1:
            raise ValidationError("digit counts and iterations must be positive")

    def to_dict(self):
        return {"races": self.races, "pin_digits": self.pin_digits, "id_digits": self.id_digits,
                "kdf_iterations": self.kdf_iterations, "api_version": self.api_version}


@dataclass
class VoterRecord:
    login_id: str
    voter_keys_id: str
    credential_json: str
    verify_key: bytes
    partial_votes: list = field(default_factory=list)
    final_ballot: Ballot | None = None
    receipt: str | None = None

    def to_dict(self):
        return {
            "login_id": self.login_id,
            "voter_keys_id": self.voter_keys_id,
            "credential_file": json.loads(self.credential_json),
            "verify_key": b64e(self.verify_key),
            "partial_votes": [pv.to_dict() for pv in self.partial_votes],
            "final_ballot": self.final_ballot.to_dict() if self.final_ballot else None,
            "receipt": self.receipt,
        }

    @classmethod
    def from_dict(cls, d):
        cf = CredentialFile.from_dict(d["credential_file"])
        return cls(
            login_id=d["login_id"],
            voter_keys_id=d["voter_keys_id"],
            credential_json=cf.to_json(),
            verify_key=b64d(d["verify_key"]),
            partial_votes=[PartialVote.from_dict(p) for p in d["partial_votes"]],
            final_ballot=Ballot.from_dict(d["final_ballot"]) if d["final_ballot"] else None,
            receipt=d["receipt"],
        )


class Mailbox:
    """Out-of-band delivery of iVoteIDs (post/SMS); never part of server state."""

    def __init__(self):
        self._items = {}
        self._lock = threading.Lock()

    def deliver(self, identity, ivote_id):
        with self._lock:
            self._items[identity] = ivote_id

    def collect(self, identity):
        with self._lock:
            return self._items.pop(identity)


class IVoteServer:
    def __init__(self, config: ElectionConfig | None = None, rng=None, *,
                 signing_key=None, election_key=None, registration_key=None,
                 id_secret: bytes | None = None, mailbox: Mailbox | None = None):
        self.config = config or ElectionConfig()
        self.rng = rng or crypto.system_rng()
        self._signing_key = signing_key or crypto.generate_signing_key(self.rng)
        self._election_key = election_key or crypto.generate_election_key(self.rng)
        self._registration_key = registration_key or crypto.generate_election_key(self.rng)
        self._id_secret = id_secret or self.rng.randbytes(32)
        self.mailbox = mailbox or Mailbox()
        self._lock = threading.RLock()
        self._records: dict[str, VoterRecord] = {}
        self._by_login: dict[str, str] = {}
        self._issued_ids: set[str] = set()      # keyed digests, never raw ids
        self._receipts: set[str] = set()

    # -- public keys distributed out of band ---------------------------------

    @property
    def server_verify_key(self) -> bytes:
        return crypto.public_key_bytes(self._signing_key)

    @property
    def election_public_key(self) -> bytes:
        return crypto.public_key_bytes(self._election_key)

    @property
    def registration_public_key(self) -> bytes:
        return crypto.public_key_bytes(self._registration_key)

    def election_decryptor(self):
        """The election private key; test oracles and read-back only."""
        return self._election_key

    # -- registration ----------------------------------------------------------

    def _id_digest(self, ivote_id):
        return hmac.new(self._id_secret, ivote_id.encode(), hashlib.sha256).hexdigest()

    def _fresh_ivote_id(self):
        digits = self.config.id_digits
        space = 10 ** digits
        if len(self._issued_ids) >= space:
            raise CapacityError("iVoteID space exhausted")
        for _ in range(64):
            candidate = f"{self.rng.randrange(space):0{digits}d}"
            if self._id_digest(candidate) not in self._issued_ids:
                return candidate
        start = self.rng.randrange(space)
        for offset in range(space):
            candidate = f"{(start + offset) % space:0{digits}d}"
            if self._id_digest(candidate) not in self._issued_ids:
                return candidate
        raise CapacityError("iVoteID space exhausted")

    def _fresh_voter_keys_id(self):
        while True:
            vkid = self.rng.randbytes(VOTER_KEYS_ID_BYTES).hex()
            if vkid not in self._records:
                return vkid

    def make_credential_file(self, creds: Credentials, voter_keys_id: str | None = None):
        """Build a credential file that ``open_credential_file(creds, ...)`` inverts."""
        with self._lock:
            creds.check(self.config.id_digits, self.config.pin_digits)
            vkid = voter_keys_id or self._fresh_voter_keys_id()
            cf, _ = crypto.build_credential_file(creds, vkid, self._signing_key, self.rng,
                                                 self.config.kdf_iterations)
            return cf

    def register(self, identity: str, pin: str) -> str:
        """Enrol a voter who chose ``pin``; returns the assigned iVoteID.

        ``identity`` is opaque: eligibility checking is out of scope.
        """
        if not isinstance(pin, str) or not pin.isdigit() or len(pin) != self.config.pin_digits:
            raise ValidationError(f"PIN must be exactly {self.config.pin_digits} digits")
        with self._lock:
            ivote_id = self._fresh_ivote_id()
            creds = Credentials(ivote_id, pin)
            vkid = self._fresh_voter_keys_id()
            cf = self.make_credential_file(creds, vkid)
            login_id = crypto.derive_login_id(creds, self.config.kdf_iterations)
            self._records[vkid] = VoterRecord(login_id, vkid, cf.to_json(), cf.verify_key)
            self._by_login[login_id] = vkid
            self._issued_ids.add(self._id_digest(ivote_id))
            return ivote_id

    # -- voting ----------------------------------------------------------------

    def _record(self, voter_keys_id) -> VoterRecord:
        rec = self._records.get(voter_keys_id)
        if rec is None:
            raise NotFound("unknown voter")
        return rec

    def lookup_credential_json(self, login_id: str) -> str:
        with self._lock:
            vkid = self._by_login.get(login_id) if isinstance(login_id, str) else None
            if vkid is None:
                raise NotFound("unknown voter")
            return self._records[vkid].credential_json

    def lookup_credential(self, login_id: str) -> CredentialFile:
        return CredentialFile.from_json(self.lookup_credential_json(login_id))

    def token_body(self, rec: VoterRecord) -> dict:
        return {
            "election_public_key": b64e(self.election_public_key),
            "races": self.config.races,
            "partial_votes": [pv.to_dict() for pv in rec.partial_votes],
            "v": self.config.api_version,
        }

    def issue_token(self, voter_keys_id: str, response: bytes, signature: bytes) -> dict:
        """Check the signed ``challenge_object || client nonce`` and return ``token.json``."""
        with self._lock:
            rec = self._record(voter_keys_id)
            challenge_object = CredentialFile.from_json(rec.credential_json).challenge_object
            if (len(response) != len(challenge_object) + crypto.CLIENT_NONCE_LEN
                    or not hmac.compare_digest(response[:len(challenge_object)], challenge_object)
                    or not crypto.verify(rec.verify_key, response, signature)):
                raise AuthenticationError("challenge response rejected")
            return self.token_body(rec)

    def store_partial_vote(self, voter_keys_id: str, pv: PartialVote) -> dict:
        with self._lock:
            rec = self._record(voter_keys_id)
            if not crypto.verify(rec.verify_key, pv.signed_bytes(), pv.signature):
                raise AuthenticationError("partial vote signature rejected")
            rec.partial_votes.append(pv)
            return {"stored": len(rec.partial_votes)}

    def _fresh_receipt(self):
        while True:
            receipt = f"{self.rng.randrange(10 ** RECEIPT_DIGITS):0{RECEIPT_DIGITS}d}"
            if receipt not in self._receipts:
                return receipt

    def cast_ballot(self, voter_keys_id: str, ballot: Ballot) -> str:
        with self._lock:
            rec = self._record(voter_keys_id)
            if rec.final_ballot is not None:
                raise AlreadyVoted("a ballot has already been cast for this voter")
            if not crypto.verify(rec.verify_key, ballot.signed_bytes(), ballot.signature):
                raise AuthenticationError("ballot signature rejected")
            receipt = self._fresh_receipt()
            rec.final_ballot = ballot
            rec.receipt = receipt
            self._receipts.add(receipt)
            return receipt

    def verify_readback(self, ivote_id: str, pin: str, receipt: str) -> dict:
        """Telephone verification: the cast preferences, in order."""
        failure = VerificationFailed("verification failed")
        try:
            creds = Credentials(ivote_id, pin)
        except ValidationError:
            raise failure from None
        login_id = crypto.derive_login_id(creds, self.config.kdf_iterations)
        with self._lock:
            vkid = self._by_login.get(login_id)
            rec = self._records.get(vkid) if vkid else None
            if (rec is None or rec.receipt is None or not isinstance(receipt, str)
                    or not hmac.compare_digest(rec.receipt.encode(), receipt.encode())):
                raise failure
            try:
                return open_ballot(self._election_key, rec.final_ballot)
            except (IVoteError, ValueError):
                raise failure from None

    # -- wire dispatch ---------------------------------------------------------

    LOGIN_PAGE_HTML = (
        "<!doctype html><html><head><title>iVote Core Voting System</title></head><body>"
        "<form id='login'><label>iVote number <input name='iVoteID' maxlength='8'></label>"
        "<label>PIN <input name='PIN' type='password' maxlength='6'></label>"
        "<button type='submit'>Log in</button></form></body></html>"
    )

    def handle(self, msg: dict) -> dict:
        """Dispatch one decoded request envelope; returns the response body."""
        endpoint = msg["endpoint"]
        kind = wire.endpoint_kind(endpoint)
        body = msg.get("body") or {}
        vkid = msg.get("voter_keys_id")
        if kind == wire.LOGIN_PAGE:
            return {"html": self.LOGIN_PAGE_HTML}
        if kind == wire.REGISTER:
            identity = body.get("identity")
            if not isinstance(identity, str) or not identity:
                raise ValidationError("registration needs an identity")
            try:
                pin = crypto.hybrid_decrypt(self._registration_key, b64d(body["sealed_pin"]),
                                            b"registration-pin").decode("ascii")
            except (KeyError, UnicodeDecodeError, AuthenticationError, ValueError):
                raise ValidationError("registration PIN could not be opened") from None
            self.mailbox.deliver(identity, self.register(identity, pin))
            return {"delivery": "out-of-band"}
        if kind == wire.LOGIN:
            return json.loads(self.lookup_credential_json(body.get("voterID")))
        if kind == "vote-encoder/token":
            return self.issue_token(vkid, b64d(body["response"]), b64d(body["signature"]))
        if kind == "vote-encoder/partial_vote":
            return self.store_partial_vote(vkid, PartialVote.from_dict(body))
        if kind == "vote-encoder/vote":
            return {"receipt": self.cast_ballot(vkid, Ballot.from_dict(body))}
        if kind == wire.READBACK:
            return {"preferences": self.verify_readback(body.get("ivote_id"), body.get("pin"),
                                                        body.get("receipt"))}
        raise NotFound(f"no such endpoint {endpoint!r}")

    def handle_raw(self, raw: bytes) -> bytes:
        try:
            msg = wire.decode_request(raw)
            return wire.encode_response(self.handle(msg))
        except IVoteError as exc:
            return wire.encode_error(exc)
        except (KeyError, TypeError, AttributeError) as exc:
            return wire.encode_error(ValidationError(f"malformed request: {exc!r}"))

    exchange = handle_raw

    # -- persistence -----------------------------------------------------------

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "config": self.config.to_dict(),
                "keys": {
                    "signing": b64e(crypto.signing_key_bytes(self._signing_key)),
                    "election": b64e(crypto.election_key_bytes(self._election_key)),
                    "registration": b64e(crypto.election_key_bytes(self._registration_key)),
                    "id_secret": b64e(self._id_secret),
                },
                "issued_ids": sorted(self._issued_ids),
                "receipts": sorted(self._receipts),
                "voters": [self._records[k].to_dict() for k in sorted(self._records)],
            }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, indent=1)

    def save(self, path):
        Path(path).write_text(self.snapshot_json())

    @classmethod
    def from_snapshot(cls, data, rng=None) -> "IVoteServer":
        keys = data["keys"]
        srv = cls(ElectionConfig(**data["config"]), rng,
                  signing_key=crypto.load_signing_key(b64d(keys["signing"])),
                  election_key=crypto.load_election_private_key(b64d(keys["election"])),
                  registration_key=crypto.load_election_private_key(b64d(keys["registration"])),
                  id_secret=b64d(keys["id_secret"]))
        srv._issued_ids = set(data["issued_ids"])
        srv._receipts = set(data["receipts"])
        for d in data["voters"]:
            rec = VoterRecord.from_dict(d)
            srv._records[rec.voter_keys_id] = rec
            srv._by_login[rec.login_id] = rec.voter_keys_id
        return srv

    @classmethod
    def load(cls, path, rng=None) -> "IVoteServer":
        return cls.from_snapshot(json.loads(Path(path).read_text()), rng)
