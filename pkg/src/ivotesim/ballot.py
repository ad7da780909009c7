"""Preference encoding, partial votes and final ballots.

Preferences are a mapping ``race_id -> [candidate, ...]`` (full or partial
ranking). The plaintext form is canonical JSON so the same preferences
always encode to the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import crypto
from .crypto import SealedBlob, b64d, b64e
from .errors import ValidationError

DEFAULT_RACES = {
    "assembly": ["ALLEN", "BROOKS", "CHEN", "DOYLE", "EVANS"],
    "council": ["FARRAR", "GUPTA", "HOLT", "IBRAHIM", "JONES", "KOVAC", "LUND"],
}


def encode_preferences(prefs) -> bytes:
    return json.dumps({race: list(c) for race, c in prefs.items()},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_preferences(data: bytes) -> dict:
    try:
        prefs = json.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"preferences are not canonical JSON: {exc}") from None
    if not isinstance(prefs, dict) or not all(
            isinstance(v, list) and all(isinstance(c, str) for c in v) for v in prefs.values()):
        raise ValidationError("preferences must map race ids to candidate lists")
    return prefs


def validate_preferences(prefs, races, *, complete=False):
    """Raise ``ValidationError`` unless ``prefs`` only names known races/candidates.

    With ``complete=True`` every race must carry a non-empty ranking.
    """
    if not isinstance(prefs, dict):
        raise ValidationError("preferences must be a mapping of race -> ranking")
    for race, ranking in prefs.items():
        if race not in races:
            raise ValidationError(f"unknown race {race!r}")
        if len(set(ranking)) != len(ranking):
            raise ValidationError(f"duplicate candidate in race {race!r}")
        for candidate in ranking:
            if candidate not in races[race]:
                raise ValidationError(f"{candidate!r} is not a candidate in race {race!r}")
    if complete:
        missing = [r for r in races if not prefs.get(r)]
        if missing:
            raise ValidationError(f"no preferences for race(s) {missing}")


@dataclass(frozen=True)
class PartialVote:
    """``eo`` is the preference snapshot sealed under ``kp``."""

    eo: SealedBlob
    signature: bytes

    def to_dict(self):
        return {"eo": self.eo.to_b64(), "signature": b64e(self.signature)}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(SealedBlob.from_b64(data["eo"]), b64d(data["signature"]))
        except (KeyError, TypeError):
            raise ValidationError("partial vote must carry 'eo' and 'signature'") from None

    def signed_bytes(self):
        return self.eo.to_bytes()


def make_partial_vote(prefs, kp, sk, rng=None) -> PartialVote:
    eo = crypto.seal(kp, encode_preferences(prefs), rng=rng)
    return PartialVote(eo, crypto.sign(sk, eo.to_bytes()))


def open_partial_vote(kp, pv: PartialVote) -> dict:
    return decode_preferences(crypto.unseal(kp, pv.eo))


@dataclass(frozen=True)
class Ballot:
    wrapped_key: bytes
    sealed_prefs: SealedBlob
    signature: bytes

    def signed_bytes(self):
        return self.wrapped_key + self.sealed_prefs.to_bytes()

    def to_dict(self):
        return {"wrapped_key": b64e(self.wrapped_key),
                "sealed_prefs": self.sealed_prefs.to_b64(),
                "signature": b64e(self.signature)}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(b64d(data["wrapped_key"]), SealedBlob.from_b64(data["sealed_prefs"]),
                       b64d(data["signature"]))
        except (KeyError, TypeError):
            raise ValidationError("ballot must carry wrapped_key, sealed_prefs, signature") from None


def make_ballot(prefs, election_pk, sk, rng=None) -> Ballot:
    """Seal ``prefs`` under a fresh key, wrap that key to the election, sign both."""
    rng = rng or crypto.system_rng()
    key = rng.randbytes(crypto.KEY_LEN)
    wrapped = crypto.wrap_key(election_pk, key, rng)
    sealed = crypto.seal(key, encode_preferences(prefs), rng=rng)
    return Ballot(wrapped, sealed, crypto.sign(sk, wrapped + sealed.to_bytes()))


def open_ballot(election_sk, ballot: Ballot) -> dict:
    key = crypto.unwrap_key(election_sk, ballot.wrapped_key)
    return decode_preferences(crypto.unseal(key, ballot.sealed_prefs))
