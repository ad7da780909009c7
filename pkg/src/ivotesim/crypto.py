"""Client-side key derivation and sealing primitives.

Everything a voter's browser derives from ``(iVoteID, PIN)``: the login id
posted at login, the keystore-password key that opens ``vkp``, the single
iteration "long password" that opens ``vk``, and the AES-128-GCM envelope
used for every encrypted field. Signatures are Ed25519; the election key is
X25519 used as a hybrid (ECDH + HKDF + AES-GCM) key wrap.

All randomness is drawn from an ``rng`` object exposing ``randbytes(n)``
(``random.Random`` for seeded simulations, ``random.SystemRandom`` otherwise).
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import random
import re
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import MalformedCredentialFile, ValidationError, WrongCredentials, AuthenticationError

DEFAULT_ITERATIONS = 8000
DEFAULT_ID_DIGITS = 8
DEFAULT_PIN_DIGITS = 6
KEY_LEN = 16
NONCE_LEN = 12
TAG_LEN = 16
SALT_LEN = 16
LOGIN_SALT = bytes(20)
CHALLENGE_LEN = 32
CLIENT_NONCE_LEN = 16
SIGNATURE_LEN = 64
COMMON_NAME_PREFIX = "VoterAuth_"

LOGIN_SUFFIX = "voterid"
KEYSTORE_SUFFIX = "passKS"

_DIGITS = re.compile(r"[0-9]+")
_system_rng = random.SystemRandom()


def system_rng():
    return _system_rng


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64d(text: str) -> bytes:
    """Strict standard Base64: rejects non-canonical encodings of the same bytes."""
    try:
        raw = base64.b64decode(text, validate=True)
    except (binascii.Error, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid base64: {exc}") from None
    if b64e(raw) != text:
        raise ValidationError("non-canonical base64")
    return raw


@dataclass(frozen=True)
class Credentials:
    """An ``(iVoteID, PIN)`` pair. Leading zeros are significant."""

    ivote_id: str
    pin: str = field(repr=False)

    def __post_init__(self):
        for name in ("ivote_id", "pin"):
            value = getattr(self, name)
            if not isinstance(value, str) or not _DIGITS.fullmatch(value):
                raise ValidationError(f"{name} must be a non-empty decimal string")

    def check(self, id_digits=DEFAULT_ID_DIGITS, pin_digits=DEFAULT_PIN_DIGITS):
        if len(self.ivote_id) != id_digits:
            raise ValidationError(f"ivote_id must have exactly {id_digits} digits")
        if len(self.pin) != pin_digits:
            raise ValidationError(f"pin must have exactly {pin_digits} digits")
        return self


def kdf_password(creds: Credentials, suffix: str) -> bytes:
    """``iVoteID + "," + Base64(SHA256(PIN)) + "," + suffix`` as bytes."""
    pin_hash = b64e(hashlib.sha256(creds.pin.encode("ascii")).digest())
    return f"{creds.ivote_id},{pin_hash},{suffix}".encode("ascii")


def _pbkdf2(password: bytes, salt: bytes, iterations: int) -> bytes:
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    return hashlib.pbkdf2_hmac("sha1", password, salt, iterations, KEY_LEN)


def derive_login_id(creds: Credentials, iterations: int = DEFAULT_ITERATIONS) -> str:
    """The hex ``voterID`` posted at login."""
    if not isinstance(creds, Credentials):
        raise ValidationError("expected Credentials")
    return _pbkdf2(kdf_password(creds, LOGIN_SUFFIX), LOGIN_SALT, iterations).hex()


def derive_keystore_password_key(creds: Credentials, salt: bytes,
                                 iterations: int = DEFAULT_ITERATIONS) -> bytes:
    """AES key that unseals the derived password stored in ``vkp``."""
    if not isinstance(creds, Credentials):
        raise ValidationError("expected Credentials")
    if not isinstance(salt, (bytes, bytearray)) or len(salt) != SALT_LEN:
        raise ValidationError(f"vkp salt must be {SALT_LEN} bytes")
    return _pbkdf2(kdf_password(creds, KEYSTORE_SUFFIX), bytes(salt), iterations)


def derive_long_password(derived_password: bytes, vk_salt: bytes) -> bytes:
    # single iteration, by design of the original client
    return _pbkdf2(derived_password, vk_salt, 1)


@dataclass(frozen=True)
class SealedBlob:
    nonce: bytes
    ciphertext_and_tag: bytes

    def __post_init__(self):
        if len(self.nonce) != NONCE_LEN:
            raise ValidationError(f"nonce must be {NONCE_LEN} bytes")
        if len(self.ciphertext_and_tag) < TAG_LEN:
            raise ValidationError("sealed blob shorter than a GCM tag")

    def to_bytes(self) -> bytes:
        return self.nonce + self.ciphertext_and_tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedBlob":
        if len(data) < NONCE_LEN + TAG_LEN:
            raise ValidationError("sealed blob must be at least 28 bytes")
        return cls(bytes(data[:NONCE_LEN]), bytes(data[NONCE_LEN:]))

    def to_b64(self) -> str:
        return b64e(self.to_bytes())

    @classmethod
    def from_b64(cls, text: str) -> "SealedBlob":
        return cls.from_bytes(b64d(text))


def _check_key(key):
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_LEN:
        raise ValidationError(f"key must be {KEY_LEN} bytes")


def seal(key: bytes, plaintext: bytes, nonce: bytes | None = None, rng=None) -> SealedBlob:
    _check_key(key)
    if nonce is None:
        nonce = (rng or _system_rng).randbytes(NONCE_LEN)
    if len(nonce) != NONCE_LEN:
        raise ValidationError(f"nonce must be {NONCE_LEN} bytes")
    return SealedBlob(bytes(nonce), AESGCM(bytes(key)).encrypt(nonce, bytes(plaintext), None))


def unseal(key: bytes, blob: SealedBlob) -> bytes:
    """Authenticate then decrypt; raises ``AuthenticationError`` on tag mismatch."""
    _check_key(key)
    try:
        return AESGCM(bytes(key)).decrypt(blob.nonce, blob.ciphertext_and_tag, None)
    except InvalidTag:
        raise AuthenticationError("GCM tag mismatch") from None


# -- signatures ---------------------------------------------------------------

def generate_signing_key(rng=None) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes((rng or _system_rng).randbytes(32))


def signing_key_bytes(sk: Ed25519PrivateKey) -> bytes:
    return sk.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                            serialization.NoEncryption())


def load_signing_key(raw: bytes) -> Ed25519PrivateKey:
    if len(raw) != 32:
        raise ValidationError("signing key must be 32 raw bytes")
    return Ed25519PrivateKey.from_private_bytes(raw)


def public_key_bytes(key) -> bytes:
    if isinstance(key, (Ed25519PrivateKey, X25519PrivateKey)):
        key = key.public_key()
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _load_verify_key(pk) -> Ed25519PublicKey:
    if isinstance(pk, Ed25519PublicKey):
        return pk
    if isinstance(pk, Ed25519PrivateKey):
        return pk.public_key()
    if isinstance(pk, (bytes, bytearray)) and len(pk) == 32:
        return Ed25519PublicKey.from_public_bytes(bytes(pk))
    raise ValidationError("verify key must be an Ed25519 public key or 32 raw bytes")


def sign(sk: Ed25519PrivateKey, message: bytes) -> bytes:
    if not isinstance(sk, Ed25519PrivateKey):
        raise ValidationError("signing key must be Ed25519")
    return sk.sign(bytes(message))


def verify(pk, message: bytes, signature: bytes) -> bool:
    key = _load_verify_key(pk)
    try:
        key.verify(bytes(signature), bytes(message))
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


# -- election hybrid encryption ------------------------------------------------

def generate_election_key(rng=None) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes((rng or _system_rng).randbytes(32))


def load_election_private_key(raw: bytes) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(raw)


def election_key_bytes(sk: X25519PrivateKey) -> bytes:
    return sk.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                            serialization.NoEncryption())


def _hybrid_kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes, context: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=None,
                info=b"ivotesim hybrid|" + context + b"|" + eph_pub + recipient_pub).derive(shared)


def hybrid_encrypt(recipient_pk: bytes, plaintext: bytes, context: bytes, rng=None) -> bytes:
    """X25519 + HKDF-SHA256 + AES-128-GCM; output is ``eph_pub || SealedBlob``."""
    rng = rng or _system_rng
    if not isinstance(recipient_pk, (bytes, bytearray)) or len(recipient_pk) != 32:
        raise ValidationError("recipient key must be 32 raw bytes")
    recipient = X25519PublicKey.from_public_bytes(bytes(recipient_pk))
    eph = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    eph_pub = public_key_bytes(eph)
    kek = _hybrid_kek(eph.exchange(recipient), eph_pub, bytes(recipient_pk), context)
    return eph_pub + seal(kek, plaintext, rng=rng).to_bytes()


def hybrid_decrypt(recipient_sk: X25519PrivateKey, data: bytes, context: bytes) -> bytes:
    if len(data) < 32 + NONCE_LEN + TAG_LEN:
        raise ValidationError("hybrid ciphertext too short")
    eph_pub = bytes(data[:32])
    shared = recipient_sk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    kek = _hybrid_kek(shared, eph_pub, public_key_bytes(recipient_sk), context)
    return unseal(kek, SealedBlob.from_bytes(data[32:]))


def wrap_key(election_pk: bytes, key: bytes, rng=None) -> bytes:
    """Encrypt a fresh 16-byte ballot key to the election public key."""
    _check_key(key)
    return hybrid_encrypt(election_pk, key, b"ballot-key", rng)


def unwrap_key(election_sk: X25519PrivateKey, wrapped: bytes) -> bytes:
    key = hybrid_decrypt(election_sk, wrapped, b"ballot-key")
    if len(key) != KEY_LEN:
        raise ValidationError("wrapped key has the wrong length")
    return key


# -- credential file -----------------------------------------------------------

@dataclass(frozen=True)
class CredentialFile:
    """The ``credential.json`` container served at login.

    ``vad`` holds the voter certificate stand-in (common name and Ed25519
    verify key); ``vk`` the keystore salt, sealed signing key and sealed
    secrets; ``vkp`` the sealed derived password and its salt.
    """

    common_name: str
    verify_key: bytes
    vk_salt: bytes
    store: SealedBlob
    secrets: dict
    vkp_password: SealedBlob
    vkp_salt: bytes
    challenge_object: bytes

    @property
    def voter_keys_id(self) -> str:
        if not self.common_name.startswith(COMMON_NAME_PREFIX):
            raise MalformedCredentialFile("vad common name lacks the VoterAuth_ prefix")
        return self.common_name[len(COMMON_NAME_PREFIX):]

    def to_dict(self) -> dict:
        return {
            "vad": {"common_name": self.common_name, "verify_key": b64e(self.verify_key)},
            "vk": {
                "salt": b64e(self.vk_salt),
                "store": self.store.to_b64(),
                "secrets": {name: blob.to_b64() for name, blob in self.secrets.items()},
            },
            "vkp": {"password": self.vkp_password.to_b64(), "salt": b64e(self.vkp_salt)},
            "challenge_object": b64e(self.challenge_object),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data) -> "CredentialFile":
        try:
            vad, vk, vkp = data["vad"], data["vk"], data["vkp"]
            cf = cls(
                common_name=vad["common_name"],
                verify_key=b64d(vad["verify_key"]),
                vk_salt=b64d(vk["salt"]),
                store=SealedBlob.from_b64(vk["store"]),
                secrets={name: SealedBlob.from_b64(v) for name, v in vk["secrets"].items()},
                vkp_password=SealedBlob.from_b64(vkp["password"]),
                vkp_salt=b64d(vkp["salt"]),
                challenge_object=b64d(data["challenge_object"]),
            )
        except (KeyError, TypeError, AttributeError, ValidationError) as exc:
            raise MalformedCredentialFile(f"credential file is malformed: {exc!r}") from None
        if not isinstance(cf.common_name, str) or len(cf.vk_salt) != SALT_LEN \
                or len(cf.vkp_salt) != SALT_LEN or len(cf.verify_key) != 32:
            raise MalformedCredentialFile("credential file field has the wrong size")
        return cf

    @classmethod
    def from_json(cls, text) -> "CredentialFile":
        try:
            data = json.loads(text)
        except (ValueError, TypeError) as exc:
            raise MalformedCredentialFile(f"credential file is not JSON: {exc}") from None
        return cls.from_dict(data)

    def challenge_parts(self):
        if len(self.challenge_object) != CHALLENGE_LEN + SIGNATURE_LEN:
            raise MalformedCredentialFile("challenge object has the wrong length")
        return (self.challenge_object[:CHALLENGE_LEN], self.challenge_object[CHALLENGE_LEN:])


@dataclass(frozen=True)
class KeyMaterial:
    kp: bytes = field(repr=False)
    sk: Ed25519PrivateKey = field(repr=False)
    voter_keys_id: str

    @property
    def verify_key(self) -> bytes:
        return public_key_bytes(self.sk)


def open_credential_file(creds: Credentials, cf: CredentialFile,
                         iterations: int = DEFAULT_ITERATIONS) -> KeyMaterial:
    """Run the browser's decryption chain and return the voter's keys.

    Any authentication failure along the chain surfaces as the same
    ``WrongCredentials`` error so callers can't tell which step failed.
    """
    if "kp" not in cf.secrets:
        raise MalformedCredentialFile("secrets object has no 'kp' entry")
    voter_keys_id = cf.voter_keys_id
    try:
        k1 = derive_keystore_password_key(creds, cf.vkp_salt, iterations)
        derived_password = unseal(k1, cf.vkp_password)
        long_password = derive_long_password(derived_password, cf.vk_salt)
        kp = unseal(long_password, cf.secrets["kp"])
        sk_raw = unseal(long_password, cf.store)
    except AuthenticationError:
        raise WrongCredentials("credentials do not open this credential file") from None
    if len(kp) != KEY_LEN:
        raise MalformedCredentialFile("kp has the wrong length")
    try:
        sk = load_signing_key(sk_raw)
    except (ValidationError, ValueError):
        raise MalformedCredentialFile("keystore does not hold an Ed25519 key") from None
    if public_key_bytes(sk) != cf.verify_key:
        raise MalformedCredentialFile("keystore key does not match the vad certificate")
    return KeyMaterial(kp=kp, sk=sk, voter_keys_id=voter_keys_id)


def build_credential_file(creds: Credentials, voter_keys_id: str,
                          server_key: Ed25519PrivateKey, rng=None,
                          iterations: int = DEFAULT_ITERATIONS):
    """Forward construction inverted exactly by ``open_credential_file``.

    Returns ``(credential_file, key_material)``; fresh salts, nonces, ``kp``,
    signing key and challenge are drawn from ``rng``.
    """
    rng = rng or _system_rng
    vkp_salt = rng.randbytes(SALT_LEN)
    vk_salt = rng.randbytes(SALT_LEN)
    derived_password = rng.randbytes(32)
    kp = rng.randbytes(KEY_LEN)
    sk = generate_signing_key(rng)
    k1 = derive_keystore_password_key(creds, vkp_salt, iterations)
    long_password = derive_long_password(derived_password, vk_salt)
    challenge = rng.randbytes(CHALLENGE_LEN)
    cf = CredentialFile(
        common_name=COMMON_NAME_PREFIX + voter_keys_id,
        verify_key=public_key_bytes(sk),
        vk_salt=vk_salt,
        store=seal(long_password, signing_key_bytes(sk), rng=rng),
        secrets={"kp": seal(long_password, kp, rng=rng)},
        vkp_password=seal(k1, derived_password, rng=rng),
        vkp_salt=vkp_salt,
        challenge_object=challenge + sign(server_key, challenge),
    )
    return cf, KeyMaterial(kp=kp, sk=sk, voter_keys_id=voter_keys_id)
