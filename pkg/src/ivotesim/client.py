"""The voter's browser: login, credential opening, challenge response,
partial-vote save/resume and ballot casting.

Scripts are not executed. ``Browser`` recognizes the DDoS provider's
profiling snippet by its shape and performs what it declares: set a
short-lived profiling cookie and, if the snippet lists watched inputs,
copy those input values into the cookie when they change.
"""

from __future__ import annotations

import re
import urllib.parse
from dataclasses import dataclass, field

from . import crypto, wire
from .ballot import (
    PartialVote,
    make_ballot,
    make_partial_vote,
    open_partial_vote,
    validate_preferences,
)
from .crypto import CredentialFile, Credentials, KeyMaterial, b64d, b64e
from .errors import (
    AuthenticationError,
    CorruptPartial,
    IVoteError,
    LoginFailed,
    ServerAuthError,
    ValidationError,
)

PROFILE_SCRIPT = re.compile(
    r"<script data-incap='profile'>\(function\(\)\{var n='(?P<name>[A-Za-z_]+)',"
    r"t=(?P<life>\d+),w=\[(?P<watch>[^\]]*)\];.*?\}\)\(\);</script>", re.S)


@dataclass
class Cookie:
    value: str
    set_at: float
    max_age: float | None = None

    def alive(self, now):
        return self.max_age is None or now - self.set_at <= self.max_age


class Browser:
    """Cookie jar, device identity and the script behaviours the model honours."""

    def __init__(self, clock: wire.SimClock | None = None, rng=None, device_id: str | None = None):
        self.clock = clock or wire.SimClock()
        rng = rng or crypto.system_rng()
        self.device_id = device_id or rng.randbytes(8).hex()
        self.cookies: dict[str, Cookie] = {}
        self._watches: dict[str, str] = {}    # input name -> profiling cookie name
        self._profile: dict[str, dict] = {}   # cookie name -> fields
        self._lifetimes: dict[str, int] = {}

    def request_cookies(self):
        now = self.clock.now()
        for name in [n for n, c in self.cookies.items() if not c.alive(now)]:
            del self.cookies[name]
        return {name: c.value for name, c in sorted(self.cookies.items())}

    def apply_set_cookies(self, set_cookies):
        now = self.clock.now()
        for name, spec in (set_cookies or {}).items():
            if isinstance(spec, dict):
                self.cookies[name] = Cookie(spec["value"], now, spec.get("max_age"))
            else:
                self.cookies[name] = Cookie(str(spec), now, None)

    def _write_profile(self, name, max_age):
        fields = self._profile[name]
        fields["ts"] = f"{self.clock.now():.3f}"
        self.cookies[name] = Cookie(urllib.parse.urlencode(fields), self.clock.now(), max_age)

    def load_page(self, html: str):
        for m in PROFILE_SCRIPT.finditer(html):
            name, life = m.group("name"), int(m.group("life"))
            watched = [w.strip().strip("'") for w in m.group("watch").split(",") if w.strip()]
            self._profile[name] = {"fp": self.device_id}
            self._write_profile(name, life)
            for field_name in watched:
                self._watches[field_name] = name
            self._lifetimes[name] = life

    def type_into(self, input_name: str, value: str):
        """The user edits an input; fires any onChange hook installed by a script."""
        name = self._watches.get(input_name)
        if name is not None:
            self._profile[name][input_name] = value
            self._write_profile(name, self._lifetimes[name])


def parse_profile_cookie(value: str) -> dict:
    return dict(urllib.parse.parse_qsl(value, keep_blank_values=True))


@dataclass
class Session:
    creds: Credentials = field(repr=False)
    key_material: KeyMaterial
    token: dict
    transport: object = field(repr=False)
    browser: Browser = field(repr=False)
    credential_file: CredentialFile = field(repr=False)
    iterations: int = crypto.DEFAULT_ITERATIONS
    rng: object = field(default=None, repr=False)
    entered_prefs: dict = field(default_factory=dict)
    receipt: str | None = None

    @property
    def voter_keys_id(self):
        return self.key_material.voter_keys_id

    @property
    def api_version(self):
        return self.token.get("v", "1")

    @property
    def races(self):
        return self.token["races"]


def send(transport, browser: Browser, endpoint, body=None, voter_keys_id=None) -> dict:
    """One request/response exchange carrying the browser's live cookies."""
    raw = wire.encode_request(endpoint, body, voter_keys_id, browser.request_cookies())
    msg = wire.decode_response(transport.exchange(raw))
    browser.apply_set_cookies(msg["set_cookies"])
    return msg["body"]


def register(transport, browser: Browser, identity: str, pin: str, registration_key: bytes,
             rng=None) -> dict:
    """Submit a registration; the PIN travels sealed to the registration server."""
    sealed = crypto.hybrid_encrypt(registration_key, pin.encode("ascii"), b"registration-pin", rng)
    return send(transport, browser, wire.REGISTER,
                {"identity": identity, "sealed_pin": b64e(sealed)})


def _challenge_response(cf: CredentialFile, km: KeyMaterial, server_key: bytes, rng):
    challenge, server_sig = cf.challenge_parts()
    if not crypto.verify(server_key, challenge, server_sig):
        raise ServerAuthError("server signature on the challenge does not verify")
    response = cf.challenge_object + rng.randbytes(crypto.CLIENT_NONCE_LEN)
    return {"response": b64e(response), "signature": b64e(crypto.sign(km.sk, response))}


def login(creds: Credentials, transport, *, server_key: bytes, browser: Browser | None = None,
          iterations: int = crypto.DEFAULT_ITERATIONS, rng=None, typing_seconds: float = 6.0,
          submit_delay: float = 1.0, api_version: str = "1") -> Session:
    """Load the login page, type the credentials, and run the full login sequence."""
    rng = rng or crypto.system_rng()
    browser = browser or Browser(rng=rng)
    page = send(transport, browser, wire.LOGIN_PAGE)
    browser.load_page(page.get("html", ""))
    browser.clock.advance(typing_seconds)
    browser.type_into("iVoteID", creds.ivote_id)
    browser.type_into("PIN", creds.pin)
    browser.clock.advance(submit_delay)

    login_id = crypto.derive_login_id(creds, iterations)
    try:
        cf = CredentialFile.from_dict(send(transport, browser, wire.LOGIN, {"voterID": login_id}))
        km = crypto.open_credential_file(creds, cf, iterations)
        answer = _challenge_response(cf, km, server_key, rng)
        token = send(transport, browser, wire.token_endpoint(km.voter_keys_id, api_version),
                     answer, km.voter_keys_id)
    except ServerAuthError:
        raise
    except IVoteError as exc:
        raise LoginFailed(f"login failed: {exc.code}") from None
    if not isinstance(token, dict) or "races" not in token or "election_public_key" not in token:
        raise LoginFailed("token response is malformed")
    return Session(creds, km, token, transport, browser, cf, iterations, rng)


def refresh_token(session: Session) -> dict:
    """Repeat the signed challenge response (fresh nonce) to get a current token."""
    km = session.key_material
    response = session.credential_file.challenge_object + session.rng.randbytes(
        crypto.CLIENT_NONCE_LEN)
    answer = {"response": b64e(response), "signature": b64e(crypto.sign(km.sk, response))}
    session.token = send(session.transport, session.browser,
                         wire.token_endpoint(km.voter_keys_id, session.api_version),
                         answer, km.voter_keys_id)
    return session.token


def save_partial(session: Session, prefs: dict) -> dict:
    """Seal the currently entered preferences under ``kp`` and post them."""
    validate_preferences(prefs, session.races)
    km = session.key_material
    pv = make_partial_vote(prefs, km.kp, km.sk, session.rng)
    ack = send(session.transport, session.browser,
               wire.partial_vote_endpoint(km.voter_keys_id, session.api_version),
               pv.to_dict(), km.voter_keys_id)
    session.entered_prefs = {k: list(v) for k, v in prefs.items()}
    return ack


def resume(session: Session) -> dict | None:
    """Re-fetch the token and restore the most recent partial vote, if any."""
    token = refresh_token(session)
    partials = token.get("partial_votes") or []
    if not partials:
        return None
    try:
        prefs = open_partial_vote(session.key_material.kp, PartialVote.from_dict(partials[-1]))
    except (AuthenticationError, ValidationError) as exc:
        raise CorruptPartial(f"latest partial vote does not open: {exc}") from None
    session.entered_prefs = prefs
    return prefs


def cast(session: Session, prefs: dict) -> str:
    validate_preferences(prefs, session.races, complete=True)
    km = session.key_material
    election_pk = b64d(session.token["election_public_key"])
    ballot = make_ballot(prefs, election_pk, km.sk, session.rng)
    body = send(session.transport, session.browser,
                wire.vote_endpoint(km.voter_keys_id, session.api_version),
                ballot.to_dict(), km.voter_keys_id)
    session.receipt = body["receipt"]
    return session.receipt
