"""Seeded election runs and attack scenarios built from the protocol pieces.

One ``random.Random(seed)`` feeds every random choice (keys, ids, PINs,
preferences, nonces), so a seed fixes the whole run. Wall-clock numbers
only appear under ``timing`` keys.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import asdict, dataclass, field, fields

from . import client, wire
from .ballot import DEFAULT_RACES
from .bruteforce import Cracker
from .crypto import Credentials
from .errors import (
    AlreadyVoted,
    BudgetExceeded,
    IVoteError,
    PreconditionError,
    ValidationError,
)
from .proxy import AttackConfig, DDoSProxy
from .server import ElectionConfig, IVoteServer

PROXY_MODES = ("none", "passive", "profiling", "inject")
SCENARIOS = ("crack", "inject", "substitute", "link", "partials")
# weakest proxy position each scenario needs
SCENARIO_PROXY = {"crack": "passive", "partials": "passive", "link": "profiling",
                  "inject": "inject", "substitute": "inject"}
DEFAULT_ATTACKER_PREFS = {race: list(reversed(cands)) for race, cands in DEFAULT_RACES.items()}


@dataclass
class RunConfig:
    seed: int = 0
    voters: int = 10
    pin_digits: int = 6
    id_digits: int = 8
    iterations: int = 8000
    races: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_RACES.items()})
    proxy: str | None = None           # None: "none" for simulate, scenario default for attack
    workers: int = 1
    targets: int = 5                   # sessions attacked in crack/substitute/partials
    known_id: bool = True              # crack with the iVoteID as a hint
    substitute_via: str = "inject"     # or "crack"
    same_device: float = 0.5           # share of voters who register and vote on one device
    crack_budget_seconds: float | None = None
    cookie_lifetime_seconds: int = 20
    submit_delay: float = 1.0          # seconds between typing the PIN and submitting
    attacker_prefs: dict | None = None
    out: str | None = None
    json: bool = False

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ValidationError(msg)
        for name in ("voters", "pin_digits", "id_digits", "iterations", "workers"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool) and value >= 1,
                 f"{name} must be a positive integer")
        need(isinstance(self.seed, int), "seed must be an integer")
        need(self.pin_digits <= 12 and self.id_digits <= 12, "digit counts above 12 are not supported")
        need(self.proxy is None or self.proxy in PROXY_MODES,
             f"proxy must be one of {', '.join(PROXY_MODES)}")
        need(isinstance(self.targets, int) and self.targets >= 0, "targets must be >= 0")
        need(self.substitute_via in ("inject", "crack"), "substitute_via must be inject or crack")
        need(0.0 <= self.same_device <= 1.0, "same_device must be within [0, 1]")
        need(isinstance(self.races, dict) and self.races
             and all(isinstance(c, list) and c for c in self.races.values()),
             "races must map race ids to non-empty candidate lists")
        need(self.crack_budget_seconds is None or self.crack_budget_seconds > 0,
             "crack_budget_seconds must be positive")
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def load_config_file(path, base: RunConfig | None = None) -> RunConfig:
    """Overlay a JSON config file on ``base``; errors name the offending line."""
    text = open(path, encoding="utf-8").read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}:1: config must be a JSON object")

    def line_of(key):
        for n, line in enumerate(text.splitlines(), 1):
            if f'"{key}"' in line:
                return n
        return 1

    merged = asdict(base or RunConfig())
    for key, value in data.items():
        if key not in merged:
            raise ValidationError(f"{path}:{line_of(key)}: unknown setting {key!r}")
        merged[key] = value
    cfg = RunConfig(**merged)
    try:
        cfg.validate()
    except ValidationError as exc:
        key = str(exc).split(" ", 1)[0]
        raise ValidationError(f"{path}:{line_of(key)}: {exc}") from None
    return cfg


def _random_prefs(rng, races):
    prefs = {}
    for race, cands in races.items():
        ranked = rng.sample(cands, len(cands))
        keep = rng.randint(1, len(cands))
        prefs[race] = ranked[:keep]
    return prefs


@dataclass
class Voter:
    index: int
    identity: str
    pin: str
    ivote_id: str | None = None
    same_device: bool = True
    registration_session: str | None = None
    voting_sessions: list = field(default_factory=list)
    partials: list = field(default_factory=list)
    intended: dict | None = None
    resumed: dict | None = None
    receipt: str | None = None
    readback: dict | None = None
    revote_rejected: bool | None = None
    error: str | None = None

    @property
    def credentials(self):
        return Credentials(self.ivote_id, self.pin)


class Election:
    """A server, optionally fronted by the proxy, plus the voters who use it."""

    def __init__(self, config: RunConfig, attack: AttackConfig | None = None):
        self.config = config.validate()
        self.rng = random.Random(config.seed)
        self.clock = wire.SimClock()
        self.server = IVoteServer(
            ElectionConfig(config.races, config.pin_digits, config.id_digits, config.iterations),
            self.rng)
        self.upstream = wire.LocalTransport(self.server)
        self.proxy = DDoSProxy(self.upstream, attack, self.clock, self.rng) if attack else None
        self.voters: list[Voter] = []

    def _channel(self):
        if self.proxy is None:
            return self.upstream, None
        conn = self.proxy.connect()
        return conn, conn.session_id

    def _browser(self):
        return client.Browser(self.clock, self.rng)

    def _login(self, voter, browser):
        transport, sid = self._channel()
        voter.voting_sessions.append(sid)
        return client.login(voter.credentials, transport, server_key=self.server.server_verify_key,
                            browser=browser, iterations=self.config.iterations, rng=self.rng,
                            submit_delay=self.config.submit_delay), sid

    def run_voter(self, index, before_cast=None) -> Voter:
        """register -> login, save two partials -> login, resume, cast, re-vote -> read-back."""
        cfg = self.config
        cutoff = round(cfg.same_device * cfg.voters)
        pin = f"{self.rng.randrange(10 ** cfg.pin_digits):0{cfg.pin_digits}d}"
        voter = Voter(index, f"voter-{index:05d}", pin, same_device=index < cutoff)
        self.voters.append(voter)
        try:
            browser = self._browser()
            transport, voter.registration_session = self._channel()
            client.register(transport, browser, voter.identity, voter.pin,
                            self.server.registration_public_key, self.rng)
            voter.ivote_id = self.server.mailbox.collect(voter.identity)
            self.clock.advance(60)
            if not voter.same_device:
                browser = self._browser()

            session, _ = self._login(voter, browser)
            final = _random_prefs(self.rng, cfg.races)
            first_race = next(iter(cfg.races))
            voter.partials = [{first_race: final[first_race]}, final]
            for p in voter.partials:
                client.save_partial(session, p)
                self.clock.advance(5)
            voter.intended = final
            self.clock.advance(60)

            session, sid = self._login(voter, browser)
            voter.resumed = client.resume(session)
            if before_cast is not None:
                before_cast(voter, sid)
            voter.receipt = client.cast(session, final)
            try:
                client.cast(session, final)
                voter.revote_rejected = False
            except AlreadyVoted:
                voter.revote_rejected = True
            voter.readback = self.server.verify_readback(voter.ivote_id, voter.pin, voter.receipt)
        except IVoteError as exc:
            voter.error = f"{exc.code}: {exc}"
        self.clock.advance(30)
        return voter

    def run(self, before_cast=None):
        for i in range(self.config.voters):
            self.run_voter(i, before_cast)
        return self.voters


def _voter_rows(voters):
    return [{
        "identity": v.identity,
        "receipt": v.receipt,
        "resumed_ok": v.resumed == v.intended,
        "readback_ok": v.readback == v.intended,
        "revote_rejected": v.revote_rejected,
        "error": v.error,
    } for v in voters]


def simulate(config: RunConfig) -> dict:
    """Run an election, optionally through a non-attacking proxy."""
    mode = config.proxy or "none"
    attack = None
    if mode != "none":
        attack = AttackConfig(profiling=mode in ("profiling", "inject"), inject=mode == "inject",
                              cookie_lifetime_seconds=config.cookie_lifetime_seconds,
                              kdf_iterations=config.iterations, pin_digits=config.pin_digits,
                              id_digits=config.id_digits)
    election = Election(config, attack)
    voters = election.run()
    rows = _voter_rows(voters)
    receipts = [v.receipt for v in voters if v.receipt]
    return {
        "command": "simulate",
        "seed": config.seed,
        "proxy": mode,
        "voters": len(voters),
        "receipts": len(receipts),
        "unique_receipts": len(set(receipts)),
        "readbacks_ok": sum(r["readback_ok"] for r in rows),
        "resumes_ok": sum(r["resumed_ok"] for r in rows),
        "revotes_rejected": sum(bool(r["revote_rejected"]) for r in rows),
        "failures": sum(r["error"] is not None for r in rows),
        "ok": all(r["error"] is None and r["readback_ok"] and r["resumed_ok"]
                  and r["revote_rejected"] for r in rows),
        "results": rows,
    }


# -- attacks -----------------------------------------------------------------------

def _mode_rank(mode):
    return PROXY_MODES.index(mode)


def required_proxy(scenario, config):
    if scenario == "substitute" and config.substitute_via == "crack":
        return "passive"
    return SCENARIO_PROXY[scenario]


def attack(config: RunConfig, scenario: str) -> dict:
    """Run ``scenario`` against a seeded election and quantify what the attacker got."""
    if scenario not in SCENARIOS:
        raise ValidationError(f"scenario must be one of {', '.join(SCENARIOS)}")
    need = required_proxy(scenario, config)
    mode = config.proxy or need
    if _mode_rank(mode) < _mode_rank(need):
        raise PreconditionError(f"scenario {scenario!r} needs at least a {need!r} proxy, got {mode!r}")
    acfg = AttackConfig(
        profiling=mode in ("profiling", "inject"), inject=mode == "inject",
        substitute=scenario == "substitute",
        attacker_prefs=config.attacker_prefs or DEFAULT_ATTACKER_PREFS,
        cracker=Cracker(workers=config.workers, budget_seconds=config.crack_budget_seconds),
        cookie_lifetime_seconds=config.cookie_lifetime_seconds,
        kdf_iterations=config.iterations, pin_digits=config.pin_digits,
        id_digits=config.id_digits)
    election = Election(config, acfg)
    report = {"command": "attack", "scenario": scenario, "seed": config.seed, "proxy": mode,
              "voters": config.voters}
    run = {"crack": _attack_crack, "inject": _attack_inject, "substitute": _attack_substitute,
           "link": _attack_link, "partials": _attack_partials}[scenario]
    report.update(run(election))
    return report


def _targets(election):
    return election.voters[:election.config.targets]


def _crack_voter(election, voter, sid):
    hint = voter.ivote_id if election.config.known_id else None
    return election.proxy.crack_session(sid, hint)


def _attack_crack(election):
    election.run()
    px, recovered, progress, started = election.proxy, 0, None, time.perf_counter()
    for voter in _targets(election):
        sid = voter.voting_sessions[-1]
        try:
            creds = _crack_voter(election, voter, sid)
        except BudgetExceeded as exc:
            progress = {"session": sid, "tried": exc.tried}
            break
        recovered += creds == voter.credentials
    targets = len(_targets(election))
    out = {"targets": targets, "credentials_recovered": recovered,
           "ok": recovered == targets and progress is None,
           "timing": {"crack_seconds": round(time.perf_counter() - started, 3)}}
    if progress is not None:
        out["budget_exhausted"] = progress
    return out


def _attack_inject(election):
    voters = election.run()
    px = election.proxy
    correct = harvested = 0
    for v in voters:
        for sid in v.voting_sessions:
            found = {h.credentials for h in px.harvest_credentials(sid)}
            harvested += bool(found)
            correct += found == {v.credentials}
    sessions = sum(len(v.voting_sessions) for v in voters)
    return {"sessions": sessions, "sessions_harvested": harvested,
            "credentials_correct": correct,
            "distinct_credentials": len({c for c in px.recovered.values()}),
            "ok": correct == sessions}


def _attack_substitute(election):
    targets = set(range(election.config.targets))
    armed = {}
    via = election.config.substitute_via

    def before_cast(voter, sid):
        if voter.index not in targets:
            return
        if via == "inject":
            election.proxy.harvest_credentials(sid)
        else:
            _crack_voter(election, voter, sid)
        armed[voter.index] = election.proxy.substitute_ballot(sid)

    voters = election.run(before_cast)
    attacker = election.proxy.config.attacker_prefs
    done = [s for s in armed.values() if s.status == "done"]
    mismatched = sum(v.readback is not None and v.readback != v.intended for v in voters)
    attacker_readbacks = sum(v.readback == attacker for v in voters if v.index in targets)
    untouched = sum(v.readback == v.intended for v in voters if v.index not in targets)
    return {"targets": len(targets), "substituted": len(done),
            "receipts_for_substituted": sum(s.receipt is not None for s in done),
            "readback_mismatches": mismatched,
            "readbacks_attacker_prefs": attacker_readbacks,
            "readbacks_voter_prefs": untouched,
            "failures": sum(v.error is not None for v in voters),
            "ok": len(done) == len(targets) == mismatched == attacker_readbacks
            and untouched == len(voters) - len(targets)}


def _attack_link(election):
    voters = election.run()
    links = election.proxy.link_sessions()
    sharing = [v for v in voters if v.same_device]
    others = [v for v in voters if not v.same_device]
    correct = sum(links.get(v.identity) == v.voting_sessions[-1] for v in sharing)
    wrongly = sum(v.identity in links for v in others)
    return {"sharing_fingerprint": len(sharing), "linked_correctly": correct,
            "not_sharing": len(others), "linked_without_shared_fingerprint": wrongly,
            "ok": correct == len(sharing) and wrongly == 0}


def _attack_partials(election):
    election.run()
    exposed = last_matches = 0
    for voter in _targets(election):
        sid = voter.voting_sessions[-1]
        creds = _crack_voter(election, voter, sid)
        recovered = list(election.proxy.decrypt_partials(sid, creds))
        exposed += recovered == voter.partials
        last_matches += bool(recovered) and recovered[-1] == voter.intended
    targets = len(_targets(election))
    return {"targets": targets, "partials_recovered_exactly": exposed,
            "last_partial_equals_cast": last_matches,
            "ok": exposed == last_matches == targets}
