"""Leaf-certificate grabbing, SAN extraction, wildcard matching and clustering."""

from __future__ import annotations

import hashlib
import ipaddress
import socket
import ssl
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from cryptography import x509
from cryptography.x509.oid import ExtensionOID

from ..errors import ValidationError

DEFAULT_PORT = 443


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int = DEFAULT_PORT
    sni: str | None = None

    @property
    def label(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        return f"{host}:{self.port}"

    def server_name(self) -> str | None:
        """SNI to send: explicit value, else the host unless it is an address literal."""
        if self.sni is not None:
            return self.sni
        try:
            ipaddress.ip_address(self.host)
            return None
        except ValueError:
            return self.host


def parse_endpoint(text: str) -> Endpoint:
    """``host``, ``host:port``, ``[v6]:port``; an optional ``@sni`` suffix sets the SNI."""
    text = text.strip()
    sni = None
    if "@" in text:
        text, sni = text.rsplit("@", 1)
    if text.startswith("["):
        host, _, rest = text[1:].partition("]")
        port = rest[1:] if rest.startswith(":") else ""
    elif text.count(":") == 1:
        host, port = text.split(":")
    else:
        host, port = text, ""
    if not host:
        raise ValidationError(f"endpoint {text!r} has no host")
    try:
        port_num = int(port) if port else DEFAULT_PORT
    except ValueError:
        raise ValidationError(f"endpoint {text!r} has a bad port") from None
    if not 0 < port_num < 65536:
        raise ValidationError(f"endpoint {text!r} has a bad port")
    return Endpoint(host, port_num, sni or None)


def load_endpoints(path) -> list:
    """One endpoint per line; blank lines and ``#`` comments are skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append(parse_endpoint(line))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class CertRecord:
    endpoint: Endpoint
    der: bytes = field(repr=False)
    fingerprint: str
    subject: str
    san_list: tuple
    other_san_count: int
    handshake_rtt_ms: float


@dataclass(frozen=True)
class ScanFailure:
    endpoint: Endpoint
    reason: str


def fingerprint(der: bytes) -> str:
    return hashlib.sha256(der).hexdigest()


def _load(der: bytes) -> x509.Certificate:
    try:
        return x509.load_der_x509_certificate(der)
    except ValueError as exc:
        raise ValidationError(f"certificate does not parse: {exc}") from None


def san_entries(der: bytes) -> tuple:
    """``(dns_names, count_of_other_entries)`` from the SAN extension, order preserved."""
    cert = _load(der)
    try:
        ext = cert.extensions.get_extension_for_oid(ExtensionOID.SUBJECT_ALTERNATIVE_NAME)
    except x509.ExtensionNotFound:
        return [], 0
    dns, other = [], 0
    for name in ext.value:
        if isinstance(name, x509.DNSName):
            dns.append(name.value)
        else:
            other += 1
    return dns, other


def extract_sans(der: bytes) -> list:
    return san_entries(der)[0]


def covers(san_entry: str, target: str) -> bool:
    """Certificate name matching: exact, or ``*`` as the whole leftmost label."""
    san = san_entry.lower().rstrip(".")
    target = target.lower().rstrip(".")
    if not san or not target:
        return False
    if "*" not in san:
        return san == target
    label, _, rest = san.partition(".")
    if label != "*" or "*" in rest or not rest:
        return False
    first, _, target_rest = target.partition(".")
    return bool(first) and target_rest == rest


def grab_cert(ep: Endpoint, timeout: float = 5.0):
    """Handshake with ``ep`` and capture its leaf certificate; no application data."""
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.check_hostname = False
    ctx.verify_mode = ssl.CERT_NONE
    started = time.perf_counter()
    try:
        with socket.create_connection((ep.host, ep.port), timeout=timeout) as sock:
            with ctx.wrap_socket(sock, server_hostname=ep.server_name()) as tls:
                der = tls.getpeercert(binary_form=True)
    except ConnectionRefusedError:
        return ScanFailure(ep, "connection refused")
    except (socket.timeout, TimeoutError):
        return ScanFailure(ep, "timeout")
    except socket.gaierror as exc:
        return ScanFailure(ep, f"name resolution failed: {exc}")
    except ssl.SSLError as exc:
        return ScanFailure(ep, f"tls handshake failed: {exc.reason or exc}")
    except OSError as exc:
        return ScanFailure(ep, f"connection failed: {exc}")
    rtt = (time.perf_counter() - started) * 1000.0
    if not der:
        return ScanFailure(ep, "no certificate presented")
    try:
        cert = _load(der)
        dns, other = san_entries(der)
    except ValidationError as exc:
        return ScanFailure(ep, str(exc))
    return CertRecord(ep, der, fingerprint(der), cert.subject.rfc4514_string(), tuple(dns),
                      other, rtt)


@dataclass
class FootprintReport:
    target: str
    clusters: dict                       # fingerprint -> [endpoint label]
    coverage: list                       # endpoint labels whose cert covers target
    cohabitants: list                    # other SAN entries on covering certs
    failures: list                       # [{"endpoint", "reason"}]
    records: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "clusters": {fp: list(eps) for fp, eps in sorted(self.clusters.items())},
            "coverage": list(self.coverage),
            "cohabitants": list(self.cohabitants),
            "failures": list(self.failures),
            "certificates": {
                r.fingerprint: {"subject": r.subject, "san_list": list(r.san_list),
                                "other_san_count": r.other_san_count}
                for r in self.records
            },
            "handshake_rtt_ms": {r.endpoint.label: round(r.handshake_rtt_ms, 3)
                                 for r in self.records},
        }


def footprint_report(endpoints, target: str, parallelism: int = 8,
                     timeout: float = 5.0) -> FootprintReport:
    """Scan ``endpoints`` with a bounded pool and cluster them by certificate."""
    endpoints = list(endpoints)
    if not endpoints:
        raise ValidationError("endpoint list is empty")
    if parallelism < 1:
        raise ValidationError("parallelism must be >= 1")
    with ThreadPoolExecutor(max_workers=min(parallelism, len(endpoints))) as pool:
        results = list(pool.map(lambda ep: grab_cert(ep, timeout), endpoints))

    clusters, coverage, failures, records = {}, [], [], []
    cohabitants = {}
    seen_certs = set()
    for res in results:
        if isinstance(res, ScanFailure):
            failures.append({"endpoint": res.endpoint.label, "reason": res.reason})
            continue
        clusters.setdefault(res.fingerprint, []).append(res.endpoint.label)
        records.append(res)
        if any(covers(s, target) for s in res.san_list):
            coverage.append(res.endpoint.label)
            if res.fingerprint not in seen_certs:
                seen_certs.add(res.fingerprint)
                for s in res.san_list:
                    if not covers(s, target):
                        cohabitants.setdefault(s, None)
    return FootprintReport(target, clusters, coverage, list(cohabitants), failures, records)
