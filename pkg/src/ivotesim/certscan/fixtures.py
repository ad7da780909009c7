"""Local TLS servers with generated certificates, standing in for a provider's PoPs."""

from __future__ import annotations

import datetime
import ipaddress
import socket
import ssl
import tempfile
import threading
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

from .scan import Endpoint

# SAN list of the shared provider certificate observed serving the election domain
SHARED_CERT_SANS = (
    "incapsula.com", "*.1strongteam.com", "*.absolutewatches.com.au", "*.advancemotors.com.au",
    "*.alconchirurgia.pl", "*.amplex.com.au", "*.bohemiocollection.com.au",
    "*.cheapcaribbean.com", "*.compareit4me.com", "*.elections.wa.gov.au",
    "*.everafterhigh.com", "*.farmerslifeonline.com", "*.floraandfauna.com.au",
    "*.heypennyfabrics.com.au", "*.homeaway.com.ph", "*.jetblackespresso.com.au",
    "*.lifemapco.com", "*.lovemyearth.net", "*.maklernetz.at", "*.mobile-vertriebe.de",
    "*.mobile.zurich.com.ar", "*.monsterhigh.com", "*.mycommunitystarter.co.uk",
    "*.noosacivicshopping.com.au", "*.oilsforlifeaustralia.com.au", "*.planetparts.com.au",
    "*.purina.lt", "*.redsimaging.com.au", "*.rlicorp.com", "*.roundup.fr",
    "*.sassykat.com.au", "*.spendwellhealth.com", "*.sublimation.com.au",
    "*.uat.user.zurichpartnerzone.com", "*.woodgrove.com.au", "*.yamahamotor-webservice.com",
    "*.zlaponline.com", "*.zurich-personal.co.uk", "*.zurich.ae", "*.zurich.co.jp",
    "*.zurich.es", "*.zurich.jp", "*.zurichlife.co.jp", "*.zurichseguros.pt",
    "1strongteam.com", "absolutewatches.com.au", "advancemotors.com.au", "alconchirurgia.pl",
    "amplex.com.au", "bohemiocollection.com.au", "compareit4me.com", "farmerslifeonline.com",
    "floraandfauna.com.au", "heypennyfabrics.com.au", "homeaway.com.ph",
    "jetblackespresso.com.au", "lifemapco.com", "lovemyearth.net", "mycommunitystarter.co.uk",
    "noosacivicshopping.com.au", "oilsforlifeaustralia.com.au", "planetparts.com.au",
    "purina.lt", "redsimaging.com.au", "roundup.fr", "sassykat.com.au", "spendwellhealth.com",
    "sublimation.com.au", "woodgrove.com.au", "zurich.ae", "zurich.es", "zurich.jp",
    "zurichlife.co.jp",
)


def make_certificate(sans=(), common_name="fixture.test", ip_sans=(), key=None):
    """Self-signed leaf; returns ``(cert_pem, key_pem, der)``.

    ``sans=None`` omits the SAN extension entirely.
    """
    key = key or ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    now = datetime.datetime(2015, 1, 1, tzinfo=datetime.timezone.utc)
    builder = (x509.CertificateBuilder()
               .subject_name(name).issuer_name(name).public_key(key.public_key())
               .serial_number(x509.random_serial_number())
               .not_valid_before(now).not_valid_after(now + datetime.timedelta(days=3650 * 3)))
    if sans is not None:
        names = [x509.DNSName(s) for s in sans]
        names += [x509.IPAddress(ipaddress.ip_address(ip)) for ip in ip_sans]
        builder = builder.add_extension(x509.SubjectAlternativeName(names), critical=False)
    cert = builder.sign(key, hashes.SHA256())
    key_pem = key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                                serialization.NoEncryption())
    return (cert.public_bytes(serialization.Encoding.PEM), key_pem,
            cert.public_bytes(serialization.Encoding.DER))


class TLSFixtureServer:
    """Accept connections on loopback, complete a handshake, close. Use as a context manager."""

    def __init__(self, cert_pem: bytes, key_pem: bytes, host="127.0.0.1"):
        self._dir = tempfile.TemporaryDirectory(prefix="certscan-")
        cert_path = Path(self._dir.name) / "cert.pem"
        key_path = Path(self._dir.name) / "key.pem"
        cert_path.write_bytes(cert_pem)
        key_path.write_bytes(key_pem)
        self._ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        self._ctx.load_cert_chain(cert_path, key_path)
        self._sock = socket.create_server((host, 0))
        self._sock.settimeout(0.2)
        self.host, self.port = self._sock.getsockname()[:2]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, name="tls-fixture", daemon=True)

    @property
    def endpoint(self) -> Endpoint:
        return Endpoint(self.host, self.port)

    def _serve(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except (socket.timeout, OSError):
                continue
            threading.Thread(target=self._handshake, args=(conn,), daemon=True).start()

    def _handshake(self, conn):
        conn.settimeout(5.0)
        try:
            with self._ctx.wrap_socket(conn, server_side=True) as tls:
                tls.recv(1)   # wait for the client to hang up
        except (ssl.SSLError, OSError):
            pass
        finally:
            conn.close()

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=2)
        self._sock.close()
        self._dir.cleanup()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def closed_port(host="127.0.0.1") -> Endpoint:
    """An endpoint nothing listens on (port bound then released)."""
    with socket.create_server((host, 0)) as s:
        port = s.getsockname()[1]
    return Endpoint(host, port)
