"""Certificate footprint measurement over an explicit endpoint list."""

from .scan import (
    CertRecord,
    Endpoint,
    FootprintReport,
    ScanFailure,
    covers,
    extract_sans,
    fingerprint,
    footprint_report,
    grab_cert,
    load_endpoints,
    parse_endpoint,
    san_entries,
)

__all__ = [
    "CertRecord", "Endpoint", "FootprintReport", "ScanFailure", "covers", "extract_sans",
    "fingerprint", "footprint_report", "grab_cert", "load_endpoints", "parse_endpoint",
    "san_entries",
]
