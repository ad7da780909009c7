"""Simulator of an internet voting protocol and the attacks open to a TLS-terminating proxy."""

from importlib import resources

from .crypto import CredentialFile, Credentials, derive_login_id
from .errors import IVoteError
from .proxy import AttackConfig, DDoSProxy
from .server import ElectionConfig, IVoteServer
from .sim import RunConfig, attack, simulate

__version__ = "0.1.0"


def schema(name: str) -> dict:
    """A shipped JSON schema, e.g. ``schema("credential_file")``."""
    import json
    return json.loads(resources.files(__name__).joinpath(
        "schemas", f"{name}.schema.json").read_text())


__all__ = [
    "AttackConfig", "CredentialFile", "Credentials", "DDoSProxy", "ElectionConfig",
    "IVoteError", "IVoteServer", "RunConfig", "attack", "derive_login_id", "schema",
    "simulate",
]
