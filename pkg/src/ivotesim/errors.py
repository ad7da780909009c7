"""Exception hierarchy shared by every layer.

Each error carries a stable ``code`` so it can cross the JSON wire and be
re-raised as the same class on the other side.
"""


class IVoteError(Exception):
    code = "error"


class ValidationError(IVoteError, ValueError):
    code = "validation"


class AuthenticationError(IVoteError):
    """A GCM tag or a signature did not verify."""

    code = "authentication"


class WrongCredentials(AuthenticationError):
    code = "wrong_credentials"


class MalformedCredentialFile(IVoteError):
    code = "malformed_credential_file"


class NotFound(IVoteError):
    code = "not_found"


class CapacityError(IVoteError):
    code = "capacity"


class AlreadyVoted(IVoteError):
    code = "already_voted"


class VerificationFailed(IVoteError):
    code = "verification_failed"


class LoginFailed(IVoteError):
    code = "login_failed"


class ServerAuthError(IVoteError):
    code = "server_auth"


class CorruptPartial(IVoteError):
    code = "corrupt_partial"


class TransportError(IVoteError):
    """Retriable: the request may not have reached the server."""

    code = "transport"


class PayloadRejected(IVoteError):
    code = "payload_rejected"


class CannotSubstitute(IVoteError):
    code = "cannot_substitute"


class TooLate(IVoteError):
    code = "too_late"


class PreconditionError(IVoteError):
    code = "precondition"


class KeyspaceExhausted(NotFound):
    def __init__(self, message, tried):
        super().__init__(message)
        self.tried = tried


class BudgetExceeded(IVoteError):
    code = "budget_exceeded"

    def __init__(self, message, tried):
        super().__init__(message)
        self.tried = tried


_BY_CODE = {}


def _index(cls):
    for sub in cls.__subclasses__():
        _BY_CODE.setdefault(sub.code, sub)
        _index(sub)


_index(IVoteError)
_BY_CODE["error"] = IVoteError


def error_from_code(code, message):
    cls = _BY_CODE.get(code, IVoteError)
    if cls in (KeyspaceExhausted, BudgetExceeded):
        return cls(message, 0)
    return cls(message)
