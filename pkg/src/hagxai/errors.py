"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, ``DataError``
exits 2, scorer/remote problems exit 3.
"""


class HagxaiError(Exception):
    """Base class for all package-specific errors."""


class DataError(HagxaiError):
    """Malformed or inconsistent input data (files, archives, labels)."""


class UndefinedResultError(HagxaiError):
    """A metric is mathematically undefined for the given inputs.

    Carries a ``flag`` string naming the degenerate condition so callers
    that substitute a fallback value can record what happened.
    """

    def __init__(self, message, flag="undefined"):
        super().__init__(message)
        self.flag = flag


class ScorerError(HagxaiError):
    """Base class for remote-scorer failures."""


class ScorerTimeoutError(ScorerError):
    """Scorer did not answer in time; safe to retry (scoring is idempotent)."""


class ScorerRequestError(ScorerError):
    """Scorer rejected the request (4xx); retrying will not help.

    ``status`` holds the HTTP status code, ``server_message`` the decoded
    error body when one was provided.
    """

    def __init__(self, message, status=None, server_message=None):
        super().__init__(message)
        self.status = status
        self.server_message = server_message
