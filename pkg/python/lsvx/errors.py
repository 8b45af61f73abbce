"""Exception hierarchy for lsvx.

All library errors derive from :class:`LsvxError` so callers (and the CLI)
can catch one base type. The CLI maps each family to an exit code; see
``lsvx.__main__``.
"""

from __future__ import annotations


class LsvxError(Exception):
    """Base class for every error raised by lsvx."""


class ConfigError(LsvxError, ValueError):
    """Invalid parameter, schema violation or unusable run configuration."""


class ModelConditionError(LsvxError):
    """A standing model hypothesis or expansion precondition does not hold.

    The message always names the violated inequality so it can be shown
    verbatim to the user.
    """


class DomainError(LsvxError, ValueError):
    """Input lies outside the domain where a formula is defined."""


class ContractError(LsvxError):
    """A derivative oracle cannot honour the order or growth requested of it."""


class UnsupportedModelError(LsvxError):
    """The operation is only available for builtin model families."""


class NumericError(LsvxError):
    """A numerical routine failed to reach its tolerance.

    Attributes:
        achieved: Best error estimate reached, when one is available.
    """

    def __init__(self, message: str, achieved: float | None = None) -> None:
        if achieved is not None:
            message = f"{message} (achieved tolerance {achieved:.3g})"
        super().__init__(message)
        self.achieved = achieved
