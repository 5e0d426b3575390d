"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, TransportError -> 3,
everything else derived from PromosimError -> 4.
"""


class PromosimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PromosimError):
    """Invalid configuration value or inconsistent run parameters."""


class UsageError(PromosimError):
    """An API called with arguments that violate its contract."""


class DataError(PromosimError):
    """Corpus files that fail to parse or violate integrity constraints."""


class TransportError(PromosimError):
    """LLM transport failure (network, protocol, exhausted retries)."""


class ReplayMissError(TransportError):
    """Replay transport has no fixture for the requested exchange."""


class ProtocolError(TransportError):
    """Remote endpoint returned a malformed or inconsistent payload."""


class TrainingError(PromosimError):
    """Adaptor training diverged or produced non-finite values."""


class OptimizationError(PromosimError):
    """Vector optimization produced non-finite values."""


class AttackError(PromosimError):
    """Attack pipeline failure; carries any partial transcript."""

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = list(transcript) if transcript else []


class ProbeError(PromosimError):
    """Detection probe failure (unprobeable text or LLM failure)."""
