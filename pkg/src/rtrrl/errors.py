"""Exception types raised across the package."""


class RtrrlError(Exception):
    """Base class for all package errors."""


class ConfigError(RtrrlError, ValueError):
    """Inconsistent or malformed configuration (dimensions, flags, files)."""


class NumericFault(RtrrlError, FloatingPointError):
    """A non-finite value appeared in state, traces or parameters."""

    def __init__(self, message, step=None, block=None):
        self.step = step
        self.block = block
        where = []
        if step is not None:
            where.append(f"step {step}")
        if block is not None:
            where.append(f"block {block!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ProtocolError(RtrrlError, RuntimeError):
    """Environment used out of order (step before reset, step after terminal)."""


class SnapshotError(RtrrlError, IOError):
    """Snapshot file is unreadable, truncated or corrupted."""
