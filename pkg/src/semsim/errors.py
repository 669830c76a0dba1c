"""Exception types shared across the simulator."""

from __future__ import annotations

import enum


class IntegrityKind(str, enum.Enum):
    MAC_MISMATCH = "MacMismatch"
    TREE_MISMATCH = "TreeMismatch"


class HaltReason(str, enum.Enum):
    ILLEGAL_ENTRY = "IllegalEntry"
    SECURE_ACCESS_VIOLATION = "SecureAccessViolation"
    MISSING_TSC = "MissingTsc"
    BAD_ATTACH = "BadAttach"
    INTEGRITY_ERROR = "IntegrityError"
    MIGRATION_TAMPER = "MigrationTamper"


class SemsimError(Exception):
    pass


class IntegrityError(SemsimError):
    def __init__(self, kind: IntegrityKind, detail: str = ""):
        self.kind = IntegrityKind(kind)
        self.detail = detail
        super().__init__(f"{self.kind.value}: {detail}" if detail else self.kind.value)


class Halt(SemsimError):
    """Raised when the SMU stops a secure thread. Nothing runs on it afterwards."""

    def __init__(self, reason: HaltReason, detail: str = ""):
        self.reason = HaltReason(reason)
        self.detail = detail
        super().__init__(f"{self.reason.value}: {detail}" if detail else self.reason.value)


class TableFull(SemsimError):
    pass


class SealedStorageFull(SemsimError):
    pass


class SmuError(SemsimError):
    """Non-halting SMU instruction error (bad arguments, unknown process hash)."""


class ParseError(SemsimError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigError(SemsimError):
    pass


class TamperDetected(SemsimError):
    """A protocol-level check (message tag, sequence number, missing ack) failed."""
