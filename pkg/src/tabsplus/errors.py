"""Exception taxonomy shared across the toolchain.

Every error raised on a contract boundary carries a stable ``code`` string so
the CLI and the HTTP service can report it without string-matching messages.
"""

from __future__ import annotations


class TabsError(Exception):
    """Base class; ``code`` is stable, ``detail`` is free-form context."""

    code = "Error"

    def __init__(self, message: str, detail: object = None):
        super().__init__(message)
        self.detail = detail

    def to_dict(self) -> dict:
        d = {"code": self.code, "message": str(self)}
        if self.detail is not None:
            d["detail"] = self.detail
        return d


# model layer

class XmlSyntax(TabsError):
    code = "XmlSyntax"


class UnsupportedElement(TabsError):
    code = "UnsupportedElement"


class DanglingFlowRef(TabsError):
    code = "DanglingFlowRef"


class DuplicateId(TabsError):
    code = "DuplicateId"


class NotNormalizable(TabsError):
    code = "NotNormalizable"


class GuardSyntax(TabsError):
    code = "GuardSyntax"


class GuardEval(TabsError):
    code = "GuardEval"


# graph layer

class CycleDetected(TabsError):
    code = "CycleDetected"


class Disconnected(TabsError):
    code = "Disconnected"


# region / plan layer

class ContainmentViolation(TabsError):
    code = "ContainmentViolation"


class UnguardedExclusiveFork(TabsError):
    code = "UnguardedExclusiveFork"


class PlanRegionUnknown(TabsError):
    code = "PlanRegionUnknown"


class OverlapNotNested(TabsError):
    code = "OverlapNotNested"


class UnsupportedMechanism(TabsError):
    code = "UnsupportedMechanism"


# package layer

class IsolationViolation(TabsError):
    code = "IsolationViolation"


class SchemaVersionMismatch(TabsError):
    code = "SchemaVersionMismatch"


class CorruptPackage(TabsError):
    code = "CorruptPackage"


# ledger layer

class MethodUnknown(TabsError):
    code = "MethodUnknown"


class OutOfBlockSpace(TabsError):
    code = "OutOfBlockSpace"


class Reverted(TabsError):
    code = "Reverted"


class EmptyBlock(TabsError):
    code = "EmptyBlock"


class NoSidechain(TabsError):
    code = "NoSidechain"


class ChainIntegrity(TabsError):
    """Persisted chain fails hash-chain verification on load."""

    code = "ChainIntegrity"


# runtime layer

class UnknownOrigin(TabsError):
    code = "UnknownOrigin"


class UnknownActor(TabsError):
    code = "UnknownActor"


class NonConformant(TabsError):
    """Input not enabled by any machine; ``detail`` lists expected origins."""

    code = "NonConformant"

    def __init__(self, message: str, expected: list[str]):
        super().__init__(message, detail={"expected": sorted(expected)})
        self.expected = sorted(expected)


class WrongState(TabsError):
    code = "WrongState"


class AccessDenied(TabsError):
    code = "AccessDenied"


class CryptoIntegrity(TabsError):
    code = "CryptoIntegrity"


class VoteTimeout(TabsError):
    code = "VoteTimeout"


# off-chain store

class NotFound(TabsError):
    code = "NotFound"


class IntegrityMismatch(TabsError):
    code = "IntegrityMismatch"


# cost layer

class Uncalibratable(TabsError):
    code = "Uncalibratable"
