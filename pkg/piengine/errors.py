"""
Exception hierarchy for the product-interaction engine

Every concrete error also derives from the matching built-in exception so
callers that only know ``ValueError`` / ``IndexError`` / ``RuntimeError`` keep
working.
"""

from typing import Optional, Tuple


class EngineError(Exception):
    """Base class for all engine errors"""


class InvalidDimensionError(EngineError, ValueError):
    """Raised when an algebra or space is requested with a non-positive size"""


class IndexOutOfRangeError(EngineError, IndexError):
    """Raised when a structure-constant or probe index leaves its range"""


class AxiomViolationError(EngineError, ValueError):
    """Raised when a declared axiom flag does not hold on the structure constants"""

    def __init__(self, axiom: str, witness: Tuple[int, ...], message: str = ""):
        self.axiom = axiom
        self.witness = tuple(witness)
        super().__init__(
            message or f"Axiom '{axiom}' violated at basis indices {self.witness}"
        )


class FieldMismatchError(EngineError, ValueError):
    """Raised when real and complex algebras or values are mixed"""


class AlgebraMismatchError(EngineError, ValueError):
    """Raised when elements of different algebras are combined"""


class BudgetExceededError(EngineError, ValueError):
    """Raised when a tensor space would exceed the coefficient budget"""


class SpaceMismatchError(EngineError, ValueError):
    """Raised when elements of different product spaces (or positions) meet"""


class ShapeMismatchError(EngineError, ValueError):
    """Raised when raw data does not fit an embedding or parameter shape"""


class FactorRoleError(EngineError, ValueError):
    """Raised when a structural operator targets a factor with the wrong role"""


class ChainTypeError(EngineError, ValueError):
    """Raised when composed structural operators disagree on factor dims"""


class UnboundSlotError(EngineError, ValueError):
    """Raised when an expression is evaluated without binding one of its slots"""


class UnknownSlotError(EngineError, KeyError):
    """Raised when an order query names a slot the expression does not contain"""


class UnknownOccurrenceError(EngineError, KeyError):
    """Raised when replace_slot is asked for a non-existent occurrence"""


class MissingBlockError(EngineError, ValueError):
    """Raised when a builder misses a required parameter block"""


class TruncationError(EngineError, ValueError):
    """Raised under the strict policy when a product leaves the truncated basis"""


class PointSetMismatchError(EngineError, ValueError):
    """Raised when a rotated point set does not coincide with the original"""


class LiftInapplicableError(EngineError, ValueError):
    """Raised when a group element has no lift on the given space"""


class UnsupportedOpError(EngineError, TypeError):
    """Raised when a tracked array meets an operation the tape cannot record"""


class NonFiniteStateError(EngineError, RuntimeError):
    """Raised when a dynamical system produces NaN or inf"""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"Non-finite state at step {step}")


class DivergenceError(EngineError, RuntimeError):
    """Raised when a training loss becomes non-finite"""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"Training diverged at step {step}")


class ConfigError(EngineError, ValueError):
    """Raised for malformed run configuration"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(f"{prefix}{message}")
