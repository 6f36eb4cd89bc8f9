from __future__ import annotations


class DepmeterError(RuntimeError):
    code = "DEPMETER_ERROR"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        text = " ".join(str(self.message).split())
        return f"{self.code}: {text}"


class EmptyDistribution(DepmeterError):
    code = "EMPTY_DISTRIBUTION"


class SizeCapExceeded(DepmeterError):
    code = "SIZE_CAP_EXCEEDED"

    def __init__(self, total: int, cap: int) -> None:
        super().__init__(f"LP has {total} points, cap is {cap}")
        self.total = total
        self.cap = cap


class SolverNonConvergence(DepmeterError):
    code = "SOLVER_NON_CONVERGENCE"


class DimensionMismatch(DepmeterError):
    code = "DIMENSION_MISMATCH"


class InvalidPairing(DepmeterError):
    code = "INVALID_PAIRING"


class InvalidKernel(DepmeterError):
    code = "INVALID_KERNEL"


class ColumnOutOfRange(DepmeterError):
    code = "COLUMN_OUT_OF_RANGE"

    def __init__(self, column, width: int) -> None:
        super().__init__(f"column {column!r} not in dataset with {width} columns")
        self.column = column
        self.width = width


class NoComparableCells(DepmeterError):
    code = "NO_COMPARABLE_CELLS"


class InsufficientSamples(DepmeterError):
    code = "INSUFFICIENT_SAMPLES"

    def __init__(self, have: int, need: int, what: str = "rows") -> None:
        super().__init__(f"need at least {need} {what}, have {have}")
        self.have = have
        self.need = need


class EmptyStratum(DepmeterError):
    code = "EMPTY_STRATUM"


class SingularConditioningBlock(DepmeterError):
    code = "SINGULAR_CONDITIONING_BLOCK"


class SingularBlock(DepmeterError):
    code = "SINGULAR_BLOCK"


class CyclicSupport(DepmeterError):
    code = "CYCLIC_SUPPORT"


class CyclicGraph(DepmeterError):
    code = "CYCLIC_GRAPH"


class SupportTooLarge(DepmeterError):
    code = "SUPPORT_TOO_LARGE"

    def __init__(self, size: int, cap: int) -> None:
        super().__init__(f"joint support has {size} atoms, cap is {cap}")
        self.size = size
        self.cap = cap


class ValueNotInSupport(DepmeterError):
    code = "VALUE_NOT_IN_SUPPORT"


class NonDisjointSets(DepmeterError):
    code = "NON_DISJOINT_SETS"


class NotNormalized(DepmeterError):
    code = "NOT_NORMALIZED"


class MissingInterventionData(DepmeterError):
    code = "MISSING_INTERVENTION_DATA"


class NodeNotParent(DepmeterError):
    code = "NODE_NOT_PARENT"


class EmptyGrid(DepmeterError):
    code = "EMPTY_GRID"


class ZeroScale(DepmeterError):
    code = "ZERO_SCALE"


class UnknownModel(DepmeterError):
    code = "UNKNOWN_MODEL"


class BadParams(DepmeterError):
    code = "BAD_PARAMS"


class BadCsv(DepmeterError):
    code = "BAD_CSV"


class BadModelJson(DepmeterError):
    code = "BAD_MODEL_JSON"


class BadConfig(DepmeterError):
    code = "BAD_CONFIG"
