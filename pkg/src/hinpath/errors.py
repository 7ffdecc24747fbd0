"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class HinPathError(Exception):
    exit_code = 1


class ConfigError(HinPathError):
    exit_code = 2


class DataError(HinPathError):
    exit_code = 3


class NumericError(HinPathError):
    exit_code = 4


# graph store
class GraphError(DataError):
    pass


class UnknownNode(GraphError):
    pass


class DuplicateNode(GraphError):
    pass


class EmptyGraph(GraphError):
    pass


class InvalidNode(GraphError):
    pass


class SelfLoop(GraphError):
    pass


# path engine
class TypeMismatch(GraphError):
    pass


class ZeroDegree(GraphError):
    pass


# data io
class ParseError(DataError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class TypeViolation(DataError):
    pass


class MissingFile(DataError):
    pass


class SchemaInvalid(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass


class EmptyAfterFilter(DataError):
    pass


# numerics / model / training
class DimMismatch(NumericError, ValueError):
    pass


class NonFiniteFunction(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class StaleTrace(NumericError):
    pass


class IndexOutOfBounds(NumericError, IndexError):
    pass
