"""Exception hierarchy shared by every module."""


class CanEvoError(Exception):
    """Base class for all toolkit errors."""


class MalformedInput(CanEvoError):
    """An input file or record could not be interpreted."""


class DuplicatePriority(MalformedInput):
    pass


class NonPositiveParameter(MalformedInput):
    pass


class UnknownMessage(CanEvoError, KeyError):
    pass


class ArithmeticOverflow(CanEvoError, OverflowError):
    """An intermediate value left the signed 64-bit range."""


class InfeasibleParams(CanEvoError):
    pass


class InvalidConfig(CanEvoError, ValueError):
    pass


class FormulaSyntaxError(MalformedInput):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


class UnknownAtom(FormulaSyntaxError):
    pass


class MissingIsum(FormulaSyntaxError):
    pass


class MappingIncomplete(CanEvoError):
    """Genotype ran out of codons (after wrapping) before the derivation finished."""


class HorizonTooLarge(CanEvoError, ValueError):
    pass


class InvalidChromosome(CanEvoError, ValueError):
    pass


class OracleFailure(CanEvoError):
    pass
