"""Exception hierarchy. Every error raised on bad input derives from :class:`InextensaError`."""


class InextensaError(Exception):
    """Base class."""


class InputError(InextensaError, ValueError):
    """Malformed or inadmissible input (CLI exit code 2)."""


class NumericalError(InextensaError, ArithmeticError):
    """A numerical precondition failed during evaluation (CLI exit code 1)."""


class SingularMetric(NumericalError):
    pass


class SingularMap(NumericalError):
    pass


class NotSPD(NumericalError):
    pass


class DomainError(InputError):
    pass


class NotUnit(InputError):
    pass


class InvalidParams(InputError):
    pass


class DomainConflict(InputError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class ZeroDenominator(NumericalError):
    pass


class BlowUp(NumericalError):
    pass


class InconsistentInitialData(InputError):
    pass


class NotFlat(NumericalError):
    pass


class NotOrthogonal(InputError):
    pass


class NotSkew(InputError):
    pass
