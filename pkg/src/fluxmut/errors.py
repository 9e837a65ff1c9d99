"""Exception hierarchy shared by all fluxmut modules."""


class FluxMutError(Exception):
    """Base class; the CLI maps every subclass to exit status 2."""


class NumericInputError(FluxMutError, ValueError):
    pass


class NumericOverflowError(FluxMutError, ArithmeticError):
    pass


class DimensionError(FluxMutError, ValueError):
    pass


class StaleTapeError(FluxMutError, RuntimeError):
    pass


class DegenerateColumnError(FluxMutError, ValueError):
    pass


class DataSizeError(FluxMutError, ValueError):
    pass


class ConfigurationError(FluxMutError, ValueError):
    pass


class ModelFormatError(FluxMutError, ValueError):
    pass
