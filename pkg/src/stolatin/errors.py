"""Exception types raised across the package."""


class InvalidGeometryError(ValueError):
    pass


class EmptySystemError(ValueError):
    pass


class IllPosedInputError(ValueError):
    pass


class DegenerateTripletError(ArithmeticError):
    pass


class LinearlyDependentDirectionError(ArithmeticError):
    pass


class InfeasibleSpecError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Too many samples failed to converge in a Newton loop."""


class IntegrityError(IOError):
    pass


class ConfigError(ValueError):
    pass
