## Exception hierarchy shared by all modules
# Domain errors also subclass the built-in a caller would naturally catch
# (ValueError, KeyError, RuntimeError), so `except ValueError` keeps working.

class SwCOPFError(Exception):
    """Base class of every error raised by swcopf."""


###### Data / input errors ######

class CaseFormatError(SwCOPFError, ValueError):
    """A case document does not follow the case schema. `path` names the offending field."""
    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)

class InvariantViolation(CaseFormatError):
    """A parsed case breaks a network invariant (e.g. two slack buses, V_min > V_max)."""

class DisconnectedNetwork(CaseFormatError):
    """Some bus is unreachable from the slack bus."""

class NoSuchLine(SwCOPFError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else 'no such line'

class DimensionMismatch(SwCOPFError, ValueError):
    pass

class UsageError(SwCOPFError, ValueError):
    """Bad command-line or params usage."""

class SeedReuseError(UsageError):
    """The validation seed equals the seed used to draw the training scenarios."""


###### Power flow ######

class PowerFlowError(SwCOPFError, RuntimeError):
    pass

class PowerFlowDivergence(PowerFlowError):
    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)

class SingularJacobian(PowerFlowError):
    pass


###### Optimization ######

class InfeasibleError(SwCOPFError):
    """Domain infeasibility. `hint` names the constraint family that blocked the problem."""
    def __init__(self, message, hint=None):
        self.hint = hint
        super().__init__(message)

class InfeasibleDemand(InfeasibleError, ValueError):
    pass

class InfeasibleOPF(InfeasibleError):
    pass

class InfeasibleSwC(InfeasibleError):
    pass

class NumericalFailure(SwCOPFError, RuntimeError):
    """KKT factorization breakdown or an iteration cap reached without a certificate."""

class RankCheckFailed(SwCOPFError, ValueError):
    pass
