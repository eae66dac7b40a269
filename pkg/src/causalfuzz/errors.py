"""Exception hierarchy shared by all modules."""


class CausalFuzzError(Exception):
    """Base class for every error raised by this package."""


class ModelValidationError(CausalFuzzError):
    pass


class UnknownSensorError(CausalFuzzError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownComponentError(CausalFuzzError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class CapabilityDomainError(CausalFuzzError, ValueError):
    pass


class UnboundVariableError(CausalFuzzError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConditionSyntaxError(CausalFuzzError, ValueError):
    """Parse error carrying a 1-based line/column position."""

    def __init__(self, message, text="", offset=0, line=1, column=None):
        self.message = message
        self.text = text
        self.offset = offset
        self.line = line
        self.column = column if column is not None else offset + 1
        super().__init__(f"line {self.line}, column {self.column}: {message}")


class StrategyFormatError(CausalFuzzError, ValueError):
    pass


class EmptySetError(CausalFuzzError, ValueError):
    pass


class SizeCapExceeded(CausalFuzzError):
    pass


class BudgetExceeded(CausalFuzzError):
    pass


class NotDeduplicatedError(CausalFuzzError, ValueError):
    pass


class NotReproducibleError(CausalFuzzError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UnsatisfiableInBudget(CausalFuzzError):
    pass


class NoWalksGenerated(CausalFuzzError):
    pass
