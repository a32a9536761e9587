"""Exception hierarchy shared across the node."""


class FlowError(Exception):
    """Base class for every error raised by flowfaas."""


# --- composition language -------------------------------------------------

class DslError(FlowError):
    """Any failure while turning composition source into IR."""

    kind = "dsl"


class DslSyntaxError(DslError):
    kind = "syntax"

    def __init__(self, message, line, column, expected=None):
        self.line = line
        self.column = column
        self.expected = expected
        super().__init__(f"{line}:{column}: {message}")


class CompileError(DslError):
    kind = "compile"


class UnknownFunctionError(CompileError):
    kind = "unknown-function"


class UnknownSetError(CompileError):
    kind = "unknown-set"


class DuplicateLocalError(CompileError):
    kind = "duplicate-local"


class CycleError(CompileError):
    kind = "cycle"

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class ProducerCountError(CompileError):
    """A consumed set has zero or several producers."""

    kind = "producer-count"


# --- data model -----------------------------------------------------------

class AbiError(FlowError):
    """Malformed wire-format blob."""


class ContextError(FlowError):
    pass


class ContextOverflowError(ContextError):
    def __init__(self, required, available):
        self.required = required
        self.available = available
        super().__init__(
            f"context overflow: {required} bytes required, {available} available")


class ContextStateError(ContextError):
    """Use of a context in a state that forbids the operation."""


class AdmissionError(ContextError):
    """Creating the context would exceed the node memory limit."""


class RegistryError(FlowError):
    pass


class UnknownNameError(RegistryError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class KindMismatchError(RegistryError):
    pass


# --- invocation -----------------------------------------------------------

class InvocationError(FlowError):
    """An invocation finished without producing its sink sets."""

    def __init__(self, report):
        self.report = report
        super().__init__(report.get("reason", "invocation failed"))


class MissingInputError(FlowError):
    def __init__(self, set_name):
        self.set_name = set_name
        super().__init__(f"missing required input set {set_name!r}")


class ValidationError(FlowError):
    """An HTTP request item was rejected by the communication engine."""

    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)
