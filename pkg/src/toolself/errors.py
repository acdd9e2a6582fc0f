"""Exception hierarchy shared across the runtime."""


class ToolSelfError(Exception):
    """Base class for every error raised by this package."""


# -- configuration -----------------------------------------------------------


class ToolboxError(ToolSelfError):
    pass


class UnknownTool(ToolboxError):
    def __init__(self, name):
        super().__init__(f"unknown tool: {name!r}")
        self.name = name


class ReservedTool(ToolboxError):
    def __init__(self, name):
        super().__init__(f"management tool {name!r} cannot be placed in a toolbox")
        self.name = name


class TooFewTools(ToolboxError):
    def __init__(self, count, minimum):
        super().__init__(f"toolbox has {count} task tools, at least {minimum} required")
        self.count = count
        self.minimum = minimum


class InvalidConfiguration(ToolSelfError):
    pass


# -- prompts -----------------------------------------------------------------


class MissingSchema(ToolSelfError):
    def __init__(self, name):
        super().__init__(f"no schema for tool {name!r}")
        self.name = name


# -- codec -------------------------------------------------------------------


class CodecError(ToolSelfError):
    pass


class NoToolCall(CodecError):
    pass


class MultipleToolCalls(CodecError):
    pass


class MalformedPayload(CodecError):
    pass


class CallValidationError(ToolSelfError):
    def __init__(self, message, prop=None):
        super().__init__(message)
        self.prop = prop


class MissingRequired(CallValidationError):
    def __init__(self, prop):
        super().__init__(f"missing required property {prop!r}", prop)


class TypeMismatch(CallValidationError):
    def __init__(self, prop, expected, value):
        super().__init__(
            f"property {prop!r} expected {expected}, got {type(value).__name__}", prop
        )
        self.expected = expected


class EnumViolation(CallValidationError):
    def __init__(self, prop, value, allowed=()):
        super().__init__(f"property {prop!r} value {value!r} not in {list(allowed)}", prop)
        self.value = value
        self.allowed = tuple(allowed)


class UnknownProperty(CallValidationError):
    def __init__(self, prop):
        super().__init__(f"unknown property {prop!r}", prop)


# -- tools -------------------------------------------------------------------


class ToolError(ToolSelfError):
    pass


class ToolNotRegistered(ToolError):
    def __init__(self, name):
        super().__init__(f"tool {name!r} is not registered")
        self.name = name


class ToolTimeout(ToolError):
    def __init__(self, name, seconds):
        super().__init__(f"tool {name!r} timed out after {seconds:g} s")
        self.name = name
        self.seconds = seconds


class ToolFailure(ToolError):
    pass


# -- backends ----------------------------------------------------------------


class BackendError(ToolSelfError):
    pass


class BackendUnavailable(BackendError):
    pass


class ContextOverflow(BackendError):
    def __init__(self, prompt_tokens, limit):
        super().__init__(f"prompt has {prompt_tokens} tokens, limit is {limit}")
        self.prompt_tokens = prompt_tokens
        self.limit = limit


class RateLimited(BackendError):
    def __init__(self, retry_after=None):
        super().__init__(f"rate limited (retry after {retry_after})")
        self.retry_after = retry_after


class ScriptAssertionError(AssertionError):
    """A scripted completion's prompt expectation did not hold.

    Deliberately not a ToolSelfError: prompt drift must fail the test run
    instead of being absorbed into a recorded failure outcome.
    """


# -- engine ------------------------------------------------------------------


class NoStructuredBlock(ToolSelfError):
    pass


class EngineOutputInvalid(ToolSelfError):
    def __init__(self, reason):
        super().__init__(f"reconfiguration engine output invalid: {reason}")
        self.reason = reason


# -- ledger ------------------------------------------------------------------


class MissingLogprobs(ToolSelfError):
    pass


class UnlabeledTrajectory(ToolSelfError):
    pass


class SchemaVersionMismatch(ToolSelfError):
    pass


class CorruptRecord(ToolSelfError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class UnknownScenario(ToolSelfError):
    def __init__(self, name):
        super().__init__(f"unknown scenario: {name!r}")
        self.name = name
