"""Error types raised by the pipeline. All input problems are ValueErrors so callers can fail fast on bad data."""


class GazeError(ValueError):
    pass


class SchemaError(GazeError):
    """A mapped column is missing from the input. Fatal for the whole file."""


class MalformedRowError(GazeError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrialTooShortError(GazeError):
    pass


class DegenerateSaccadeError(GazeError):
    pass


class DegenerateLabelsError(GazeError):
    pass


class InsufficientParticipantsError(GazeError):
    pass


class UnsupportedKernelError(GazeError):
    pass


class ScriptError(GazeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, passes: int):
        super().__init__(f"SMO did not converge after {passes} passes (KKT residual {residual:.3g})")
        self.residual = residual
        self.passes = passes


class MissingArtifactError(GazeError):
    """An upstream stage has not written the artifact this stage reads."""

    def __init__(self, path):
        super().__init__(f"missing artifact: {path}")
        self.path = path


class ConfigValidationError(GazeError):
    def __init__(self, fields):
        super().__init__(f"invalid config fields: {', '.join(fields)}")
        self.fields = list(fields)
