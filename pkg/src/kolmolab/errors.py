"""Exception hierarchy shared by all modules."""


class KolmoError(Exception):
    """Base class for every error raised by the package."""


class InputError(KolmoError):
    """Bad user input: scenario text, overrides, output directories."""


class ScenarioError(InputError):
    """A scenario file or mapping could not be parsed.

    Attributes
    ----------
    key : str or None
        Offending key, when known.
    line : int or None
        1-based line number in the source text, when known.
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        text = f"{message} ({', '.join(where)})" if where else message
        super().__init__(text)
        self.key = key
        self.line = line


class ValidationError(InputError):
    """Scenario data violate a modelling assumption."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"[{v.tag}] {v.message}" for v in self.violations]
        super().__init__("scenario violates assumptions:\n  " + "\n  ".join(lines))


class CheckpointError(KolmoError):
    """Unreadable or mismatched checkpoint file."""


class DegenerateStateError(KolmoError):
    """A coefficient formula was evaluated where it is undefined."""

    def __init__(self, message: str, cell=None):
        super().__init__(message if cell is None else f"{message} at cell {cell}")
        self.cell = cell


class SolverError(KolmoError):
    """A linear or nonlinear solve failed."""


class WallSolveError(SolverError):
    """The wall-law solve did not converge."""


class PoissonError(SolverError):
    """Neumann-Poisson problem is incompatible or was not solved accurately."""


class CFLError(KolmoError):
    """Explicit advection stability guard exceeded."""


class ScalingError(KolmoError):
    """A scaling transform cannot be applied to the given object."""


class UnsupportedLawError(KolmoError):
    """A custom slip law lacks the hook an operation needs."""
