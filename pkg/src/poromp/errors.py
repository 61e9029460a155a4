"""Exception types shared across the solver."""


class PorompError(Exception):
    """Base class for all solver errors."""


class OutOfGrid(PorompError):
    """A queried point (or a particle support box) leaves the background grid."""


class PorosityViolation(PorompError):
    """The volume ratio J dropped to or below 1 - n0, i.e. the pore space closed."""


class NonInvertibleF(PorompError):
    """Deformation gradient with non-positive determinant."""


class NonConvergence(PorompError):
    """Newton loop exhausted its iteration budget."""

    def __init__(self, iterations: int, residual: float, message: str = ""):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            message or f"no convergence after {iterations} iterations "
            f"(weighted residual {residual:.3e})"
        )


class LinearSolveFailure(PorompError):
    """Sparse factorization/solve of the block system failed."""


class SingularMatrix(PorompError):
    """Matrix numerically singular (smallest eigenvalue below floor)."""


class ConfigError(PorompError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """Config file unreadable or not valid YAML."""


class ValidationError(ConfigError):
    """Config parsed but failed schema validation; collects every problem."""

    def __init__(self, problems):
        self.problems = list(problems)
        joined = "; ".join(self.problems)
        super().__init__(f"{len(self.problems)} config problem(s): {joined}")
