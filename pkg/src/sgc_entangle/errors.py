"""Exception types shared across the package.

Every class maps onto one CLI exit code: input problems are 1, numerical
failures are 2.
"""


class SGCError(Exception):
    exit_code = 2


class ParameterError(SGCError, ValueError):
    """A physical or numerical parameter is outside its domain."""

    exit_code = 1

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegeneracyError(SGCError):
    """The two eigen-rates coincide, so the steady-state expansion breaks down."""


class DegenerateStateError(SGCError):
    """A wavefunction with zero norm cannot be normalized."""


class GridError(SGCError, ValueError):
    exit_code = 1


class ConfigError(SGCError, ValueError):
    """Malformed command-line or config-file input; carries the offending line when known."""

    exit_code = 1

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class ConvergenceError(SGCError):
    pass


class BackendMismatchError(SGCError):
    def __init__(self, k_dense: float, k_kernel: float, tol: float):
        self.k_dense = k_dense
        self.k_kernel = k_kernel
        super().__init__(
            f"Schmidt backends disagree: K_dense={k_dense:.6g}, K_kernel={k_kernel:.6g} (tol {tol:g})"
        )
