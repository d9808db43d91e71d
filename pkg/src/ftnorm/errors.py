"""Exception types shared across the package.

The CLI maps these onto process exit codes: bad input data exits with 2,
numerical/solver failures exit with 3.
"""


class InputError(ValueError):
    """Malformed or inconsistent input (wrong shape, non-finite entries, ...).

    ``code`` is a short machine-readable tag (``E_DIM``, ``E_INDEX``, ...)
    used by the CLI; library callers can usually ignore it.
    """

    def __init__(self, message: str, code: str = "E_INPUT"):
        super().__init__(message)
        self.code = code


class SolverError(RuntimeError):
    """A numerical routine failed to produce a certified result.

    Carries an optional ``trace`` with partial convergence data so the
    failing run can be inspected or replayed.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class CertificateError(ValueError):
    """A certificate failed independent re-verification."""
