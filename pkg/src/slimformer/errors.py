"""Exception types shared across the library.

Every error raised on a documented failure path is a distinct class so
callers (and the CLI exit-code mapping) can tell failure modes apart.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ValueError):
    """A matrix contains NaN or infinite entries."""


class RangeError(ValueError):
    """A scalar argument (fraction, rank, count) is outside its valid range."""


class InputError(ValueError):
    """Model input is invalid (out-of-vocabulary token, overlong sequence)."""


class MappingError(ValueError):
    """Teacher and student traces cannot be aligned layer by layer."""


class SvdConvergenceError(RuntimeError):
    """Jacobi sweeps hit the cap before the off-diagonal mass vanished."""

    def __init__(self, residual, sweeps):
        super().__init__(
            f"SVD did not converge after {sweeps} sweeps "
            f"(residual off-diagonal coherence {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class InfeasibleBudgetError(ValueError):
    """The requested overall budget cannot be met; carries the shortfall."""

    def __init__(self, message, slack):
        super().__init__(f"{message} (slack {slack:.6g})")
        self.slack = slack


class DivergenceError(RuntimeError):
    """Training loss became non-finite or blew up; carries a state dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class BundleFormatError(ValueError):
    """Base class for parameter-bundle file problems."""


class MalformedManifestError(BundleFormatError):
    """The bundle manifest cannot be parsed or names an unknown group."""


class ChecksumError(BundleFormatError):
    """Stored and recomputed entry checksums disagree."""


class TruncatedBlobError(BundleFormatError):
    """The binary blob is shorter than the manifest declares."""


class ExpansionWarning(UserWarning):
    """Factorization at the given rank stores more values than the dense matrix."""
