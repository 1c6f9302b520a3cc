"""Exception hierarchy shared by the solvers, the I/O layer and the CLI."""


class MRVRError(Exception):
    """Base class for all package errors."""


class NumericalError(MRVRError):
    """A factorization or update broke down numerically.

    ``pivot`` is the zero-based index of the failing Cholesky pivot when the
    failure came from a positive-definite factorization, else ``None``.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class FitError(MRVRError):
    """The EM loop could not produce a model (e.g. no informative basis)."""


class DataError(MRVRError):
    """Malformed or invalid input data."""


class ModelFormatError(MRVRError):
    """A model file is corrupt, truncated or of an unsupported version."""
