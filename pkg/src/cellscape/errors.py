"""Exception hierarchy shared by all cellscape modules."""


class CellscapeError(Exception):
    """Base class for all errors raised by this package."""


class GenotypeError(CellscapeError):
    """A genotype violates a structural invariant."""


class InvalidArity(GenotypeError):
    """An intermediate node does not have exactly M (op, source) pairs."""


class ForwardReference(GenotypeError):
    """A node sources a node that does not precede it."""


class EmptyConcat(GenotypeError):
    """The output node aggregates no intermediate nodes."""


class UnknownOperationKind(GenotypeError):
    """An operation kind is not in the desk-scale registry."""


class InvalidSearchSpace(CellscapeError):
    """(N, M) does not describe a valid cell search space."""


class TooLarge(CellscapeError):
    """An enumeration would exceed the configured size cap."""


class DimensionMismatch(CellscapeError):
    """Vector/matrix dimensions are inconsistent."""


class ShapeMismatch(CellscapeError):
    """Tensor shapes are inconsistent in the autodiff engine."""


class NoTape(CellscapeError):
    """backward() called on a value the tape did not produce."""


class NoConvergence(CellscapeError):
    """Power iteration failed to converge within the iteration budget."""

    def __init__(self, message, last_estimate=None, residual=None):
        super().__init__(message)
        self.last_estimate = last_estimate
        self.residual = residual


class DegeneratePair(CellscapeError):
    """A sampled perturbation pair was identical and could not be resampled."""


class InsufficientSamples(CellscapeError):
    """Too few Monte-Carlo samples for a variance estimate."""


class UnsupportedInputCount(CellscapeError):
    """Network building only supports cells with two input nodes."""


class InvalidSpec(CellscapeError):
    """A dataset or run specification is malformed."""


class NonFiniteLoss(CellscapeError):
    """Training loss became non-finite (divergence)."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ZeroBlock(CellscapeError):
    """A checkpoint block is identically zero and cannot set a direction norm."""


class ParseError(CellscapeError):
    """An input file failed to parse."""


class IoFailure(CellscapeError):
    """An artifact could not be written or read."""


class MissingManifest(CellscapeError):
    """A run directory contains no manifest to report on."""
