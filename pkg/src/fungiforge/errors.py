"""Exception hierarchy shared across the toolkit.

Two branches matter to the CLI: ValidationFailure maps to exit code 1,
IOBackendFailure to exit code 2.
"""


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class ValidationFailure(ForgeError):
    """Bad inputs, broken invariants, malformed configuration."""


class IOBackendFailure(ForgeError):
    """Filesystem, decoding, network or external-backend trouble."""


class DecodeError(IOBackendFailure):
    """Image stream is corrupt, truncated, or in an unsupported format."""


class RectOutOfBounds(ValidationFailure):
    """Requested region is not fully inside the image plane."""


class PlanMismatch(ValidationFailure):
    """Grid plan was computed for different image dimensions."""


class MissingPatchFile(IOBackendFailure):
    """A manifest row references a patch file that does not exist."""


class InsufficientLabels(ValidationFailure):
    """Threshold calibration needs at least two labels of each kind."""


class UnlabeledSource(ValidationFailure):
    """A patch's source image has no class label."""


class DuplicatePatchId(ValidationFailure):
    """Two manifest rows share a patch id."""


class EmptyClass(ValidationFailure):
    """A class has too few eligible rows for the requested split."""


class ClassSmallerThanK(ValidationFailure):
    """A class has fewer eligible rows than the fold count."""


class ShapeMismatch(ValidationFailure):
    """Array shapes disagree with the model or optimizer state."""


class DataUnavailable(IOBackendFailure):
    """Training or evaluation data could not be loaded."""


class BackendFailed(IOBackendFailure):
    """External backend command failed to run or produce results."""


class MalformedResults(IOBackendFailure):
    """External backend results file violates the expected schema."""


class EmptyResults(ValidationFailure):
    """Fold statistics need at least one fold result."""


class PortUnavailable(IOBackendFailure):
    """Review service could not bind the requested port."""


class MissingPatchDir(IOBackendFailure):
    """Review service patch directory does not exist."""
