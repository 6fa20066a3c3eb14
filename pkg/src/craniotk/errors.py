"""Exception and warning types shared across the toolkit."""


class CraniotkError(Exception):
    """Base class for all toolkit errors."""


class GeometryMismatchError(CraniotkError):
    """Two grids were combined although dims/spacing/origin differ."""


class EmptyMaskError(CraniotkError):
    """An operation requires at least one set voxel."""


class FullMaskError(CraniotkError):
    """An operation requires at least one unset voxel (no boundary exists)."""


class OutOfBoundsError(CraniotkError):
    """A generated shape does not fit inside the target grid."""


class EmptyDefectError(CraniotkError):
    """The craniectomy template does not intersect the skull."""


class NoUpperSurfaceError(CraniotkError):
    """No skull-surface voxels found in the upper placement region."""


class EmptyInputError(CraniotkError):
    """Registration received an empty mask."""


class AtlasBuildError(CraniotkError):
    """Too many per-case failures while building the atlas."""


class VolumeFormatError(CraniotkError):
    """Base class for volume-file parsing errors."""


class BadMagicError(VolumeFormatError):
    """Not a supported NIfTI-1 single-file volume."""


class UnsupportedDatatypeError(VolumeFormatError):
    """Voxel datatype outside the supported subset (uint8, float32)."""


class NonOrthogonalOrientationError(VolumeFormatError):
    """Orientation is not an axis permutation with optional flips."""


class TruncatedError(VolumeFormatError):
    """File ends before the declared voxel payload."""


class UnsupportedHeaderError(VolumeFormatError):
    """Header feature outside the documented subset (never silently defaulted)."""


class SchemaViolationError(CraniotkError):
    """Manifest or report does not match its schema.

    ``field_path`` names the offending field, e.g. ``cases[3].subset``.
    """

    def __init__(self, field_path, message):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


class IoFailureError(CraniotkError):
    """File could not be read or written."""


class NonConvergenceWarning(UserWarning):
    """Registration hit its iteration cap while still improving."""


class EmptyPredictionWarning(UserWarning):
    """A reconstruction produced an empty implant estimate."""
