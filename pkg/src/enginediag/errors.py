"""Exception taxonomy shared across the package."""


class EngineDiagError(Exception):
    """Base class for all errors raised by this package."""


# --- audio decoding / canonicalization ---------------------------------

class MalformedContainer(EngineDiagError):
    """File is not a well-formed RIFF/WAVE container."""


class UnsupportedEncoding(EngineDiagError):
    """WAV encoding other than 16-bit PCM or 32-bit float."""


class ZeroLengthAudio(EngineDiagError):
    """Decoded file contains no samples."""


class UnsupportedChannelCount(EngineDiagError):
    """More than two channels."""


class TooShort(EngineDiagError):
    """Recording shorter than one clip; contributes no clips."""


# --- features / augmentation -------------------------------------------

class EmptyFeatureList(EngineDiagError):
    """fuse_concat called with no features."""


class SilentClip(EngineDiagError):
    """Operation undefined on an all-zero clip."""


class UnknownFeatureKind(EngineDiagError):
    """Feature kind outside the supported vocabulary."""


# --- synthesis ----------------------------------------------------------

class InvalidSpec(EngineDiagError):
    """Engine spec violates a structural constraint."""


class IoFailure(EngineDiagError):
    """Filesystem write failed during corpus generation."""


# --- neural network kernel ----------------------------------------------

class ShapeMismatch(EngineDiagError):
    """Tensor shapes incompatible with the requested operation."""


class AllMasked(EngineDiagError):
    """Loss requested over a batch where every sample is masked."""


class NonFiniteGradient(EngineDiagError):
    """NaN or infinity encountered in a gradient."""


# --- models / training ---------------------------------------------------

class EmptyLabelSet(EngineDiagError):
    """Baseline fit on an empty label list."""


class EmptyManifest(EngineDiagError):
    """Manifest holds no rows."""


class EmptySplit(EngineDiagError):
    """Requested evaluation split holds no rows."""


class NonFiniteLoss(EngineDiagError):
    """Training loss became NaN or infinite; carries a batch diagnostic."""
