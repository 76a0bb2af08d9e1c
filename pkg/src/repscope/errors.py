"""Error taxonomy shared by all repscope modules.

Every error carries a distinct process exit code so the CLI can map a
failure class to a stable, scriptable status. Codes are grouped by the
subsystem that raises them first; several (ShapeMismatch, NonFiniteInput,
IoError) are shared across subsystems.
"""


class RepscopeError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


# tensor / manifest I/O

class FormatError(RepscopeError):
    """File or descriptor does not follow the documented layout."""

    exit_code = 10


class CorruptFile(RepscopeError):
    """Structurally parseable header whose declared contents are impossible."""

    exit_code = 11


class UnsupportedDtype(RepscopeError):
    """Tensor file declares a dtype code this version does not read."""

    exit_code = 12


class IoError(RepscopeError):
    """Underlying read or write failed."""

    exit_code = 13


class DuplicateId(RepscopeError):
    """Manifest repeats an image_id."""

    exit_code = 14


class NonContiguousClasses(RepscopeError):
    """Manifest class_id values do not form 0..K-1."""

    exit_code = 15


class MissingTensor(RepscopeError):
    """Manifest references a tensor file that does not exist."""

    exit_code = 16


class ManifestMismatch(RepscopeError):
    """An image_id required by an operation is absent from the manifest."""

    exit_code = 17


# forward engine

class ShapeMismatch(RepscopeError):
    """Tensor dimensions are inconsistent with the declared operation."""

    exit_code = 20


class MissingWeights(RepscopeError):
    """Network descriptor references a weight file that does not exist."""

    exit_code = 21


class NonFiniteInput(RepscopeError):
    """NaN or Inf where finite values are required."""

    exit_code = 22


# activity-pattern pipeline

class EmptyInput(RepscopeError):
    """An operation received an empty payload."""

    exit_code = 30


class EmptyClass(RepscopeError):
    """A class has no images at the requested layer."""

    exit_code = 31


class LayerMismatch(RepscopeError):
    """Layer names of paired inputs disagree."""

    exit_code = 32


# statistics

class EmptyScope(RepscopeError):
    """The layer/class selection matched nothing."""

    exit_code = 40


class BadNeuron(RepscopeError):
    """Neuron index outside the layer's channel range."""

    exit_code = 41


# representational geometry

class ZeroVariance(RepscopeError):
    """Constant vector where a correlation is required."""

    exit_code = 50


class TooFewPatterns(RepscopeError):
    """An RDM needs at least two activity patterns."""

    exit_code = 51


class LabelMismatch(RepscopeError):
    """Paired RDMs do not share a label list."""

    exit_code = 52


class DegenerateRdm(RepscopeError):
    """RDM comparison impossible (constant off-diagonal entries)."""

    exit_code = 53


class ClassTooSmall(RepscopeError):
    """A class has fewer images than n_groups * per_group."""

    exit_code = 54


class BadDistanceMatrix(RepscopeError):
    """MDS input is asymmetric, negative, or has a nonzero diagonal."""

    exit_code = 55


# decoding heads

class DegenerateLabels(RepscopeError):
    """Classifier training needs at least two distinct classes."""

    exit_code = 60


class Diverged(RepscopeError):
    """Training loss became non-finite."""

    exit_code = 61


class BadClass(RepscopeError):
    """Class id outside the head's class range."""

    exit_code = 62


class MissingHead(RepscopeError):
    """No trained head available for a tap layer."""

    exit_code = 63
