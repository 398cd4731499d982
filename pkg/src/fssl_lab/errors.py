"""Exception types raised by fssl_lab operations."""


class FsslError(Exception):
    """Base class for all fssl_lab errors."""


class ZeroNorm(FsslError):
    """Vector has (near-)zero Euclidean norm and cannot be normalized."""


class DimMismatch(FsslError):
    """Operands have incompatible dimensions."""


class TooFewPoints(FsslError):
    """Clustering requested more centroids than there are points."""


class CacheMismatch(FsslError):
    """Activation cache does not belong to the given parameters."""


class EmptyQueue(FsslError):
    """Memory queue holds no negatives."""


class NonPositiveTemperature(FsslError):
    """Softmax temperature must be strictly positive."""


class NoSelectedPositives(FsslError):
    """No hallucinated positives survived the constraint check."""


class EmptyPositives(FsslError):
    """Entanglement loss needs at least one positive key."""


class MuOutOfRange(FsslError):
    """Loss mixing weight must lie in [0, 1]."""


class InsufficientQueue(FsslError):
    """Queue holds fewer entries than prototype construction needs."""


class DegenerateGeodesic(FsslError):
    """Endpoints are (anti-)parallel; the connecting geodesic is undefined."""


class IndexOutOfRange(FsslError):
    """Trigger coordinate falls outside the input dimension."""


class InsufficientTargetSamples(FsslError):
    """Target class has fewer samples than the poison budget requests."""


class LayoutMismatch(FsslError):
    """Model parameter vectors come from different layer layouts."""


class SingleClient(FsslError):
    """Model replacement needs at least two participating clients."""


class TooFewClients(FsslError):
    """Defense needs more client updates than were supplied."""


class ClassTooSmall(FsslError):
    """Activation clustering needs at least two samples per class."""


class SingleClass(FsslError):
    """Linear probe training needs at least two classes."""


class EmptyTestSet(FsslError):
    """Evaluation set contains no samples."""


class NoEligibleSamples(FsslError):
    """No test samples are eligible for the attack-success measurement."""


class EmptyUpdateSet(FsslError):
    """Aggregation received no client updates."""


class ConfigInvalid(FsslError):
    """Experiment configuration failed validation.

    ``field`` names the offending dotted config path.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingMetrics(FsslError):
    """Run directory does not contain a metrics file."""


class MalformedRecord(FsslError):
    """Raw dataset file does not parse into whole records."""


class LabelOutOfRange(FsslError):
    """Dataset record carries a label outside the declared class range."""


class DimTooSmall(FsslError):
    """Input dimension cannot host the requested number of class means."""
