class MvFusionError(Exception):
    pass


class InvalidMatrix(MvFusionError):
    pass


class NumericalFailure(MvFusionError):
    def __init__(self, message, condition=None, layer=None):
        details = []
        if condition is not None:
            details.append("condition={:.3e}".format(condition))
        if layer is not None:
            details.append("layer={}".format(layer))
        if details:
            message = "{} ({})".format(message, ", ".join(details))
        super().__init__(message)
        self.condition = condition
        self.layer = layer


class InvalidTruncation(MvFusionError):
    pass


class NotOrthonormal(MvFusionError):
    pass


class DimensionMismatch(MvFusionError):
    pass


class ShapeMismatch(MvFusionError):
    pass


class InvalidPartition(MvFusionError):
    pass


class EmptyClass(MvFusionError):
    pass


class InconsistentMessages(MvFusionError):
    pass


class CorruptMessage(MvFusionError):
    pass


class CoverageInfeasible(MvFusionError):
    pass


class InvalidCount(MvFusionError):
    pass


class ConfigError(MvFusionError):
    pass


class MetricUnavailable(MvFusionError):
    pass


class VerificationFailed(MvFusionError):
    pass


class FusedRankDeficient(UserWarning):
    """The concatenated bases have fewer than P_k directions above the rank tolerance."""
