"""Exception hierarchy.

Every error carries a module-qualified ``code`` so the CLI can emit a
machine-readable error record, and an ``exit_status``: 1 for input
validation problems, 2 for estimation failures.
"""


class BipartiteError(Exception):
    code = "error"
    exit_status = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"code": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items()})
        return out


class ValidationError(BipartiteError):
    code = "data_model.validation"
    exit_status = 1


class MissingColumn(ValidationError):
    code = "data_model.missing_column"


class NonBinaryTreatment(ValidationError):
    code = "data_model.non_binary_treatment"


class NegativeWeight(ValidationError):
    code = "data_model.negative_weight"


class OrphanOutcomeUnit(ValidationError):
    code = "data_model.orphan_outcome_unit"


class DimensionMismatch(ValidationError):
    code = "data_model.dimension_mismatch"


class UnknownCovariate(ValidationError):
    code = "data_model.unknown_covariate"


class ConfigError(ValidationError):
    code = "cli.config"


class EmptyRow(ValidationError):
    code = "exposure.empty_row"


class EstimationError(BipartiteError):
    code = "estimation"
    exit_status = 2


class LengthMismatch(EstimationError):
    code = "glm.length_mismatch"
    exit_status = 1


class SingularDesign(EstimationError):
    code = "glm.singular_design"


class SeparationError(EstimationError):
    code = "glm.separation"


class EmptyAfterTrim(EstimationError):
    code = "propensity.empty_after_trim"


class DegenerateQuantiles(EstimationError):
    code = "propensity.degenerate_quantiles"


class StratumTooSmall(EstimationError):
    code = "propensity.stratum_too_small"


class TooManyFailures(EstimationError):
    code = "bootstrap.too_many_failures"
