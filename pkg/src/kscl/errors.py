"""Exception hierarchy.

Every error carries a short machine-readable ``code``; the CLI maps the
three families below onto its exit codes (config 2, numeric 3, invariant 4).
"""

from __future__ import annotations


class KsclError(Exception):
    code = "kscl.error"
    exit_code = 3

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context


class ConfigError(KsclError, ValueError):
    code = "config.invalid"
    exit_code = 2


class InvalidConfig(ConfigError):
    code = "config.invalid"


class UnknownConfigKey(ConfigError):
    code = "config.unknown_key"


class NumericError(KsclError):
    code = "numeric.failure"
    exit_code = 3


class ShapeError(NumericError, ValueError):
    code = "numeric.shape"


class NonSquare(ShapeError):
    code = "linalg.non_square"


class DimensionMismatch(ShapeError):
    code = "numeric.dimension_mismatch"


class ShapeMismatch(ShapeError):
    code = "numeric.shape_mismatch"


class NonSymmetric(NumericError, ValueError):
    code = "linalg.non_symmetric"


class NonFinite(NumericError, ValueError):
    code = "numeric.non_finite"


class NonFiniteActivation(NonFinite):
    code = "encoder.non_finite_activation"


class NonFiniteGradient(NonFinite):
    code = "encoder.non_finite_gradient"


class NonFiniteLoss(NonFinite):
    code = "trainer.non_finite_loss"


class EmptyKeys(NumericError, ValueError):
    code = "subspace.empty_keys"


class NonUnitKey(NumericError, ValueError):
    code = "subspace.non_unit_key"


class KExceedsDim(NumericError, ValueError):
    code = "subspace.k_exceeds_dim"


class AllZeroSpectrum(NumericError, ValueError):
    code = "subspace.all_zero_spectrum"


class PositiveOutOfRange(NumericError, IndexError):
    code = "loss.positive_out_of_range"


class CheckpointCorrupt(KsclError):
    code = "io.checkpoint_corrupt"
    exit_code = 3


class DatasetCorrupt(KsclError):
    code = "io.dataset_corrupt"
    exit_code = 3


class InvariantViolation(KsclError):
    code = "selfcheck.invariant"
    exit_code = 4
