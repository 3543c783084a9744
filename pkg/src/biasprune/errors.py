"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class BiasPruneError(Exception):
    """Base class for all library errors."""


# --- model runtime ---------------------------------------------------------


class ConfigError(BiasPruneError, ValueError):
    pass


class CheckpointError(BiasPruneError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class TensorInventoryError(CheckpointError):
    """Tensor names do not match the enumeration implied by the config."""


class NonFiniteValueError(CheckpointError):
    pass


class EmptyInputError(BiasPruneError, ValueError):
    pass


class PromptTooLongError(BiasPruneError, ValueError):
    pass


class NumericError(BiasPruneError, ArithmeticError):
    def __init__(self, path: str, detail: str = "non-finite values") -> None:
        super().__init__(f"{detail} at {path}")
        self.path = path


class MissingHookError(BiasPruneError):
    pass


class AddressError(BiasPruneError, ValueError):
    """A NeuronId does not address a neuron of the model."""


# --- attribution / detection ----------------------------------------------


class CongruenceError(BiasPruneError, ValueError):
    """Two per-neuron structures do not cover the same coordinates."""


class LabelKindError(BiasPruneError, ValueError):
    pass


class DegenerateClassSetError(BiasPruneError, ValueError):
    pass


class DatasetError(BiasPruneError, ValueError):
    pass


# --- pruning ----------------------------------------------------------------


class MaskValidationError(BiasPruneError, ValueError):
    pass


class DuplicateNeuronError(MaskValidationError):
    pass


class NonDescendingScoresError(MaskValidationError):
    pass


class StaleMaskError(BiasPruneError):
    """Mask fingerprint does not match the model it is applied to."""


class UnsupportedCompactionError(BiasPruneError):
    def __init__(self, offenders: list) -> None:
        listed = ", ".join(str(o) for o in offenders)
        super().__init__(f"only ffn.in channels can be compacted; offenders: {listed}")
        self.offenders = list(offenders)


class BoundsError(BiasPruneError, ValueError):
    pass


# --- baselines / evaluation / oracles -------------------------------------


class MissingCorpusError(BiasPruneError, ValueError):
    pass


class DimensionMismatchError(BiasPruneError, ValueError):
    pass


class EvaluationError(BiasPruneError):
    def __init__(self, instance_id: str, cause: Exception) -> None:
        super().__init__(f"instance {instance_id!r}: {cause}")
        self.instance_id = instance_id
        self.cause = cause


class StageError(BiasPruneError):
    def __init__(self, stage: str, context: str, cause: Exception) -> None:
        super().__init__(f"stage {stage!r} failed ({context}): {cause}")
        self.stage = stage
        self.cause = cause


class PrecisionError(BiasPruneError):
    pass


class BudgetError(BiasPruneError):
    pass
