"""Exception hierarchy.

Errors raised because of bad input (files, arguments) derive from
``InputError``; errors raised while fitting or evaluating a model derive
from ``ModelError``.  The CLI maps the two families to exit codes 2 and 1.
"""


class SemisurvError(Exception):
    pass


class InputError(SemisurvError, ValueError):
    pass


class ModelError(SemisurvError, RuntimeError):
    pass


class MalformedCsv(InputError):
    pass


class MissingOutcomeColumn(InputError):
    pass


class InvalidOutcomeValue(InputError):
    pass


class EmptyColumn(InputError):
    pass


class NoLabeledSamples(InputError):
    pass


class InvalidSpec(InputError):
    pass


class LengthMismatch(InputError):
    pass


class EmptyMatrix(InputError):
    pass


class EmptyNode(ModelError):
    pass


class SingleClassInput(ModelError):
    pass


class NoUsefulWeakLearner(ModelError):
    pass


class NoSolution(ModelError):
    """The robust boosting step has no admissible (dt, alpha)."""


class TimeExhausted(ModelError):
    """Boosting time already reached 1."""


class FoldTooSmall(ModelError):
    pass
