"""Exception hierarchy.

Every error carries a machine-readable ``code`` and the process exit status
the command-line front end maps it to (2 usage, 3 data, 4 numerical).
"""


class HDBootError(Exception):
    code = "error"
    exit_status = 4


class UsageError(HDBootError):
    code = "usage"
    exit_status = 2


class ConfigError(UsageError):
    code = "config"


class ParseError(HDBootError):
    code = "parse"
    exit_status = 3


class DimensionMismatch(HDBootError, ValueError):
    code = "dimension_mismatch"
    exit_status = 3


class Unidentifiable(HDBootError, ValueError):
    code = "unidentifiable"
    exit_status = 3


class DegenerateFold(HDBootError, ValueError):
    code = "degenerate_fold"
    exit_status = 3


class NonConvergence(HDBootError, RuntimeError):
    code = "non_convergence"

    def __init__(self, msg, gap=float("nan"), n_iter=0):
        super().__init__(msg)
        self.gap = gap
        self.n_iter = n_iter


class SaturatedFit(HDBootError, RuntimeError):
    code = "saturated_fit"


class DegenerateProjection(HDBootError, RuntimeError):
    code = "degenerate_projection"


class DegenerateVariance(HDBootError, RuntimeError):
    code = "degenerate_variance"


class ReplicateFailure(HDBootError, RuntimeError):
    code = "replicate_failure"
