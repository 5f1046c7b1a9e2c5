"""Exception types shared across the package."""


class LatentPlanError(Exception):
    """Base class for all package-specific errors."""


class FactorizationFailure(LatentPlanError):
    """A Gram matrix was not numerically positive definite, even after jitter."""


class MissingPhase(LatentPlanError):
    """Periodic latent dimensions were requested but the dataset has no phase."""


class NonFiniteObjective(LatentPlanError):
    """The training objective became NaN/inf, usually from badly scaled data."""


class UnreachableGoal(LatentPlanError):
    """The goal region has no free cells to seed the distance field from."""


class AllZeroDesirability(LatentPlanError):
    """No feasible trajectory: the desirability at the start state is zero."""


class DeadEndState(LatentPlanError):
    """An optimal-policy row was queried at a state with zero continuation mass."""


class NoFeasiblePath(LatentPlanError):
    """Every terminal trellis score is -inf; no collision-free path was found."""


class DegenerateWeights(LatentPlanError):
    """All particle weights collapsed to zero (every particle in collision)."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"all particle weights are zero at step {step}")
