class FeedbackGraphError(Exception):
    """Base class for every error raised by fg_explore."""


class GraphSizeError(FeedbackGraphError):
    """Exact graph quantities are only computed for small graphs."""


class InfeasibleDominationError(FeedbackGraphError):
    """A target vertex has no in-neighbour, so nothing can dominate it."""


class NotObservableError(FeedbackGraphError):
    pass


class FamilyDomainError(FeedbackGraphError, ValueError):
    """A mean lies outside the support the reward family allows."""


class UnidentifiableError(FeedbackGraphError):
    """
    Bernoulli rewards with an unknown graph and unrevealed activations: the
    best vertex cannot be identified, whatever the amount of data.
    """


class ConfigError(FeedbackGraphError):
    pass
