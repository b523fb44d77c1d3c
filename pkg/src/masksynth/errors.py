"""Exception and warning types shared across the package."""


class MaskSynthError(Exception):
    """Base class for all library errors."""


class NonStochasticRow(MaskSynthError):
    """A probability row does not sum to 1 beyond the repair tolerance."""


class NegativeCost(MaskSynthError):
    """A masking-cost entry is negative."""


class InvalidPolicyRow(MaskSynthError):
    """A reachable grid cell has no control action defined."""


class AmbiguousSecretCoverage(MaskSynthError):
    """A secret state is covered by more than one sensor."""


class DegeneratePolicy(MaskSynthError):
    """A softmax action probability underflowed to exactly zero."""


class ZeroProbabilityObservation(MaskSynthError):
    """An observation sequence has probability below the realizability floor."""


class EnumerationTooLarge(MaskSynthError):
    """The observation-sequence space exceeds the enumeration cap."""


class DivergedParameters(MaskSynthError):
    """Policy parameters exceeded the divergence bound during optimization."""


class PolicyModelMismatch(MaskSynthError):
    """A serialized policy does not fit the model it is evaluated against."""


class ScenarioFormatError(MaskSynthError):
    """A scenario file is malformed; the message names the section or line."""


class EmptySecretSetWarning(UserWarning):
    """The secret set is empty; conditional entropy is identically zero."""
