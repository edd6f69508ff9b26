"""Exception hierarchy shared by all treerate modules."""


class TreeRateError(ValueError):
    """Base class for invalid inputs and failed preconditions."""


class TreeError(TreeRateError):
    """Edge list or degree sequence does not describe a valid rooted tree."""


class NotASectionError(TreeRateError):
    def __init__(self, leaf, hits):
        self.leaf = leaf
        self.hits = hits
        super().__init__(
            f"not a cross section: geodesic to leaf {leaf!r} meets the set {hits} times"
        )


class NormalizationError(TreeRateError):
    """A probability vector or kernel row does not sum to one."""


class SupportError(TreeRateError):
    """P puts mass where Q has none, so D(P||Q) is infinite."""

    def __init__(self, witness, p_mass):
        self.witness = witness
        self.p_mass = p_mass
        super().__init__(
            f"support violation at {witness!r}: P-mass {p_mass!r} but Q-mass 0"
        )


class CertificateError(TreeRateError):
    """A tightness certificate is missing or does not cover the rows."""


class GuardError(RuntimeError):
    """A configured size guard was tripped before the computation started."""


class InvariantViolation(AssertionError):
    """A runtime-checked identity or inequality failed."""
