"""Exception types shared across the package."""


class FolcompError(Exception):
    """Base class for all package errors."""


class ValidationFailure(FolcompError):
    """A mandatory model certificate failed.

    Attributes:
        certificate: name of the first violated predicate.
        witness: tuple of 1-based basis indices exhibiting the violation.
    """

    def __init__(self, certificate, witness, detail=""):
        self.certificate = certificate
        self.witness = tuple(int(i) for i in witness)
        msg = f"certificate '{certificate}' violated at basis indices {self.witness}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NonPositiveEpsilon(FolcompError):
    pass


class UnsupportedModel(FolcompError):
    """The model admits no group realization known to this package."""


class NotTotallyGeodesic(FolcompError):
    pass


class IntegrationFailure(FolcompError):
    pass


class NoConvergence(FolcompError):
    pass


class NonHorizontalInput(FolcompError):
    pass


class NonHorizontalField(FolcompError):
    pass


class DomainError(FolcompError):
    """Argument outside the validity range of a comparison profile."""


class UncertifiedDistance(FolcompError):
    pass


class InapplicableK(FolcompError):
    """The requested check is only stated for a different sign of K."""


class NonPositiveK(FolcompError):
    pass
