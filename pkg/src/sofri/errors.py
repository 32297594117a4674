"""Exception hierarchy shared by all sofri modules."""


class SofriError(Exception):
    """Base class for all errors raised by sofri."""


# --- grid / basis -----------------------------------------------------------

class NonMonotoneGrid(SofriError):
    pass


class TooFewPoints(SofriError):
    pass


class InvalidK(SofriError):
    pass


class GridMismatch(SofriError):
    pass


class DimensionMismatch(SofriError):
    pass


# --- delta ------------------------------------------------------------------

class ZeroDenominator(SofriError):
    pass


class ZeroDelta(SofriError):
    pass


# --- probability kernels ----------------------------------------------------

class NonPositiveConcentration(SofriError):
    pass


class InvalidDegreesOfFreedom(SofriError):
    pass


class NonSpdScale(SofriError):
    pass


class EmptyResiduals(SofriError):
    pass


# --- model / sampler --------------------------------------------------------

class RankDeficientZ(SofriError):
    pass


class NumericalFailure(SofriError):
    pass


class InvalidScenario(SofriError):
    pass


class TooFewReplicates(SofriError):
    pass


# --- posterior summaries ----------------------------------------------------

class TooFewDraws(SofriError):
    pass


class NoAllocationSnapshots(SofriError):
    pass


class EmptyCluster(SofriError):
    pass


# --- ingestion --------------------------------------------------------------

class IdMismatch(SofriError):
    pass


class MalformedCsv(SofriError):
    pass


class NonNumericCell(MalformedCsv):
    pass


class DomainError(SofriError):
    pass
