"""Exception types raised across the package."""


class HorizonError(Exception):
    """Base class for every error raised by regional_horizon."""


class InvalidSpec(HorizonError, ValueError):
    pass


class SequenceTooLong(HorizonError, ValueError):
    pass


class IndexOutOfRange(HorizonError, IndexError):
    pass


class DenseTooLarge(HorizonError, MemoryError):
    pass


class ShapeMismatch(HorizonError, ValueError):
    pass


class AllMaskedRow(HorizonError, ValueError):
    pass


class BadDimension(HorizonError, ValueError):
    pass


class EmptyDataset(HorizonError, ValueError):
    pass


class BadPolicy(HorizonError, ValueError):
    pass


class SceneIdMismatch(HorizonError, ValueError):
    pass


class BadConstraints(HorizonError, ValueError):
    pass
