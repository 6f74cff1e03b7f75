class SightlineError(Exception):
    """Base class of every error raised by sightline"""


# catalog / ingestion
class CatalogError(SightlineError):
    pass


class MalformedRow(CatalogError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f'line {line}: {reason}')


class CoordinateOutOfRange(CatalogError):
    def __init__(self, lat: float, lon: float, line: int = None):
        self.lat, self.lon, self.line = lat, lon, line
        where = f'line {line}: ' if line is not None else ''
        super().__init__(f'{where}coordinate ({lat}, {lon}) is out of range')


class DuplicateSiteId(CatalogError):
    def __init__(self, site_id: str, line: int = None):
        self.site_id, self.line = site_id, line
        where = f'line {line}: ' if line is not None else ''
        super().__init__(f'{where}duplicate site_id "{site_id}"')


class DimensionMismatch(CatalogError):
    def __init__(self, expected: int, got: int, where: str = ''):
        self.expected, self.got = expected, got
        super().__init__(f'{where + ": " if where else ""}expected dimension {expected}, got {got}')


class NotNormalized(CatalogError):
    pass


class UnknownSiteId(CatalogError):
    def __init__(self, site_id: str, where: str = ''):
        self.site_id = site_id
        super().__init__(f'{where + ": " if where else ""}unknown site_id "{site_id}"')


# geo
class GeoError(SightlineError):
    pass


class UndefinedBearing(GeoError):
    pass


class InvalidTilingParams(GeoError):
    pass


class OutOfCoverage(GeoError):
    pass


# purify
class PurifyError(SightlineError):
    pass


class EmptyClass(PurifyError):
    pass


class UnsupportedAtom(PurifyError):
    pass


# classifier
class ClassifierError(SightlineError):
    pass


class IndexOutOfRange(ClassifierError):
    pass


class TooFewClasses(ClassifierError):
    pass


class EmptyTrainingSet(ClassifierError):
    pass


class EmptyTestSet(ClassifierError):
    pass


class CorruptModel(ClassifierError):
    pass


# context
class ContextError(SightlineError):
    pass


class NoCandidateInContext(ContextError):
    pass


# registry
class RegistryError(SightlineError):
    pass


class RegionUnknown(RegistryError):
    pass


class RegionMismatch(RegistryError):
    pass


class VersionUnknown(RegistryError):
    pass


class NoModelPublished(RegistryError):
    pass


class ProtocolError(RegistryError):
    pass


class FrameTooLarge(ProtocolError):
    pass


# harness / configuration
class HarnessError(SightlineError):
    pass


class InvalidConfig(HarnessError):
    pass


class ClassTooSmall(HarnessError):
    def __init__(self, site_id: str, n_images: int):
        self.site_id, self.n_images = site_id, n_images
        super().__init__(f'class "{site_id}" has {n_images} image(s), at least 2 are required')


def error_class(name: str) -> type:
    """Return the error class called `name`, falling back to SightlineError for unknown names"""
    cls = globals().get(name)
    if isinstance(cls, type) and issubclass(cls, SightlineError):
        return cls
    return SightlineError


__all__ = ['SightlineError', 'CatalogError', 'MalformedRow', 'CoordinateOutOfRange', 'DuplicateSiteId',
           'DimensionMismatch', 'NotNormalized', 'UnknownSiteId', 'GeoError', 'UndefinedBearing',
           'InvalidTilingParams', 'OutOfCoverage', 'PurifyError', 'EmptyClass', 'UnsupportedAtom',
           'ClassifierError', 'IndexOutOfRange', 'TooFewClasses', 'EmptyTrainingSet', 'EmptyTestSet',
           'CorruptModel', 'ContextError', 'NoCandidateInContext', 'RegistryError', 'RegionUnknown',
           'RegionMismatch', 'VersionUnknown', 'NoModelPublished', 'ProtocolError', 'FrameTooLarge',
           'HarnessError', 'InvalidConfig', 'ClassTooSmall', 'error_class']
