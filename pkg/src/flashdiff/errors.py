"""Exception hierarchy shared by the chip, codec, drivers and harness."""


class FlashError(Exception):
    """Base class for everything raised by flashdiff."""


class AddressError(FlashError, IndexError):
    pass


class OverwriteViolation(FlashError):
    """A program request tried to flip a bit from 0 back to 1."""


class SpareExhausted(FlashError):
    """More spare-only programs than the part allows between erases."""


class CorruptionError(FlashError):
    """Malformed on-flash record (bad header, truncated run, out-of-page run)."""


# decode() raises this; keep one name for callers that only care about decoding
DecodeError = CorruptionError


class CapacityError(FlashError):
    """No free page could be produced, even after garbage collection."""


class PageNotFound(FlashError, KeyError):
    pass


class ImageFormatError(FlashError):
    pass
