"""Exception hierarchy; everything raised on purpose derives from
ExporterError so the CLI can map failures to exit codes."""


class ExporterError(Exception):
    pass


class PromptSetError(ExporterError):
    """Invalid prompt set or prompts file."""


class EncoderUnavailableError(ExporterError):
    """No usable text encoder; the message says how to get one."""


class DimensionMismatchError(ExporterError):
    """Encoder output width disagrees with the requested fixture d_e."""


class EncodingError(ExporterError):
    """The encoder returned something unusable (wrong shape, zero or
    non-finite vectors)."""
