"""Exception hierarchy shared by the library and the command line.

Every error carries an ``exit_code`` so the CLI can map failures to
distinct process exit statuses without inspecting messages.
"""


class SoftlabError(Exception):
    exit_code = 1


class ValidationError(SoftlabError, ValueError):
    """Bad user input: malformed labels, inconsistent configuration, ..."""

    exit_code = 3


class FormatError(SoftlabError, ValueError):
    """An on-disk file does not follow its binary layout."""

    exit_code = 4


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class ArchitectureMismatchError(FormatError):
    pass


class ClassCountMismatchError(ValidationError):
    pass


class NumericError(SoftlabError, ArithmeticError):
    """Non-finite values showed up where finite ones are required."""

    exit_code = 5
