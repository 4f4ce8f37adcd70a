"""Exception hierarchy. Each family maps to one CLI exit code."""


class SemlocError(Exception):
    exit_code = 1


class ConfigError(SemlocError):
    exit_code = 2


class DataError(SemlocError):
    exit_code = 3


class NumericalError(SemlocError):
    exit_code = 4


class UnknownClassError(DataError, KeyError):
    """A source class id that is not covered by a remap table."""

    def __init__(self, class_id, taxonomy):
        self.class_id = class_id
        self.taxonomy = taxonomy
        super().__init__(f"unknown class id {class_id!r} for taxonomy {taxonomy!r}")

    def __str__(self):
        return self.args[0]


class DegenerateAlignmentError(NumericalError):
    pass


class SingularGraphError(NumericalError):
    """Raised when part of a pose graph has no gauge constraint."""

    def __init__(self, component, message=None):
        self.component = sorted(component)
        super().__init__(message or f"pose graph is underdetermined: component with nodes {self.component} "
                         "is not anchored and has no GNSS factor")
