"""Exception hierarchy shared by all treeforge modules."""


class TreeForgeError(Exception):
    """Base class of every error raised on purpose by treeforge."""


class ShapeError(TreeForgeError, ValueError):
    """Array dimensions do not agree."""


class DuplicateEntry(TreeForgeError, ValueError):
    """A (row, col) coordinate was given twice."""


class CapacityError(TreeForgeError, MemoryError):
    """A dense allocation would exceed the configured byte cap."""


class EmptyDataset(TreeForgeError, ValueError):
    """A dataset with zero samples was given or produced."""


class ParseError(TreeForgeError, ValueError):
    """A data file is malformed."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class InvalidProjection(TreeForgeError, ValueError):
    pass


class EmptyPartition(TreeForgeError, ValueError):
    pass


class InvalidSplit(TreeForgeError, ValueError):
    pass


class RelabelError(TreeForgeError, ValueError):
    pass


class InvalidTarget(TreeForgeError, ValueError):
    pass


class Unsupported(TreeForgeError, NotImplementedError):
    pass


class InvalidStep(TreeForgeError, ValueError):
    pass


class InvalidFolds(TreeForgeError, ValueError):
    pass


class InvalidT(TreeForgeError, ValueError):
    pass
