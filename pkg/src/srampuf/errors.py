"""Exception types shared across the toolkit.

Each error carries the process exit status the command-line front end uses
when it aborts on that error.
"""
from __future__ import annotations


class SrampufError(Exception):
    exit_code = 1


class MalformedError(SrampufError):
    """Input file violates its documented format."""

    exit_code = 3

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"MALFORMED: {where}{message}")


class NoConvergenceError(SrampufError):
    exit_code = 4

    def __init__(self, message: str):
        super().__init__(f"NO_CONVERGENCE: {message}")


class EmptySetError(SrampufError, ValueError):
    exit_code = 6

    def __init__(self, message: str = "empty input"):
        super().__init__(f"EMPTY_SET: {message}")


class SizeMismatchError(SrampufError, ValueError):
    exit_code = 6

    def __init__(self, message: str = "inputs differ in size"):
        super().__init__(f"SIZE_MISMATCH: {message}")


class UnreachableError(SrampufError, ValueError):
    exit_code = 6

    def __init__(self, message: str):
        super().__init__(f"UNREACHABLE: {message}")


IO_ERROR_EXIT = 5
