"""Exception types shared across the package.

The CLI maps these onto its exit-code convention: usage errors exit 1,
DataFormatError exits 2, NumericalError exits 3.
"""


class DataFormatError(Exception):
    """Malformed or inconsistent input data (files, checkpoints, ids)."""


class NumericalError(Exception):
    """Non-finite values encountered where finite math was required."""
