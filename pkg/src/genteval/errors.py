"""Exception taxonomy for the toolkit.

Two branches matter for the CLI: configuration problems (bad flags,
invalid strategy/parameter pairings) exit with code 2, data problems
(empty or inconsistent inputs) exit with code 3.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit-raised errors."""


class ConfigError(ToolkitError):
    """A configuration value is invalid or inconsistent."""


class BadOrder(ConfigError):
    """An n-gram order below 1 was requested."""


class DataError(ToolkitError):
    """Input data cannot support the requested operation."""


class EmptyInput(DataError):
    """Text or token input was empty where content is required."""


class CorpusTooSmall(DataError):
    """The corpus cannot be chunked into enough pieces."""


class InsufficientData(DataError):
    """Not enough raw material to build the requested dataset."""


class InsufficientSamples(DataError):
    """A metric needs more samples than the set provides."""


class EmptyDataset(DataError):
    """A loaded dataset contained no valid records."""


class AlignmentError(DataError):
    """Word-level and model-level token surfaces cannot be reconciled."""


class NoSupervision(DataError):
    """Every position in a classification batch is masked."""


class DegenerateFit(DataError):
    """A curve fit was requested on degenerate points."""
