from __future__ import annotations

__all__ = (
    'GaitEventsError',
    'ModelFormatError',
    'RejectedConfigError',
    'RejectedInputError',
    'RejectedProfileError',
)


class GaitEventsError(Exception):
    """Base exception for every error raised by gaitevents."""


class RejectedInputError(GaitEventsError, ValueError):
    """An operation received input that violates its preconditions."""


class RejectedConfigError(GaitEventsError, ValueError):
    """A run configuration is malformed or inconsistent."""


class RejectedProfileError(GaitEventsError, ValueError):
    """A synthetic subject profile cannot produce physically valid strides."""


class ModelFormatError(GaitEventsError):
    """A persisted model file has the wrong kind, version or tensor shapes."""
