"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class HuxError(Exception):
    """Base class for all pipeline errors."""


class RejectedFrame(HuxError):
    """Frame id did not increase relative to the last ingested frame."""


class ClockRegression(HuxError):
    """A scheduler saw time move backwards."""


class InconsistentLog(HuxError):
    """An event's "before" counts disagree with the replayed running counts."""


class NoGazeData(HuxError):
    pass


class NoFrame(HuxError):
    pass


class OutOfScene(HuxError):
    """Gaze point lies outside the frame; the turn proceeds scene-only."""


class EmptyUtterance(HuxError):
    pass


class BackendUnavailable(HuxError):
    pass


class UnresolvableImage(HuxError):
    pass


class MissingCaption(HuxError):
    pass


class PersistenceFailure(HuxError):
    pass


class CorruptStore(HuxError):
    """A store line could not be decoded. ``index`` is the 0-based record index."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"corrupt record at index {index}: {reason}")
        self.index = index
        self.reason = reason


class EmptyQuery(HuxError):
    pass


class AmbiguousTool(HuxError):
    def __init__(self, tool_ids: list[str]):
        super().__init__(f"utterance matches several tools: {', '.join(tool_ids)}")
        self.tool_ids = tool_ids


class NoAnnotations(HuxError):
    pass


class ScriptMismatch(HuxError):
    pass


class ScenarioInvalid(HuxError):
    """Scenario file failed validation. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class ConfigInvalid(HuxError):
    pass
