"""Task profiles: which objects matter for a task and what counts as an event."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from hux.scene import FrameDelta

DEFAULT_MIN_CONFIDENCE = 0.5
DEFAULT_MOVE_THRESHOLD_PX = 25.0
DEFAULT_SCALE_RATIO_THRESHOLD = 1.5


@dataclass(frozen=True)
class CustomRule:
    """Named predicate over a frame delta; fires a ``custom:<name>`` event kind."""

    name: str
    predicate: Callable[["FrameDelta"], bool] = field(compare=False)

    def __call__(self, delta: "FrameDelta") -> bool:
        return bool(self.predicate(delta))


def _appeared(category: str) -> Callable[["FrameDelta"], bool]:
    def check(delta: "FrameDelta") -> bool:
        before, after = delta.counts.get(category, (0, 0))
        return before == 0 and after > 0

    return check


def _disappeared(category: str) -> Callable[["FrameDelta"], bool]:
    def check(delta: "FrameDelta") -> bool:
        before, after = delta.counts.get(category, (0, 0))
        return before > 0 and after == 0

    return check


_RULE_FACTORIES: dict[str, Callable[[str], Callable[["FrameDelta"], bool]]] = {
    "appeared": _appeared,
    "disappeared": _disappeared,
}


def rule_from_spec(spec: str) -> CustomRule:
    """Build a rule from a config string such as ``"disappeared:apple"``."""
    kind, sep, arg = spec.partition(":")
    if not sep or not arg or kind not in _RULE_FACTORIES:
        known = ", ".join(sorted(_RULE_FACTORIES))
        raise ValueError(f"unknown custom rule {spec!r} (expected <kind>:<category>, kinds: {known})")
    return CustomRule(spec, _RULE_FACTORIES[kind](arg))


@dataclass(frozen=True)
class TaskProfile:
    """Per-task bundle of objects of interest, thresholds and instructions.

    A threshold of ``math.inf`` disables that behavior-change signal.
    """

    task_id: str
    ooi_categories: frozenset[str]
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    move_threshold_px: float = DEFAULT_MOVE_THRESHOLD_PX
    scale_ratio_threshold: float = DEFAULT_SCALE_RATIO_THRESHOLD
    custom_rules: tuple[CustomRule, ...] = ()
    caption_instruction: str = "Describe the scene in detail."
    context_instruction: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "ooi_categories", frozenset(self.ooi_categories))
        object.__setattr__(self, "custom_rules", tuple(self.custom_rules))
        if not self.ooi_categories:
            raise ValueError(f"profile {self.task_id!r}: ooi_categories must be non-empty")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError(f"profile {self.task_id!r}: min_confidence must lie in [0, 1]")
        if not self.move_threshold_px > 0:
            raise ValueError(f"profile {self.task_id!r}: move_threshold_px must be > 0")
        if not self.scale_ratio_threshold > 1:
            raise ValueError(f"profile {self.task_id!r}: scale_ratio_threshold must be > 1")

    def without_behavior(self) -> "TaskProfile":
        """Copy with movement and scale triggers switched off."""
        return TaskProfile(
            task_id=self.task_id,
            ooi_categories=self.ooi_categories,
            min_confidence=self.min_confidence,
            move_threshold_px=math.inf,
            scale_ratio_threshold=math.inf,
            custom_rules=(),
            caption_instruction=self.caption_instruction,
            context_instruction=self.context_instruction,
        )


FRUIT_PROFILE = TaskProfile(
    task_id="fruit",
    ooi_categories=frozenset({"apple", "banana", "orange"}),
    caption_instruction="Describe the fruits on the table and where they are.",
    context_instruction="The objects of interest are the fruits on the table.",
)

PCB_BOARD_PROFILE = TaskProfile(
    task_id="pcb_board",
    ooi_categories=frozenset({"pcb"}),
    caption_instruction="Describe the circuit board and its components.",
    context_instruction="The user is inspecting a printed circuit board.",
)

PCB_DEFECT_PROFILE = TaskProfile(
    task_id="pcb_defects",
    ooi_categories=frozenset(
        {"missing_hole", "mouse_bite", "open_circuit", "short", "spur", "spurious_copper"}
    ),
    min_confidence=0.25,
    caption_instruction="check defects use labels.",
    context_instruction="Labels mark defects found on the circuit board.",
)

BUILTIN_PROFILES: dict[str, TaskProfile] = {
    p.task_id: p for p in (FRUIT_PROFILE, PCB_BOARD_PROFILE, PCB_DEFECT_PROFILE)
}
