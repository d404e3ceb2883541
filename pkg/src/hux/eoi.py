"""Event-of-interest classification and caption scheduling under captioner latency.

Two scheduling policies are supported while the captioner is busy:

``naive``
    A newly detected event replaces the single pending slot. Whatever sat in
    the slot before is lost without a trace.
``hybrid``
    Every event is logged immediately with its count deltas
    (``caption_status="count_only"``) and also takes the pending slot, so the
    latest one gets captioned once the captioner frees up.

``caption_status`` records how an event entered the log. A hybrid event that
is later captioned from the pending slot keeps ``count_only`` and gains a
``caption``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

from hux.errors import ClockRegression, InconsistentLog
from hux.profiles import CustomRule, TaskProfile
from hux.scene import FrameDelta

__all__ = [
    "CaptionScheduler",
    "CaptionerState",
    "CustomRule",
    "EventRecord",
    "TaskProfile",
    "classify_event",
    "release_pending",
    "reconstruct_timeline",
    "replay_counts",
    "schedule_caption",
]

Policy = Literal["naive", "hybrid"]
POLICIES: tuple[str, ...] = ("naive", "hybrid")

COUNT_CHANGE = "count_change"
BEHAVIOR_CHANGE = "behavior_change"

DISPATCH = "dispatch"
REPLACE_PENDING = "replace_pending"
RECORD_COUNTS = "record_counts"


@dataclass
class EventRecord:
    event_id: int
    frame_id: int
    timestamp_ms: int
    kinds: frozenset[str]
    count_deltas: dict[str, tuple[int, int]]
    caption_status: str = "pending"
    caption: str | None = None
    image_ref: str = ""

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ValueError("an event needs at least one kind")

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "frame_id": self.frame_id,
            "timestamp_ms": self.timestamp_ms,
            "kinds": sorted(self.kinds),
            "count_deltas": {c: list(ba) for c, ba in sorted(self.count_deltas.items())},
            "caption_status": self.caption_status,
            "caption": self.caption,
            "image_ref": self.image_ref,
        }


def classify_event(
    delta: FrameDelta,
    profile: TaskProfile,
    *,
    event_id: int | None = None,
    image_ref: str = "",
) -> EventRecord | None:
    """Turn a frame delta into an event, or ``None`` when nothing fired.

    Simultaneous triggers merge into one record. ``event_id`` defaults to the
    frame id, which keeps ids aligned with frames.
    """
    kinds: set[str] = set()
    if any(
        before != after
        for cat, (before, after) in delta.counts.items()
        if cat in profile.ooi_categories
    ):
        kinds.add(COUNT_CHANGE)

    for motion in delta.motions:
        if motion.category not in profile.ooi_categories:
            continue
        ratio = motion.scale_ratio
        if (
            motion.displacement_px > profile.move_threshold_px
            or ratio > profile.scale_ratio_threshold
            or ratio * profile.scale_ratio_threshold < 1
        ):
            kinds.add(BEHAVIOR_CHANGE)
            break

    for rule in profile.custom_rules:
        if rule(delta):
            kinds.add(f"custom:{rule.name}")

    if not kinds:
        return None
    return EventRecord(
        event_id=delta.frame_id if event_id is None else event_id,
        frame_id=delta.frame_id,
        timestamp_ms=delta.timestamp_ms,
        kinds=frozenset(kinds),
        count_deltas=dict(delta.counts),
        image_ref=image_ref,
    )


@dataclass(frozen=True)
class CaptionerState:
    busy_until_ms: int = 0
    pending_event: EventRecord | None = field(default=None, compare=False)
    last_seen_ms: int | None = None

    def is_free(self, now_ms: int) -> bool:
        return now_ms >= self.busy_until_ms


def _check_clock(captioner: CaptionerState, now_ms: int) -> None:
    if captioner.last_seen_ms is not None and now_ms < captioner.last_seen_ms:
        raise ClockRegression(f"time moved back from {captioner.last_seen_ms} to {now_ms} ms")


def schedule_caption(
    event: EventRecord,
    now_ms: int,
    captioner: CaptionerState,
    policy: Policy,
    caption_latency_ms: int,
) -> tuple[str, CaptionerState]:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if caption_latency_ms < 0:
        raise ValueError("caption_latency_ms must be >= 0")
    _check_clock(captioner, now_ms)
    if captioner.is_free(now_ms):
        # a stale pending candidate is superseded by the newer event
        return DISPATCH, CaptionerState(now_ms + caption_latency_ms, None, now_ms)
    decision = REPLACE_PENDING if policy == "naive" else RECORD_COUNTS
    return decision, CaptionerState(captioner.busy_until_ms, event, now_ms)


def release_pending(
    captioner: CaptionerState, now_ms: int, caption_latency_ms: int
) -> tuple[EventRecord | None, CaptionerState]:
    """Dispatch the pending candidate if the captioner is free at ``now_ms``."""
    _check_clock(captioner, now_ms)
    if captioner.pending_event is None or not captioner.is_free(now_ms):
        return None, replace(captioner, last_seen_ms=now_ms)
    return captioner.pending_event, CaptionerState(now_ms + caption_latency_ms, None, now_ms)


class CaptionScheduler:
    """Owns the event log and captioner state for one stream."""

    def __init__(self, policy: Policy, caption_latency_ms: int):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.policy = policy
        self.latency_ms = caption_latency_ms
        self.state = CaptionerState()
        self.log: list[EventRecord] = []
        self.dispatches = 0

    def submit(self, event: EventRecord, now_ms: int) -> str:
        decision, self.state = schedule_caption(
            event, now_ms, self.state, self.policy, self.latency_ms
        )
        if decision == DISPATCH:
            event.caption_status = "pending"
            self.log.append(event)
            self.dispatches += 1
        elif decision == RECORD_COUNTS:
            event.caption_status = "count_only"
            self.log.append(event)
        return decision

    def release(self, now_ms: int) -> EventRecord | None:
        event, self.state = release_pending(self.state, now_ms, self.latency_ms)
        if event is None:
            return None
        if self.policy == "naive":
            event.caption_status = "pending"
            self.log.append(event)
        self.dispatches += 1
        return event

    @staticmethod
    def complete(event: EventRecord, caption: str) -> None:
        event.caption = caption
        if event.caption_status == "pending":
            event.caption_status = "captioned"


def replay_counts(
    event_log: Sequence[EventRecord], *, strict: bool = True
) -> list[tuple[int, int, dict[str, int]]]:
    """Replay count deltas; yields ``(frame_id, timestamp_ms, counts)`` per event.

    With ``strict=False`` a disagreeing "before" is overwritten by the
    event's "after" instead of raising, which is how a lossy log drifts.
    """
    running: dict[str, int] = {}
    out = []
    for event in event_log:
        for cat, (before, after) in sorted(event.count_deltas.items()):
            if strict and running.get(cat, 0) != before:
                raise InconsistentLog(
                    f"event {event.event_id}: {cat!r} before={before} "
                    f"but replayed count is {running.get(cat, 0)}"
                )
            if after:
                running[cat] = after
            else:
                running.pop(cat, None)
        out.append((event.frame_id, event.timestamp_ms, dict(running)))
    return out


def reconstruct_timeline(
    event_log: Sequence[EventRecord], *, strict: bool = True
) -> list[tuple[int, dict[str, int]]]:
    """Rebuild counts at each event time from count deltas alone."""
    return [(ts, counts) for _, ts, counts in replay_counts(event_log, strict=strict)]
