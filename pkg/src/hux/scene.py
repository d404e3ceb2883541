"""Frame and detection types plus per-frame scene-state tracking.

Tracking is greedy IoU matching inside each category. Only detections whose
category is an object of interest for the active profile and whose confidence
clears ``profile.min_confidence`` take part in counting and tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from hux.errors import RejectedFrame
from hux.profiles import TaskProfile

IOU_MATCH_THRESHOLD = 0.3
DEFAULT_FRAME_WIDTH = 1280
DEFAULT_FRAME_HEIGHT = 720


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left origin."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if min(self.x, self.y, self.width, self.height) < 0:
            raise ValueError(f"rectangle components must be >= 0: {self}")

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2, self.y + self.height / 2)

    def within(self, width: int, height: int) -> bool:
        return self.x + self.width <= width and self.y + self.height <= height

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.width and self.y <= py <= self.y + self.height

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.width, self.height]


def iou(a: Rect, b: Rect) -> float:
    ix = max(0, min(a.x + a.width, b.x + b.width) - max(a.x, b.x))
    iy = max(0, min(a.y + a.height, b.y + b.height) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class Detection:
    category: str
    bbox: Rect
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class FrameRecord:
    """One video frame and the detector annotations attached to it."""

    frame_id: int
    timestamp_ms: int
    image_ref: str = ""
    detections: tuple[Detection, ...] = ()
    width: int = DEFAULT_FRAME_WIDTH
    height: int = DEFAULT_FRAME_HEIGHT

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame {self.frame_id}: dimensions must be positive")
        for det in self.detections:
            if not det.bbox.within(self.width, self.height):
                raise ValueError(
                    f"frame {self.frame_id}: bbox {det.bbox.as_list()} of {det.category!r} "
                    f"exceeds frame {self.width}x{self.height}"
                )


def relevant_detections(frame: FrameRecord, profile: TaskProfile) -> list[Detection]:
    """Detections that are objects of interest above the confidence floor, in frame order."""
    return [
        d
        for d in frame.detections
        if d.category in profile.ooi_categories and d.confidence >= profile.min_confidence
    ]


@dataclass(frozen=True)
class Track:
    track_id: int
    category: str
    last_bbox: Rect
    last_seen_frame_id: int


@dataclass(frozen=True)
class SceneState:
    """Immutable snapshot of what the analyzer currently sees."""

    counts: Mapping[str, int] = field(default_factory=dict)
    tracks: tuple[Track, ...] = ()
    last_frame_id: int | None = None
    next_track_id: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", MappingProxyType(dict(self.counts)))
        object.__setattr__(self, "tracks", tuple(self.tracks))


@dataclass(frozen=True)
class TrackMotion:
    track_id: int
    category: str
    displacement_px: float
    scale_ratio: float


@dataclass(frozen=True)
class FrameDelta:
    """What changed between the previous state and a newly ingested frame.

    ``counts`` maps every category seen before or after to ``(before, after)``.
    """

    frame_id: int
    timestamp_ms: int
    counts: Mapping[str, tuple[int, int]]
    motions: tuple[TrackMotion, ...] = ()
    new_track_ids: tuple[int, ...] = ()
    lost_track_ids: tuple[int, ...] = ()

    def changed(self) -> dict[str, tuple[int, int]]:
        return {c: ba for c, ba in self.counts.items() if ba[0] != ba[1]}


def _scale_ratio(old: Rect, new: Rect) -> float:
    if old.area == 0:
        return 1.0 if new.area == 0 else math.inf
    return new.area / old.area


def _match(tracks: Sequence[Track], detections: Sequence[Detection]) -> dict[int, int]:
    """Greedy IoU matching; returns detection index -> track position."""
    candidates = []
    for ti, track in enumerate(tracks):
        for di, det in enumerate(detections):
            if det.category != track.category:
                continue
            score = iou(track.last_bbox, det.bbox)
            if score >= IOU_MATCH_THRESHOLD:
                candidates.append((-score, track.track_id, di, ti))
    candidates.sort()
    used_tracks: set[int] = set()
    assigned: dict[int, int] = {}
    for _, _, di, ti in candidates:
        if ti in used_tracks or di in assigned:
            continue
        used_tracks.add(ti)
        assigned[di] = ti
    return assigned


def tally(detections: Iterable[Detection]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for det in detections:
        counts[det.category] = counts.get(det.category, 0) + 1
    return counts


def ingest_frame(
    state: SceneState, frame: FrameRecord, profile: TaskProfile
) -> tuple[SceneState, FrameDelta]:
    if state.last_frame_id is not None and frame.frame_id <= state.last_frame_id:
        raise RejectedFrame(
            f"frame_id {frame.frame_id} does not follow last ingested {state.last_frame_id}"
        )
    detections = relevant_detections(frame, profile)
    assigned = _match(state.tracks, detections)

    next_id = state.next_track_id
    tracks: list[Track] = []
    motions: list[TrackMotion] = []
    new_ids: list[int] = []
    for di, det in enumerate(detections):
        if di in assigned:
            old = state.tracks[assigned[di]]
            ox, oy = old.last_bbox.center
            nx, ny = det.bbox.center
            motions.append(
                TrackMotion(
                    track_id=old.track_id,
                    category=old.category,
                    displacement_px=math.hypot(nx - ox, ny - oy),
                    scale_ratio=_scale_ratio(old.last_bbox, det.bbox),
                )
            )
            tracks.append(Track(old.track_id, old.category, det.bbox, frame.frame_id))
        else:
            tracks.append(Track(next_id, det.category, det.bbox, frame.frame_id))
            new_ids.append(next_id)
            next_id += 1
    matched_positions = set(assigned.values())
    lost = [t.track_id for i, t in enumerate(state.tracks) if i not in matched_positions]

    after = tally(detections)
    categories = sorted(set(state.counts) | set(after))
    delta = FrameDelta(
        frame_id=frame.frame_id,
        timestamp_ms=frame.timestamp_ms,
        counts={c: (state.counts.get(c, 0), after.get(c, 0)) for c in categories},
        motions=tuple(sorted(motions, key=lambda m: m.track_id)),
        new_track_ids=tuple(new_ids),
        lost_track_ids=tuple(sorted(lost)),
    )
    new_state = SceneState(
        counts=after,
        tracks=tuple(tracks),
        last_frame_id=frame.frame_id,
        next_track_id=next_id,
    )
    return new_state, delta


def counts_timeline(
    frames: Sequence[FrameRecord], profile: TaskProfile
) -> list[tuple[int, dict[str, int]]]:
    """Plain per-frame recount of objects of interest, no tracking involved."""
    return [(f.frame_id, tally(relevant_detections(f, profile))) for f in frames]


@dataclass(frozen=True)
class OverlayLabel:
    """One box a task tool drew on the image, with its coarse verbal location."""

    category: str
    bbox: Rect
    location: str


@dataclass(frozen=True)
class ImageRef:
    """Locator for an image plus the annotation metadata travelling with it.

    Mock backends caption from ``annotations`` (or ``labels`` for a tool's
    labeled image); remote backends read the file at ``uri``.
    """

    uri: str
    width: int
    height: int
    annotations: tuple[Detection, ...] = ()
    labels: tuple[OverlayLabel, ...] | None = None
    subject: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"uri": self.uri, "width": self.width, "height": self.height}
        if self.subject is not None:
            out["subject"] = self.subject
        if self.labels is not None:
            out["labels"] = [
                {"category": lb.category, "bbox": lb.bbox.as_list(), "location": lb.location}
                for lb in self.labels
            ]
        return out


def frame_image(frame: FrameRecord, profile: TaskProfile | None = None) -> ImageRef:
    dets = frame.detections if profile is None else tuple(relevant_detections(frame, profile))
    return ImageRef(frame.image_ref, frame.width, frame.height, tuple(dets))
