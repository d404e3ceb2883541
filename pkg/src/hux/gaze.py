"""Gaze samples and region-of-interest crops.

The ROI is a square of side ``2 * radius_px`` centred on the gaze point. Near
a border it is translated back inside the frame; it only shrinks along a
dimension the square is larger than.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

from hux.errors import NoFrame, NoGazeData, OutOfScene
from hux.scene import Detection, FrameRecord, ImageRef, Rect

DEFAULT_RADIUS_PX = 120.0


@dataclass(frozen=True)
class GazeSample:
    x: float
    y: float
    radius_px: float = DEFAULT_RADIUS_PX
    timestamp_ms: int = 0

    def __post_init__(self) -> None:
        if not self.radius_px > 0:
            raise ValueError(f"radius_px must be > 0, got {self.radius_px}")


@dataclass(frozen=True)
class RoiCrop:
    source_frame_id: int
    rect: Rect
    image_ref: ImageRef
    caption: str | None = None


def _latest_at_or_before(timestamps: Sequence[int], ts: int) -> int | None:
    idx = bisect.bisect_right(timestamps, ts) - 1
    return idx if idx >= 0 else None


def snapshot_at_release(
    gaze_trace: Sequence[GazeSample],
    frames: Sequence[FrameRecord],
    release_ts_ms: int,
) -> tuple[GazeSample, FrameRecord]:
    """Gaze sample and frame in effect when the talk key is released.

    Both sequences must be time-ordered. On equal timestamps the later entry
    in the sequence wins.
    """
    gi = _latest_at_or_before([g.timestamp_ms for g in gaze_trace], release_ts_ms)
    if gi is None:
        raise NoGazeData(f"no gaze sample at or before {release_ts_ms} ms")
    fi = _latest_at_or_before([f.timestamp_ms for f in frames], release_ts_ms)
    if fi is None:
        raise NoFrame(f"no frame at or before {release_ts_ms} ms")
    return gaze_trace[gi], frames[fi]


def _place(center: float, side: int, extent: int) -> tuple[int, int]:
    if side >= extent:
        return 0, extent
    # anchored on the gazed pixel so the point stays inside [start, start + side)
    start = math.floor(center) - side // 2
    return min(max(start, 0), extent - side), side


def roi_rect(width: int, height: int, gaze: GazeSample) -> Rect:
    if not (0 <= gaze.x < width and 0 <= gaze.y < height):
        raise OutOfScene(
            f"gaze ({gaze.x:g}, {gaze.y:g}) lies outside the {width}x{height} scene"
        )
    side = max(1, round(2 * gaze.radius_px))
    x, w = _place(gaze.x, side, width)
    y, h = _place(gaze.y, side, height)
    return Rect(x, y, w, h)


def _clip(det: Detection, rect: Rect) -> Detection | None:
    x0 = max(det.bbox.x, rect.x)
    y0 = max(det.bbox.y, rect.y)
    x1 = min(det.bbox.x + det.bbox.width, rect.x + rect.width)
    y1 = min(det.bbox.y + det.bbox.height, rect.y + rect.height)
    if x1 <= x0 or y1 <= y0:
        return None
    return Detection(det.category, Rect(x0 - rect.x, y0 - rect.y, x1 - x0, y1 - y0), det.confidence)


def crop_image(image: ImageRef, rect: Rect, uri: str | None = None) -> ImageRef:
    """Sub-image descriptor; annotations are clipped and shifted into crop coordinates.

    A detection is kept when its centre falls inside the crop.
    """
    kept = []
    for det in image.annotations:
        cx, cy = det.bbox.center
        if not rect.contains_point(cx, cy):
            continue
        clipped = _clip(det, rect)
        if clipped is not None:
            kept.append(clipped)
    r = rect
    return ImageRef(
        uri if uri is not None else f"{image.uri}#crop={r.x},{r.y},{r.width},{r.height}",
        rect.width,
        rect.height,
        tuple(kept),
    )


def extract_roi(frame: FrameRecord, gaze: GazeSample) -> RoiCrop:
    rect = roi_rect(frame.width, frame.height, gaze)
    image = ImageRef(frame.image_ref, frame.width, frame.height, frame.detections)
    return RoiCrop(frame.frame_id, rect, crop_image(image, rect))
