from __future__ import annotations

import pytest

from conftest import det, frame
from hux.errors import RejectedFrame
from hux.profiles import FRUIT_PROFILE
from hux.scene import (
    FrameRecord,
    Rect,
    SceneState,
    counts_timeline,
    frame_image,
    ingest_frame,
    iou,
    relevant_detections,
)


def test_rect_rejects_negative():
    with pytest.raises(ValueError):
        Rect(-1, 0, 10, 10)


def test_iou_values():
    a = Rect(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, Rect(20, 20, 5, 5)) == 0.0
    # 5x10 overlap, union 150
    assert iou(a, Rect(5, 0, 10, 10)) == pytest.approx(50 / 150)


def test_frame_rejects_box_outside():
    with pytest.raises(ValueError):
        FrameRecord(1, 0, "x", (det("apple", 620, 0),), 640, 480)


def test_relevant_detections_filters_category_and_confidence():
    f = frame(1, 0, det("apple", 0, 0), det("cup", 100, 0), det("banana", 200, 0, conf=0.3))
    assert [d.category for d in relevant_detections(f, FRUIT_PROFILE)] == ["apple"]


def test_static_scene_has_no_changes_after_first_frame():
    state = SceneState()
    f1 = frame(1, 0, det("apple", 10, 10))
    f2 = frame(2, 100, det("apple", 10, 10))
    state, d1 = ingest_frame(state, f1, FRUIT_PROFILE)
    assert d1.changed() == {"apple": (0, 1)}
    state, d2 = ingest_frame(state, f2, FRUIT_PROFILE)
    assert d2.changed() == {}
    assert d2.new_track_ids == ()
    assert d2.motions[0].displacement_px == 0.0


def test_disappearance_and_reappearance_gets_new_track():
    state = SceneState()
    state, _ = ingest_frame(state, frame(1, 0, det("orange", 10, 10)), FRUIT_PROFILE)
    state, d = ingest_frame(state, frame(2, 100), FRUIT_PROFILE)
    assert d.changed() == {"orange": (1, 0)}
    assert d.lost_track_ids == (1,)
    state, d = ingest_frame(state, frame(3, 200, det("orange", 10, 10)), FRUIT_PROFILE)
    assert d.new_track_ids == (2,)
    assert d.changed() == {"orange": (0, 1)}


def test_tracking_prefers_highest_iou():
    state = SceneState()
    state, _ = ingest_frame(state, frame(1, 0, det("apple", 0, 0), det("apple", 100, 0)), FRUIT_PROFILE)
    # both detections shifted slightly; listed in reverse order
    state, d = ingest_frame(state, frame(2, 100, det("apple", 102, 0), det("apple", 2, 0)), FRUIT_PROFILE)
    assert d.new_track_ids == ()
    by_id = {t.track_id: t.last_bbox.x for t in state.tracks}
    assert by_id == {1: 2, 2: 102}


def test_category_mismatch_never_matches():
    state = SceneState()
    state, _ = ingest_frame(state, frame(1, 0, det("apple", 0, 0)), FRUIT_PROFILE)
    state, d = ingest_frame(state, frame(2, 100, det("orange", 0, 0)), FRUIT_PROFILE)
    assert d.new_track_ids == (2,)
    assert d.lost_track_ids == (1,)


def test_rejects_non_increasing_frame_id():
    state, _ = ingest_frame(SceneState(), frame(5, 0), FRUIT_PROFILE)
    with pytest.raises(RejectedFrame):
        ingest_frame(state, frame(5, 100), FRUIT_PROFILE)


def test_counts_timeline_is_plain_recount():
    frames = [frame(1, 0, det("apple", 0, 0), det("apple", 50, 0)), frame(2, 100, det("cup", 0, 0))]
    assert counts_timeline(frames, FRUIT_PROFILE) == [(1, {"apple": 2}), (2, {})]


def test_frame_image_profile_filter():
    f = frame(1, 0, det("apple", 0, 0), det("cup", 100, 0))
    assert len(frame_image(f).annotations) == 2
    assert [d.category for d in frame_image(f, FRUIT_PROFILE).annotations] == ["apple"]
