"""Random scenario generation for property tests and the acceptance suite."""

from __future__ import annotations

import random

from hux.gaze import GazeSample
from hux.scene import Detection, FrameRecord, Rect
from hux.sim import ScenarioScript, Utterance

FRUITS = ("apple", "banana", "orange")
DISTRACTORS = ("cup", "phone")


def _random_box(rng: random.Random, width: int, height: int) -> Rect:
    w = rng.randint(20, width // 4)
    h = rng.randint(20, height // 4)
    return Rect(rng.randint(0, width - w), rng.randint(0, height - h), w, h)


def _jitter(rng: random.Random, box: Rect, width: int, height: int, step: int) -> Rect:
    x = min(max(box.x + rng.randint(-step, step), 0), width - box.width)
    y = min(max(box.y + rng.randint(-step, step), 0), height - box.height)
    return Rect(x, y, box.width, box.height)


def random_frames(
    rng: random.Random,
    n_frames: int,
    *,
    categories: tuple[str, ...] = FRUITS,
    interval_ms: int = 100,
    width: int = 640,
    height: int = 480,
    p_change: float = 0.3,
    max_objects: int = 6,
    jitter_px: int = 6,
) -> list[FrameRecord]:
    """Frames whose objects come, go and drift; includes distractors and weak detections."""
    objects: list[tuple[str, Rect]] = [
        (rng.choice(categories), _random_box(rng, width, height)) for _ in range(rng.randint(0, 3))
    ]
    frames = []
    ts = 0
    for fid in range(1, n_frames + 1):
        if rng.random() < p_change:
            if objects and (len(objects) >= max_objects or rng.random() < 0.5):
                objects.pop(rng.randrange(len(objects)))
            else:
                objects.append((rng.choice(categories), _random_box(rng, width, height)))
        objects = [(c, _jitter(rng, b, width, height, jitter_px)) for c, b in objects]
        dets = [Detection(c, b, round(rng.uniform(0.6, 1.0), 3)) for c, b in objects]
        if rng.random() < 0.2:
            dets.append(Detection(rng.choice(DISTRACTORS), _random_box(rng, width, height), 0.9))
        if rng.random() < 0.2:
            # below the default confidence floor
            dets.append(Detection(rng.choice(categories), _random_box(rng, width, height), 0.2))
        rng.shuffle(dets)
        frames.append(FrameRecord(fid, ts, f"synthetic/frame_{fid:05d}", tuple(dets), width, height))
        # occasional zero gap keeps equal timestamps in play
        ts += 0 if rng.random() < 0.05 else interval_ms
    return frames


def random_script(
    rng: random.Random,
    n_frames: int,
    *,
    name: str = "synthetic",
    policy: str = "hybrid",
    caption_latency_ms: int = 0,
    n_utterances: int = 0,
    interval_ms: int = 100,
) -> ScenarioScript:
    frames = random_frames(rng, n_frames, interval_ms=interval_ms)
    end = frames[-1].timestamp_ms if frames else 0
    width = frames[0].width if frames else 640
    height = frames[0].height if frames else 480
    gaze = tuple(
        GazeSample(rng.uniform(-50, width + 50), rng.uniform(-50, height + 50), 80.0, t)
        for t in range(0, end + 1, max(interval_ms, 1) * 2)
    )
    utterances = []
    for _ in range(n_utterances):
        press = rng.randint(0, max(end, 1))
        utterances.append(Utterance(press, press + rng.randint(0, 800), "What are we looking at?"))
    utterances.sort(key=lambda u: (u.release_ts_ms, u.press_ts_ms))
    return ScenarioScript(
        name=name,
        frames=tuple(frames),
        gaze_trace=gaze,
        utterances=tuple(utterances),
        frame_rate_hz=1000 / interval_ms,
        profile_ref="fruit",
        policy=policy,
        caption_latency_ms=caption_latency_ms,
    )
