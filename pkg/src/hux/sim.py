"""Scenario-driven, virtual-clock simulation of the whole pipeline.

A run merges three timed streams: frames, caption completions, and the
release of the talk key that ends each utterance. Nothing sleeps; time only
moves when the next item is taken off the queue. At equal timestamps the
order is caption completion, then frame, then utterance, so an utterance
released on a frame's timestamp already sees that frame.

Scenario files are UTF-8 JSON Lines. The first record is the header; blank
lines and lines starting with ``#`` are skipped::

    {"type": "header", "scenario_version": 1, "name": "fruit",
     "frame_rate_hz": 2, "profile_ref": "fruit", "policy": "hybrid",
     "caption_latency_ms": 700, "frame_width": 1280, "frame_height": 720}
    {"type": "frame", "frame_id": 1, "timestamp_ms": 0, "image_ref": "f1.png",
     "detections": [{"category": "apple", "bbox": [10, 20, 80, 80], "confidence": 0.9}]}
    {"type": "gaze", "timestamp_ms": 0, "x": 50.0, "y": 60.0, "radius_px": 120}
    {"type": "utterance", "press_ts_ms": 900, "release_ts_ms": 1500, "text": "..."}

Header fields other than ``type``, ``scenario_version`` and ``name`` are
optional. Records of each type may appear in any order; each stream is
sorted by time on load.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, NamedTuple

from hux.context import (
    NO_SCENE_CAPTION,
    Backend,
    BackendProfile,
    HistoryTurn,
    LiouStack,
    PromptBundle,
    assemble_prompt,
    make_backend,
)
from hux.eoi import DISPATCH, POLICIES, CaptionScheduler, EventRecord, classify_event, replay_counts
from hux.errors import HuxError, NoFrame, NoGazeData, OutOfScene, ScenarioInvalid, ScriptMismatch
from hux.gaze import DEFAULT_RADIUS_PX, GazeSample, extract_roi, snapshot_at_release
from hux.profiles import TaskProfile
from hux.scene import (
    DEFAULT_FRAME_HEIGHT,
    DEFAULT_FRAME_WIDTH,
    Detection,
    FrameRecord,
    Rect,
    SceneState,
    counts_timeline,
    frame_image,
    ingest_frame,
)
from hux.tasks import ToolRegistry, apply_tool, default_registry, select_tool

SCENARIO_VERSION = 1

_CAPTION_DONE, _FRAME, _UTTERANCE = 0, 1, 2


class Utterance(NamedTuple):
    press_ts_ms: int
    release_ts_ms: int
    text: str


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    frames: tuple[FrameRecord, ...] = ()
    gaze_trace: tuple[GazeSample, ...] = ()
    utterances: tuple[Utterance, ...] = ()
    frame_rate_hz: float = 10.0
    profile_ref: str = "fruit"
    policy: str | None = None
    caption_latency_ms: int | None = None
    profile: TaskProfile | None = None  # inline override of profile_ref

    def resolve_profile(self, registry: ToolRegistry | None = None) -> TaskProfile:
        if self.profile is not None:
            return self.profile
        return (registry or default_registry()).profile(self.profile_ref)


# --- scenario files ----------------------------------------------------------


def _req(rec: dict, key: str, kind: type | tuple[type, ...], line: int) -> Any:
    if key not in rec:
        raise ScenarioInvalid(f"{rec.get('type', 'record')} is missing field {key!r}", line)
    value = rec[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ScenarioInvalid(f"field {key!r} has wrong type ({type(value).__name__})", line)
    return value


def parse_scenario(text: str) -> ScenarioScript:
    header: dict | None = None
    frames: list[tuple[int, FrameRecord]] = []
    gaze: list[GazeSample] = []
    utterances: list[Utterance] = []
    num = (int, float)

    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rec = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ScenarioInvalid(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise ScenarioInvalid("record must be a JSON object", lineno)
        rtype = rec.get("type")
        if header is None:
            if rtype != "header":
                raise ScenarioInvalid("first record must be the header", lineno)
            version = _req(rec, "scenario_version", int, lineno)
            if version != SCENARIO_VERSION:
                raise ScenarioInvalid(f"unsupported scenario_version {version}", lineno)
            _req(rec, "name", str, lineno)
            policy = rec.get("policy")
            if policy is not None and policy not in POLICIES:
                raise ScenarioInvalid(f"unknown policy {policy!r}", lineno)
            latency = rec.get("caption_latency_ms")
            if latency is not None and (not isinstance(latency, int) or latency < 0):
                raise ScenarioInvalid("caption_latency_ms must be a non-negative integer", lineno)
            header = rec
            continue
        try:
            if rtype == "frame":
                fid = _req(rec, "frame_id", int, lineno)
                if "timestamp_ms" in rec:
                    ts = _req(rec, "timestamp_ms", int, lineno)
                else:
                    rate = float(header.get("frame_rate_hz", 10.0))
                    ts = round((fid - 1) * 1000 / rate)
                dets = []
                for d in rec.get("detections", []):
                    bbox = d.get("bbox")
                    if not isinstance(bbox, list) or len(bbox) != 4 or not all(
                        isinstance(v, int) and not isinstance(v, bool) for v in bbox
                    ):
                        raise ScenarioInvalid("bbox must be four integers [x, y, w, h]", lineno)
                    dets.append(
                        Detection(str(d["category"]), Rect(*bbox), float(d.get("confidence", 1.0)))
                    )
                frame = FrameRecord(
                    frame_id=fid,
                    timestamp_ms=ts,
                    image_ref=str(rec.get("image_ref", f"{header['name']}/frame_{fid:05d}")),
                    detections=tuple(dets),
                    width=int(rec.get("width", header.get("frame_width", DEFAULT_FRAME_WIDTH))),
                    height=int(rec.get("height", header.get("frame_height", DEFAULT_FRAME_HEIGHT))),
                )
                frames.append((lineno, frame))
            elif rtype == "gaze":
                gaze.append(
                    GazeSample(
                        x=float(_req(rec, "x", num, lineno)),
                        y=float(_req(rec, "y", num, lineno)),
                        radius_px=float(
                            rec.get("radius_px", header.get("gaze_radius_px", DEFAULT_RADIUS_PX))
                        ),
                        timestamp_ms=_req(rec, "timestamp_ms", int, lineno),
                    )
                )
            elif rtype == "utterance":
                press = _req(rec, "press_ts_ms", int, lineno)
                release = _req(rec, "release_ts_ms", int, lineno)
                text_ = _req(rec, "text", str, lineno)
                if release < press:
                    raise ScenarioInvalid("release_ts_ms precedes press_ts_ms", lineno)
                if not text_.strip():
                    raise ScenarioInvalid("utterance text is empty", lineno)
                utterances.append(Utterance(press, release, text_))
            elif rtype == "header":
                raise ScenarioInvalid("duplicate header", lineno)
            else:
                raise ScenarioInvalid(f"unknown record type {rtype!r}", lineno)
        except ScenarioInvalid:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ScenarioInvalid(f"{type(exc).__name__}: {exc}", lineno) from None

    if header is None:
        raise ScenarioInvalid("scenario has no header record", 1)

    frames.sort(key=lambda lf: lf[1].frame_id)
    for (_, prev), (lineno, cur) in zip(frames, frames[1:]):
        if cur.frame_id == prev.frame_id:
            raise ScenarioInvalid(f"duplicate frame_id {cur.frame_id}", lineno)
        if cur.timestamp_ms < prev.timestamp_ms:
            raise ScenarioInvalid(
                f"frame {cur.frame_id} timestamp goes back in time relative to frame {prev.frame_id}",
                lineno,
            )
    gaze.sort(key=lambda g: g.timestamp_ms)
    utterances.sort(key=lambda u: (u.release_ts_ms, u.press_ts_ms))

    return ScenarioScript(
        name=header["name"],
        frames=tuple(f for _, f in frames),
        gaze_trace=tuple(gaze),
        utterances=tuple(utterances),
        frame_rate_hz=float(header.get("frame_rate_hz", 10.0)),
        profile_ref=str(header.get("profile_ref", "fruit")),
        policy=header.get("policy"),
        caption_latency_ms=header.get("caption_latency_ms"),
    )


def load_scenario(path: str | Path) -> ScenarioScript:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise ScenarioInvalid(f"{path} is not UTF-8") from None
    return parse_scenario(text)


def dump_scenario(script: ScenarioScript) -> str:
    header: dict[str, Any] = {
        "type": "header",
        "scenario_version": SCENARIO_VERSION,
        "name": script.name,
        "frame_rate_hz": script.frame_rate_hz,
        "profile_ref": script.profile_ref,
    }
    if script.policy is not None:
        header["policy"] = script.policy
    if script.caption_latency_ms is not None:
        header["caption_latency_ms"] = script.caption_latency_ms
    lines = [json.dumps(header)]
    for f in script.frames:
        lines.append(
            json.dumps(
                {
                    "type": "frame",
                    "frame_id": f.frame_id,
                    "timestamp_ms": f.timestamp_ms,
                    "image_ref": f.image_ref,
                    "width": f.width,
                    "height": f.height,
                    "detections": [
                        {"category": d.category, "bbox": d.bbox.as_list(), "confidence": d.confidence}
                        for d in f.detections
                    ],
                }
            )
        )
    for g in script.gaze_trace:
        lines.append(
            json.dumps(
                {"type": "gaze", "timestamp_ms": g.timestamp_ms, "x": g.x, "y": g.y, "radius_px": g.radius_px}
            )
        )
    for u in script.utterances:
        lines.append(
            json.dumps(
                {"type": "utterance", "press_ts_ms": u.press_ts_ms, "release_ts_ms": u.release_ts_ms, "text": u.text}
            )
        )
    return "\n".join(lines) + "\n"


# --- oracle and scoring --------------------------------------------------------


class TrueEvent(NamedTuple):
    frame_id: int
    timestamp_ms: int
    changes: dict[str, tuple[int, int]]


@dataclass(frozen=True)
class OracleResult:
    scenario: str
    true_events: tuple[TrueEvent, ...]
    counts_timeline: tuple[tuple[int, dict[str, int]], ...]


def oracle(script: ScenarioScript, registry: ToolRegistry | None = None) -> OracleResult:
    """Ground truth by exhaustive recount and adjacent-frame diff.

    The stream starts from an empty scene, so objects visible in the first
    frame count as appearing there.
    """
    profile = script.resolve_profile(registry)
    timeline = counts_timeline(script.frames, profile)
    events = []
    prev: dict[str, int] = {}
    for frame, (_, counts) in zip(script.frames, timeline):
        changes = {
            c: (prev.get(c, 0), counts.get(c, 0))
            for c in sorted(set(prev) | set(counts))
            if prev.get(c, 0) != counts.get(c, 0)
        }
        if changes:
            events.append(TrueEvent(frame.frame_id, frame.timestamp_ms, changes))
        prev = counts
    return OracleResult(script.name, tuple(events), tuple(timeline))


@dataclass(frozen=True)
class Metrics:
    events_true: int = 0
    events_detected: int = 0
    captions_issued: int = 0
    count_only_events: int = 0
    liou_dropped: int = 0
    oracle_count_mismatches: int = 0
    event_recall: float = 1.0

    def to_dict(self) -> dict:
        return {
            "events_true": self.events_true,
            "events_detected": self.events_detected,
            "captions_issued": self.captions_issued,
            "count_only_events": self.count_only_events,
            "liou_dropped": self.liou_dropped,
            "oracle_count_mismatches": self.oracle_count_mismatches,
            "event_recall": self.event_recall,
        }


@dataclass(frozen=True)
class Turn:
    index: int
    press_ts_ms: int
    release_ts_ms: int
    utterance: str
    prompt: str
    answer: str
    roi_status: str
    roi_rect: tuple[int, int, int, int] | None = None
    roi_frame_id: int | None = None
    scene_frame_id: int | None = None
    tool: str | None = None
    action_input: dict[str, str] | None = None
    tool_caption: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "press_ts_ms": self.press_ts_ms,
            "release_ts_ms": self.release_ts_ms,
            "utterance": self.utterance,
            "prompt": self.prompt,
            "answer": self.answer,
            "roi_status": self.roi_status,
            "roi_rect": list(self.roi_rect) if self.roi_rect else None,
            "roi_frame_id": self.roi_frame_id,
            "scene_frame_id": self.scene_frame_id,
            "tool": self.tool,
            "action_input": self.action_input,
            "tool_caption": self.tool_caption,
        }


@dataclass
class RunReport:
    scenario: str
    policy: str
    caption_latency_ms: int
    profile: str
    transcript: list[Turn] = field(default_factory=list)
    event_log: list[EventRecord] = field(default_factory=list)
    metrics: Metrics = field(default_factory=Metrics)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "policy": self.policy,
            "caption_latency_ms": self.caption_latency_ms,
            "profile": self.profile,
            "metrics": self.metrics.to_dict(),
            "event_log": [e.to_dict() for e in self.event_log],
            "transcript": [t.to_dict() for t in self.transcript],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def transcript_text(self) -> str:
        m = self.metrics
        out = [
            f"scenario: {self.scenario}",
            f"policy: {self.policy}  caption latency: {self.caption_latency_ms} ms  profile: {self.profile}",
            f"events: {m.events_detected} logged / {m.events_true} true, "
            f"{m.captions_issued} captioned, {m.count_only_events} count-only, "
            f"{m.liou_dropped} scene captions dropped, {m.oracle_count_mismatches} count mismatches",
            "",
        ]
        for t in self.transcript:
            out.append(f"--- turn {t.index} @ {t.release_ts_ms} ms (roi: {t.roi_status})")
            if t.tool:
                out.append(f"tool: {t.tool} {json.dumps(t.action_input, sort_keys=True)}")
                out.append(f"tool observation: {t.tool_caption}")
            out.append(t.prompt)
            out.append(f"answer: {t.answer}")
            out.append("")
        return "\n".join(out)


def score(report: RunReport, oracle_out: OracleResult) -> Metrics:
    """Compare a run's event log with ground truth.

    Mismatches are counted at every true-event frame and every logged frame,
    comparing the step function replayed from the log (non-strict) with the
    recount.
    """
    if report.scenario != oracle_out.scenario:
        raise ScriptMismatch(f"report is for {report.scenario!r}, oracle for {oracle_out.scenario!r}")
    truth = {fid: counts for fid, counts in oracle_out.counts_timeline}
    logged_ids = [e.frame_id for e in report.event_log]
    unknown = [fid for fid in logged_ids if fid not in truth]
    if unknown:
        raise ScriptMismatch(f"event log references frames absent from the script: {unknown[:5]}")

    replay = replay_counts(report.event_log, strict=False)
    true_ids = {e.frame_id for e in oracle_out.true_events}
    check = sorted(true_ids | set(logged_ids))
    mismatches = 0
    pos = -1
    for fid in check:
        while pos + 1 < len(replay) and replay[pos + 1][0] <= fid:
            pos += 1
        reconstructed = replay[pos][2] if pos >= 0 else {}
        if reconstructed != truth[fid]:
            mismatches += 1

    hit = len(true_ids & set(logged_ids))
    return Metrics(
        events_true=len(true_ids),
        events_detected=len(report.event_log),
        captions_issued=sum(1 for e in report.event_log if e.caption is not None),
        count_only_events=sum(1 for e in report.event_log if e.caption_status == "count_only"),
        liou_dropped=report.metrics.liou_dropped,
        oracle_count_mismatches=mismatches,
        event_recall=hit / len(true_ids) if true_ids else 1.0,
    )


# --- the run -----------------------------------------------------------------


@dataclass
class SimConfig:
    """Defaults that apply when the scenario header leaves a value unset."""

    backend: Backend | BackendProfile = field(default_factory=BackendProfile)
    registry: ToolRegistry = field(default_factory=default_registry)
    policy: str = "hybrid"
    caption_latency_ms: int | None = None
    disable_behavior: bool = False


def _annotate(exc: HuxError, ts: int, what: str) -> HuxError:
    exc.timestamp_ms = ts  # type: ignore[attr-defined]
    exc.args = (f"at t={ts} ms ({what}): {exc}",)
    return exc


def run_scenario(script: ScenarioScript, config: SimConfig | None = None) -> RunReport:
    config = config or SimConfig()
    registry = config.registry
    profile = script.resolve_profile(registry)
    if config.disable_behavior:
        profile = profile.without_behavior()
    backend_profile = config.backend if isinstance(config.backend, BackendProfile) else None
    backend = make_backend(config.backend) if backend_profile else config.backend

    policy = script.policy or config.policy
    latency = script.caption_latency_ms
    if latency is None:
        latency = config.caption_latency_ms
    if latency is None:
        latency = backend_profile.caption_latency_ms if backend_profile else 0

    scheduler = CaptionScheduler(policy, latency)
    liou = LiouStack()
    state = SceneState()
    seen: list[FrameRecord] = []
    by_id: dict[int, FrameRecord] = {}
    history: list[HistoryTurn] = []
    transcript: list[Turn] = []
    active_task: str | None = None

    seq = itertools.count()
    queue: list[tuple[int, int, int, Any]] = []
    for frame in script.frames:
        heapq.heappush(queue, (frame.timestamp_ms, _FRAME, next(seq), frame))
    for utt in script.utterances:
        heapq.heappush(queue, (utt.release_ts_ms, _UTTERANCE, next(seq), utt))

    def dispatch(event: EventRecord, now: int) -> None:
        image = frame_image(by_id[event.frame_id], profile)
        text = backend.caption(image, profile.caption_instruction)
        heapq.heappush(queue, (now + latency, _CAPTION_DONE, next(seq), (event, text)))

    def take_turn(utt: Utterance, now: int) -> None:
        nonlocal active_task
        frame = seen[-1] if seen else None
        roi_status, roi_caption, rect, roi_frame = "ok", None, None, None
        try:
            gaze, frame = snapshot_at_release(script.gaze_trace, seen, now)
            roi = extract_roi(frame, gaze)
            roi_caption = backend.caption(roi.image_ref, profile.caption_instruction)
            rect, roi_frame = (roi.rect.x, roi.rect.y, roi.rect.width, roi.rect.height), frame.frame_id
        except (NoGazeData, NoFrame, OutOfScene) as exc:
            roi_status = type(exc).__name__

        entry = liou.read()
        scene_caption = entry.caption if entry else NO_SCENE_CAPTION

        tool_id, action_input, tool_caption = None, None, None
        selected = select_tool(utt.text, active_task, registry)
        if selected is not None:
            tool_id, action_input = selected
            if frame is None:
                raise NoFrame(f"tool {tool_id} needs a frame but none has arrived")
            _, tool_caption = apply_tool(registry[tool_id], frame, action_input, backend)
            history.append(HistoryTurn("tool", tool_caption))
            active_task = tool_id

        bundle = PromptBundle(scene_caption, utt.text, roi_caption, tuple(history))
        prompt = assemble_prompt(bundle)
        answer = backend.complete(prompt, tuple(history))
        transcript.append(
            Turn(
                index=len(transcript) + 1,
                press_ts_ms=utt.press_ts_ms,
                release_ts_ms=utt.release_ts_ms,
                utterance=utt.text,
                prompt=prompt,
                answer=answer,
                roi_status=roi_status,
                roi_rect=rect,
                roi_frame_id=roi_frame,
                scene_frame_id=entry.frame_id if entry else None,
                tool=tool_id,
                action_input=action_input,
                tool_caption=tool_caption,
            )
        )
        history.append(HistoryTurn("user", utt.text))
        history.append(HistoryTurn("assistant", answer))

    while queue:
        now, kind, _, payload = heapq.heappop(queue)
        try:
            if kind == _CAPTION_DONE:
                event, text = payload
                scheduler.complete(event, text)
                liou.push(text, event.frame_id, event.timestamp_ms)
                nxt = scheduler.release(now)
                if nxt is not None:
                    dispatch(nxt, now)
            elif kind == _FRAME:
                state, delta = ingest_frame(state, payload, profile)
                seen.append(payload)
                by_id[payload.frame_id] = payload
                event = classify_event(delta, profile, image_ref=payload.image_ref)
                if event is not None and scheduler.submit(event, now) == DISPATCH:
                    dispatch(event, now)
            else:
                take_turn(payload, now)
        except HuxError as exc:
            what = {_CAPTION_DONE: "caption", _FRAME: "frame", _UTTERANCE: "utterance"}[kind]
            raise _annotate(exc, now, what)

    report = RunReport(
        scenario=script.name,
        policy=policy,
        caption_latency_ms=latency,
        profile=profile.task_id,
        transcript=transcript,
        event_log=scheduler.log,
        metrics=Metrics(liou_dropped=liou.dropped_count),
    )
    report.metrics = score(report, oracle(replace(script, profile=profile)))
    return report
