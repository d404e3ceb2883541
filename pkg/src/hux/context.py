"""Scene-caption register, prompt template and captioner/LLM backends.

The mock backend is a pure function of its inputs so whole runs replay
byte-for-byte. The remote backend speaks the chat-completions wire format::

    POST <endpoint>
    {"model": <model_name>, "messages": [{"role": ..., "content": ...}, ...]}

and returns ``choices[0].message.content``. Images travel as ``image_url``
content parts holding a base64 data URL. The bearer token is read from
``HUX_BACKEND_TOKEN``.
"""

from __future__ import annotations

import base64
import io
import logging
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, NamedTuple, Protocol, Sequence

import httpx

from hux.errors import BackendUnavailable, EmptyUtterance, UnresolvableImage
from hux.scene import ImageRef, tally
from hux.text import extract_keywords

logger = logging.getLogger(__name__)

TOKEN_ENV = "HUX_BACKEND_TOKEN"

HEADER_LINE = "Based on the previous responses and new multi-modal information, answer the next question:"
SCENE_PREFIX = "General detailed description of user environment: "
GAZE_PREFIX = "User is specifically gazing at: "
QUERY_PREFIX = "Human's speech query: "
ANSWER_LINE = "Give only a relevant and precise answer to the Human's speech query:"

NO_SCENE_CAPTION = "No scene description is available yet."


# --- LIOU register -----------------------------------------------------------


class LiouEntry(NamedTuple):
    caption: str
    frame_id: int
    timestamp_ms: int


class LiouStack:
    """Last-In-Only-Used caption slot.

    Only the newest caption is ever read. Overwriting a caption nobody read
    counts as a drop, so ``dropped_count + fresh_reads == pushes`` once the
    last push has been read.
    """

    def __init__(self) -> None:
        self.top: LiouEntry | None = None
        self.dropped_count = 0
        self.fresh_reads = 0
        self.pushes = 0
        self._unread = False

    def push(self, caption: str, frame_id: int, timestamp_ms: int) -> "LiouStack":
        if self.top is not None and timestamp_ms < self.top.timestamp_ms:
            raise ValueError(
                f"caption timestamp {timestamp_ms} precedes current top {self.top.timestamp_ms}"
            )
        if self._unread:
            self.dropped_count += 1
        self.top = LiouEntry(caption, frame_id, timestamp_ms)
        self._unread = True
        self.pushes += 1
        return self

    def read(self) -> LiouEntry | None:
        if self._unread:
            self.fresh_reads += 1
            self._unread = False
        return self.top


# --- prompt ------------------------------------------------------------------


class HistoryTurn(NamedTuple):
    speaker: str  # "user", "assistant" or "tool"
    text: str


@dataclass(frozen=True)
class PromptBundle:
    scene_caption: str
    utterance: str
    roi_caption: str | None = None
    history: tuple[HistoryTurn, ...] = ()


def assemble_prompt(bundle: PromptBundle) -> str:
    """Render the fixed multimodal template; the gaze line is dropped without an ROI caption."""
    if not bundle.utterance.strip():
        raise EmptyUtterance("utterance is empty")
    lines = [HEADER_LINE, SCENE_PREFIX + bundle.scene_caption]
    if bundle.roi_caption is not None:
        lines.append(GAZE_PREFIX + bundle.roi_caption)
    lines.append(QUERY_PREFIX + bundle.utterance)
    lines.append(ANSWER_LINE)
    return "\n".join(lines)


def parse_prompt(prompt: str) -> dict[str, str]:
    """Pull the filled slots back out of an assembled prompt."""
    slots: dict[str, str] = {}
    for line in prompt.split("\n"):
        for key, prefix in (("scene", SCENE_PREFIX), ("gaze", GAZE_PREFIX), ("query", QUERY_PREFIX)):
            if line.startswith(prefix) and key not in slots:
                slots[key] = line[len(prefix) :]
    return slots


# --- backends ----------------------------------------------------------------


@dataclass(frozen=True)
class BackendProfile:
    kind: Literal["mock", "remote"] = "mock"
    endpoint: str | None = None
    model_name: str | None = None
    caption_latency_ms: int = 0
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if (self.kind == "remote") != (self.endpoint is not None):
            raise ValueError("endpoint must be set exactly when kind is 'remote'")
        if self.caption_latency_ms < 0:
            raise ValueError("caption_latency_ms must be >= 0")


class Backend(Protocol):
    def caption(self, image: ImageRef, instruction: str) -> str: ...

    def complete(self, prompt: str, history: Sequence[HistoryTurn]) -> str: ...

    def keywords(self, texts: Sequence[str]) -> list[str]: ...


def _singular(word: str) -> str:
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("s") and not word.endswith("ss") and len(word) > 3:
        return word[:-1]
    return word


# Generic words a user may say instead of whatever a task tool reported.
_ISSUE_WORDS = frozenset({"problems", "issues", "faults", "defects", "errors"})


class MockBackend:
    """Deterministic stand-in for the captioner and the language model.

    ``caption`` ignores the instruction and describes the annotations riding
    on the image. ``complete`` answers from the slots of the prompt and the
    assistant/tool history; it never invents facts.
    """

    def caption(self, image: ImageRef, instruction: str) -> str:
        if image.labels is not None:
            return _describe_labels(image)
        counts = tally(image.annotations)
        if not counts:
            return "A scene containing nothing of interest"
        parts = [f"{n} {cat}" for cat, n in sorted(counts.items())]
        return "A scene containing " + ", ".join(parts)

    def complete(self, prompt: str, history: Sequence[HistoryTurn]) -> str:
        if not prompt.strip():
            raise ValueError("prompt is empty")
        slots = parse_prompt(prompt)
        query = slots.get("query", "").lower()
        scene = slots.get("scene", "")
        gaze = slots.get("gaze")

        if "looking at" in query and gaze:
            return f"You are looking at {gaze}."
        if history and history[-1].speaker == "tool":
            return history[-1].text

        m = re.search(r"how many ([a-z][a-z\-]*)", query)
        if m:
            noun = m.group(1)
            stem = _singular(noun)
            known = [scene] + [t.text for t in history if t.speaker != "user"]
            pattern = re.compile(rf"\b{re.escape(stem)}", re.IGNORECASE)
            for text in reversed(known):
                if pattern.search(text):
                    return f"Based on what I have seen: {text}"
            tool_notes = [t.text for t in history if t.speaker == "tool"]
            if noun in _ISSUE_WORDS and tool_notes:
                return tool_notes[-1]
            return f"None. There is no mention of {noun} in our conversation so far."
        return f"Based on the current scene: {scene}."

    def keywords(self, texts: Sequence[str]) -> list[str]:
        return extract_keywords(texts)


def _describe_labels(image: ImageRef) -> str:
    subject = image.subject or "labeled objects"
    labels = image.labels or ()
    if not labels:
        return f"no {subject} found"
    noun = subject[:-1] if len(labels) == 1 and subject.endswith("s") else subject
    entries = [f"{i}. {lb.category} at the {lb.location}" for i, lb in enumerate(labels, 1)]
    return f"{len(labels)} {noun} labeled in the image: " + "; ".join(entries) + "."


_CROP_RE = re.compile(r"#crop=(\d+),(\d+),(\d+),(\d+)$")


def _image_data_url(image: ImageRef) -> str:
    """Load the referenced file, apply crop/label overlays, return a PNG data URL."""
    from PIL import Image, ImageDraw

    uri = image.uri
    crop = _CROP_RE.search(uri)
    path = Path(uri[: crop.start()] if crop else uri)
    if not uri or not path.is_file():
        raise UnresolvableImage(f"cannot resolve image {uri!r}")
    try:
        img = Image.open(path).convert("RGB")
    except OSError as exc:
        raise UnresolvableImage(f"cannot decode image {uri!r}: {exc}") from exc
    if crop:
        x, y, w, h = (int(v) for v in crop.groups())
        img = img.crop((x, y, x + w, y + h))
    if image.labels:
        draw = ImageDraw.Draw(img)
        for lb in image.labels:
            b = lb.bbox
            draw.rectangle((b.x, b.y, b.x + b.width, b.y + b.height), outline=(255, 0, 0), width=3)
            draw.text((b.x, max(0, b.y - 12)), lb.category, fill=(255, 255, 255))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


_ROLE = {"user": "user", "assistant": "assistant", "tool": "user"}


class RemoteBackend:
    """Chat-completions client with bounded retries.

    Retries connection errors, timeouts, 429 and 5xx with exponential backoff.
    Setting ``cancel`` aborts before the next attempt.
    """

    def __init__(
        self,
        profile: BackendProfile,
        *,
        transport: httpx.BaseTransport | None = None,
        cancel: threading.Event | None = None,
    ):
        if profile.kind != "remote" or not profile.endpoint:
            raise ValueError("RemoteBackend needs a remote profile with an endpoint")
        self.profile = profile
        self.cancel = cancel or threading.Event()
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            timeout=profile.timeout_s, headers=headers, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, messages: list[dict]) -> str:
        payload = {"model": self.profile.model_name, "messages": messages}
        delay = self.profile.backoff_s
        last_error = "no attempt made"
        for attempt in range(self.profile.max_retries + 1):
            if self.cancel.is_set():
                raise BackendUnavailable("request cancelled")
            try:
                resp = self._client.post(self.profile.endpoint, json=payload)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise BackendUnavailable(f"malformed response: {exc}") from exc
                    if not isinstance(content, str):
                        raise BackendUnavailable("response content is not text")
                    return content
            if attempt < self.profile.max_retries:
                logger.warning("backend attempt %d failed (%s), retrying", attempt + 1, last_error)
                if self.cancel.wait(delay):
                    raise BackendUnavailable("request cancelled")
                delay *= 2
        raise BackendUnavailable(f"backend gave up after retries: {last_error}")

    def caption(self, image: ImageRef, instruction: str) -> str:
        content = [
            {"type": "text", "text": instruction},
            {"type": "image_url", "image_url": {"url": _image_data_url(image)}},
        ]
        return self._post([{"role": "user", "content": content}])

    def complete(self, prompt: str, history: Sequence[HistoryTurn]) -> str:
        messages = []
        for turn in history:
            text = f"Tool observation: {turn.text}" if turn.speaker == "tool" else turn.text
            messages.append({"role": _ROLE.get(turn.speaker, "user"), "content": text})
        messages.append({"role": "user", "content": prompt})
        return self._post(messages)

    def keywords(self, texts: Sequence[str]) -> list[str]:
        prompt = (
            "Generate retrieval keywords, short phrases and other contextual cues a user "
            "might later use to refer to this memory. One per line, no numbering.\n\n"
            + "\n".join(texts)
        )
        raw = self._post([{"role": "user", "content": prompt}])
        out: dict[str, None] = {}
        for line in raw.splitlines():
            cleaned = re.sub(r"^\s*(?:\d+[.)]|[-*])\s*", "", line).strip().strip('"').lower()
            if cleaned:
                out.setdefault(cleaned, None)
        return list(out)


def make_backend(profile: BackendProfile, **kwargs) -> Backend:
    if profile.kind == "mock":
        return MockBackend()
    return RemoteBackend(profile, **kwargs)


def _resolve(backend: Backend | BackendProfile) -> Backend:
    return make_backend(backend) if isinstance(backend, BackendProfile) else backend


def caption(backend: Backend | BackendProfile, image: ImageRef, instruction: str) -> str:
    return _resolve(backend).caption(image, instruction)


def complete(
    backend: Backend | BackendProfile, prompt: str, history: Sequence[HistoryTurn] = ()
) -> str:
    if not prompt.strip():
        raise ValueError("prompt is empty")
    return _resolve(backend).complete(prompt, history)
