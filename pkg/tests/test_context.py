from __future__ import annotations

import json
import threading

import httpx
import pytest

from hux.context import (
    BackendProfile,
    HistoryTurn,
    LiouStack,
    MockBackend,
    PromptBundle,
    RemoteBackend,
    assemble_prompt,
    complete,
    parse_prompt,
)
from hux.errors import BackendUnavailable, EmptyUtterance, UnresolvableImage
from hux.scene import Detection, ImageRef, Rect

SCENE = "A workbench with a soldering iron, a green circuit board and two multimeters."
ROI = "A small green circuit board with a blue connector."


def test_prompt_matches_golden(golden_dir):
    prompt = assemble_prompt(PromptBundle(SCENE, "What am I looking at?", ROI))
    assert prompt.encode("utf-8") == (golden_dir / "prompt_with_gaze.txt").read_bytes()


def test_prompt_without_roi_matches_golden(golden_dir):
    prompt = assemble_prompt(PromptBundle(SCENE, "What am I looking at?"))
    assert prompt.encode("utf-8") == (golden_dir / "prompt_without_gaze.txt").read_bytes()
    assert "gazing" not in prompt


def test_empty_utterance():
    with pytest.raises(EmptyUtterance):
        assemble_prompt(PromptBundle(SCENE, "   "))


def test_parse_prompt_roundtrip():
    slots = parse_prompt(assemble_prompt(PromptBundle(SCENE, "hi", ROI)))
    assert slots == {"scene": SCENE, "gaze": ROI, "query": "hi"}


def test_liou_keeps_latest_and_counts_drops():
    s = LiouStack()
    assert s.read() is None
    s.push("a", 1, 0).push("b", 2, 10)
    assert s.read().caption == "b"
    assert s.read().caption == "b"
    s.push("c", 3, 10)
    assert (s.dropped_count, s.fresh_reads, s.pushes) == (1, 1, 3)
    with pytest.raises(ValueError):
        s.push("old", 4, 5)


def _image(*cats: str) -> ImageRef:
    dets = tuple(Detection(c, Rect(0, 0, 1, 1)) for c in cats)
    return ImageRef("x.png", 10, 10, dets)


def test_mock_caption():
    m = MockBackend()
    assert m.caption(_image("banana", "apple", "apple"), "") == "A scene containing 2 apple, 1 banana"
    assert m.caption(_image(), "") == "A scene containing nothing of interest"


def _prompt(query: str, roi: str | None = None) -> str:
    return assemble_prompt(PromptBundle("A scene containing 1 pcb", query, roi))


def test_mock_complete_rules():
    m = MockBackend()
    assert m.complete(_prompt("What am I looking at?", "a pcb"), ()) == "You are looking at a pcb."
    tool = (HistoryTurn("tool", "3 defects found"),)
    assert m.complete(_prompt("Any defects?"), tool) == "3 defects found"
    hist = tool + (HistoryTurn("user", "x"), HistoryTurn("assistant", "3 defects found"))
    assert m.complete(_prompt("How many problems did you see?"), hist) == "3 defects found"
    assert m.complete(_prompt("How many flowers did you see?"), hist) == (
        "None. There is no mention of flowers in our conversation so far."
    )
    assert m.complete(_prompt("How many pcbs are there?"), ()) == (
        "Based on what I have seen: A scene containing 1 pcb"
    )
    with pytest.raises(ValueError):
        complete(m, " ")


def _ok(content: str) -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


REMOTE = BackendProfile(kind="remote", endpoint="http://llm.test/v1/chat/completions", model_name="m", backoff_s=0.0)


def test_remote_sends_history_and_prompt(monkeypatch):
    monkeypatch.setenv("HUX_BACKEND_TOKEN", "secret")
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append((request.headers.get("authorization"), json.loads(request.content)))
        return _ok("fine")

    backend = RemoteBackend(REMOTE, transport=httpx.MockTransport(handler))
    history = (HistoryTurn("user", "q1"), HistoryTurn("assistant", "a1"), HistoryTurn("tool", "obs"))
    assert backend.complete("PROMPT", history) == "fine"
    auth, body = seen[0]
    assert auth == "Bearer secret"
    assert body["model"] == "m"
    assert [m["role"] for m in body["messages"]] == ["user", "assistant", "user", "user"]
    assert body["messages"][2]["content"] == "Tool observation: obs"
    assert body["messages"][-1]["content"] == "PROMPT"


def test_remote_retries_then_succeeds():
    codes = iter([503, 429])

    def handler(request):
        code = next(codes, 200)
        return _ok("done") if code == 200 else httpx.Response(code)

    assert RemoteBackend(REMOTE, transport=httpx.MockTransport(handler)).complete("p", ()) == "done"


def test_remote_gives_up():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("refused")

    with pytest.raises(BackendUnavailable):
        RemoteBackend(REMOTE, transport=httpx.MockTransport(handler)).complete("p", ())
    assert len(calls) == REMOTE.max_retries + 1


def test_remote_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="nope")

    with pytest.raises(BackendUnavailable):
        RemoteBackend(REMOTE, transport=httpx.MockTransport(handler)).complete("p", ())
    assert len(calls) == 1


def test_remote_cancel():
    cancel = threading.Event()
    cancel.set()
    backend = RemoteBackend(REMOTE, transport=httpx.MockTransport(lambda r: _ok("x")), cancel=cancel)
    with pytest.raises(BackendUnavailable, match="cancel"):
        backend.complete("p", ())


def test_remote_caption_sends_cropped_png(tmp_path):
    from PIL import Image

    path = tmp_path / "scene.png"
    Image.new("RGB", (64, 48), (0, 128, 0)).save(path)
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return _ok("green")

    backend = RemoteBackend(REMOTE, transport=httpx.MockTransport(handler))
    image = ImageRef(f"{path}#crop=8,8,16,16", 16, 16)
    assert backend.caption(image, "describe") == "green"
    part = bodies[0]["messages"][0]["content"][1]
    assert part["image_url"]["url"].startswith("data:image/png;base64,")

    with pytest.raises(UnresolvableImage):
        backend.caption(ImageRef(str(tmp_path / "missing.png"), 1, 1), "describe")


def test_remote_keywords_parsed():
    backend = RemoteBackend(REMOTE, transport=httpx.MockTransport(lambda r: _ok('1. Imam\n2) "New engineer"\n- imam\n\n')))
    assert backend.keywords(["x"]) == ["imam", "new engineer"]
