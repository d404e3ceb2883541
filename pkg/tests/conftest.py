from __future__ import annotations

from pathlib import Path

import pytest

from hux.scene import Detection, FrameRecord, Rect

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"


def det(category: str, x: int, y: int, w: int = 40, h: int = 40, conf: float = 0.9) -> Detection:
    return Detection(category, Rect(x, y, w, h), conf)


def frame(fid: int, ts: int, *dets: Detection, width: int = 640, height: int = 480) -> FrameRecord:
    return FrameRecord(fid, ts, f"img/{fid}.png", tuple(dets), width, height)


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
