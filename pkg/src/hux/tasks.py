"""Task tools and the rule-based selector that decides when one is used.

A tool wraps a task-specific detector (here: annotations carried by the
frame) and the caption instruction handed to the captioner together with the
labeled image. Registry files are TOML::

    [profiles.pcb_defects]
    ooi_categories = ["mouse_bite", "short"]
    min_confidence = 0.25
    caption_instruction = "check defects use labels."

    [[tools]]
    tool_id = "PCB"
    trigger_terms = ["defect", "defects"]
    profile = "pcb_defects"
    tool_caption_instruction = "check <checkfor> use labels."
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

from hux.context import Backend, BackendProfile, MockBackend, make_backend
from hux.errors import AmbiguousTool, ConfigInvalid, NoAnnotations
from hux.profiles import BUILTIN_PROFILES, PCB_DEFECT_PROFILE, TaskProfile, rule_from_spec
from hux.scene import FrameRecord, ImageRef, OverlayLabel, Rect, relevant_detections
from hux.text import tokenize

_ROWS = ("top", "middle", "bottom")
_COLS = ("left", "center", "right")


@dataclass(frozen=True)
class ToolSpec:
    tool_id: str
    trigger_terms: frozenset[str]
    profile: TaskProfile
    tool_caption_instruction: str = "check <checkfor> use labels."

    def __post_init__(self) -> None:
        terms = frozenset(t.lower() for t in self.trigger_terms)
        if not terms:
            raise ValueError(f"tool {self.tool_id!r} needs at least one trigger term")
        object.__setattr__(self, "trigger_terms", terms)


class ToolRegistry:
    """Tools and profiles by id; treat as read-only once built."""

    def __init__(
        self,
        tools: list[ToolSpec] | tuple[ToolSpec, ...] = (),
        profiles: Mapping[str, TaskProfile] | None = None,
    ):
        self.tools: dict[str, ToolSpec] = {}
        for tool in tools:
            if tool.tool_id in self.tools:
                raise ValueError(f"duplicate tool id {tool.tool_id!r}")
            self.tools[tool.tool_id] = tool
        self.profiles: dict[str, TaskProfile] = dict(profiles or {})
        for tool in self.tools.values():
            self.profiles.setdefault(tool.profile.task_id, tool.profile)

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self.tools

    def __getitem__(self, tool_id: str) -> ToolSpec:
        return self.tools[tool_id]

    def profile(self, task_id: str) -> TaskProfile:
        try:
            return self.profiles[task_id]
        except KeyError:
            raise KeyError(f"unknown task profile {task_id!r}") from None


PCB_TOOL = ToolSpec(
    tool_id="PCB",
    trigger_terms=frozenset({"defect", "defects"}),
    profile=PCB_DEFECT_PROFILE,
)


def default_registry() -> ToolRegistry:
    return ToolRegistry([PCB_TOOL], BUILTIN_PROFILES)


def select_tool(
    utterance: str, active_task: str | None, registry: ToolRegistry
) -> tuple[str, dict[str, str]] | None:
    """Pick the tool whose trigger terms occur in the utterance.

    ``checkfor`` is the first trigger term in utterance order. Several
    matching tools are resolved by ``active_task`` or raise ``AmbiguousTool``.
    """
    tokens = tokenize(utterance)
    token_set = set(tokens)
    matches = sorted(tid for tid, tool in registry.tools.items() if tool.trigger_terms & token_set)
    if not matches:
        return None
    if len(matches) > 1:
        if active_task not in matches:
            raise AmbiguousTool(matches)
        matches = [active_task]
    tool = registry.tools[matches[0]]
    term = next(t for t in tokens if t in tool.trigger_terms)
    return tool.tool_id, {"checkfor": term}


def grid_cell(bbox: Rect, width: int, height: int) -> str:
    """Coarse location of the box centre on a 3x3 grid.

    A centre lying exactly on a cell boundary belongs to the lower-index cell.
    Comparisons are done on doubled integer coordinates, so they are exact.
    """
    col = _cell_index(2 * bbox.x + bbox.width, 2 * width)
    row = _cell_index(2 * bbox.y + bbox.height, 2 * height)
    if row == 1 and col == 1:
        return "center"
    return f"{_ROWS[row]} {_COLS[col]}"


def _cell_index(doubled_center: int, doubled_extent: int) -> int:
    if 3 * doubled_center <= doubled_extent:
        return 0
    if 3 * doubled_center <= 2 * doubled_extent:
        return 1
    return 2


def apply_tool(
    tool: ToolSpec,
    frame: FrameRecord,
    action_input: Mapping[str, str],
    backend: Backend | BackendProfile | None = None,
) -> tuple[ImageRef, str]:
    """Label the tool's objects on the frame and caption the labeled image."""
    if not frame.detections:
        raise NoAnnotations(f"frame {frame.frame_id} carries no annotations for tool {tool.tool_id}")
    checkfor = action_input.get("checkfor") or "/".join(sorted(tool.profile.ooi_categories))
    labels = tuple(
        OverlayLabel(d.category, d.bbox, grid_cell(d.bbox, frame.width, frame.height))
        for d in relevant_detections(frame, tool.profile)
    )
    labeled = ImageRef(
        uri=frame.image_ref,
        width=frame.width,
        height=frame.height,
        annotations=tuple(relevant_detections(frame, tool.profile)),
        labels=labels,
        subject=checkfor,
    )
    instruction = tool.tool_caption_instruction.replace("<checkfor>", checkfor)
    if backend is None:
        backend = MockBackend()
    elif isinstance(backend, BackendProfile):
        backend = make_backend(backend)
    return labeled, backend.caption(labeled, instruction)


# --- registry files -----------------------------------------------------------

_PROFILE_KEYS = {
    "ooi_categories",
    "min_confidence",
    "move_threshold_px",
    "scale_ratio_threshold",
    "custom_rules",
    "caption_instruction",
    "context_instruction",
}


def _number(value: Any, where: str) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "off", "disabled"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(f"{where}: expected a number, got {value!r}")
    return float(value)


def profile_from_dict(
    task_id: str, data: Mapping[str, Any], defaults: Mapping[str, Any] | None = None
) -> TaskProfile:
    where = f"profiles.{task_id}"
    unknown = set(data) - _PROFILE_KEYS
    if unknown:
        raise ConfigInvalid(f"{where}: unknown field(s) {', '.join(sorted(unknown))}")
    merged = {**(defaults or {}), **data}
    cats = merged.get("ooi_categories")
    if not isinstance(cats, list) or not cats or not all(isinstance(c, str) for c in cats):
        raise ConfigInvalid(f"{where}.ooi_categories: expected a non-empty list of strings")
    kwargs: dict[str, Any] = {"task_id": task_id, "ooi_categories": frozenset(cats)}
    for key in ("min_confidence", "move_threshold_px", "scale_ratio_threshold"):
        if key in merged:
            kwargs[key] = _number(merged[key], f"{where}.{key}")
    for key in ("caption_instruction", "context_instruction"):
        if key in merged:
            if not isinstance(merged[key], str):
                raise ConfigInvalid(f"{where}.{key}: expected a string")
            kwargs[key] = merged[key]
    try:
        kwargs["custom_rules"] = tuple(rule_from_spec(r) for r in merged.get("custom_rules", []))
        return TaskProfile(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc


def registry_from_dict(
    data: Mapping[str, Any],
    defaults: Mapping[str, Any] | None = None,
    base: ToolRegistry | None = None,
) -> ToolRegistry:
    """Build a registry from parsed TOML, layered over ``base`` (built-ins by default)."""
    base = base or default_registry()
    profiles = dict(base.profiles)
    raw_profiles = data.get("profiles", {})
    if not isinstance(raw_profiles, dict):
        raise ConfigInvalid("profiles: expected a table")
    for task_id, body in raw_profiles.items():
        if not isinstance(body, dict):
            raise ConfigInvalid(f"profiles.{task_id}: expected a table")
        profiles[task_id] = profile_from_dict(task_id, body, defaults)

    tools = dict(base.tools)
    declared: set[str] = set()
    raw_tools = data.get("tools", [])
    if not isinstance(raw_tools, list):
        raise ConfigInvalid("tools: expected an array of tables")
    for i, body in enumerate(raw_tools):
        where = f"tools[{i}]"
        if not isinstance(body, dict):
            raise ConfigInvalid(f"{where}: expected a table")
        try:
            tool_id = body["tool_id"]
            terms = body["trigger_terms"]
            profile_id = body["profile"]
        except KeyError as exc:
            raise ConfigInvalid(f"{where}: missing field {exc.args[0]}") from None
        if tool_id in declared:
            raise ConfigInvalid(f"{where}.tool_id: duplicate tool id {tool_id!r}")
        declared.add(tool_id)
        if profile_id not in profiles:
            raise ConfigInvalid(f"{where}.profile: unknown profile {profile_id!r}")
        if not isinstance(terms, list) or not all(isinstance(t, str) for t in terms):
            raise ConfigInvalid(f"{where}.trigger_terms: expected a list of strings")
        try:
            tools[tool_id] = ToolSpec(
                tool_id=tool_id,
                trigger_terms=frozenset(terms),
                profile=profiles[profile_id],
                tool_caption_instruction=body.get(
                    "tool_caption_instruction", "check <checkfor> use labels."
                ),
            )
        except ValueError as exc:
            raise ConfigInvalid(f"{where}: {exc}") from exc
    return ToolRegistry(list(tools.values()), profiles)
