"""Multi-modal contextual memory: record creation, JSONL persistence, keyword retrieval.

Store format: UTF-8, one JSON object per line, appended and fsynced per
record. Keys follow the memory table attribute names in snake_case::

    {"record_id": "mem-000001",
     "object_of_interest": "...", "scene_description": "...",
     "object_type": "Person", "name": "Imam", "user_context": "...",
     "original_scene_image_location": "...",
     "cropped_object_of_interest_image_location": "...",
     "meta_information": {"location": "...", "time": "...", "device": "..."},
     "retrieval_keywords": ["imam", "new engineer", ...]}

``name`` may be missing or null. Images are never inlined, only referenced.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from hux.context import Backend, BackendProfile, make_backend
from hux.errors import CorruptStore, EmptyQuery, MissingCaption, PersistenceFailure
from hux.gaze import RoiCrop
from hux.scene import FrameRecord
from hux.text import tokenize


@dataclass(frozen=True)
class MemoryMeta:
    location: str = ""
    time: str = ""
    device: str = ""


@dataclass(frozen=True)
class MemoryRecord:
    record_id: str
    ooi_caption: str
    scene_caption: str
    object_type: str
    user_context: str
    scene_image_path: str
    ooi_image_path: str
    meta: MemoryMeta
    keywords: tuple[str, ...]
    name: str | None = None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "object_of_interest": self.ooi_caption,
            "scene_description": self.scene_caption,
            "object_type": self.object_type,
            "name": self.name,
            "user_context": self.user_context,
            "original_scene_image_location": self.scene_image_path,
            "cropped_object_of_interest_image_location": self.ooi_image_path,
            "meta_information": {
                "location": self.meta.location,
                "time": self.meta.time,
                "device": self.meta.device,
            },
            "retrieval_keywords": list(self.keywords),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MemoryRecord":
        meta = data.get("meta_information") or {}
        keywords = data["retrieval_keywords"]
        if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
            raise TypeError("retrieval_keywords must be a list of strings")
        return cls(
            record_id=str(data["record_id"]),
            ooi_caption=data["object_of_interest"],
            scene_caption=data["scene_description"],
            object_type=data["object_type"],
            name=data.get("name"),
            user_context=data["user_context"],
            scene_image_path=data["original_scene_image_location"],
            ooi_image_path=data["cropped_object_of_interest_image_location"],
            meta=MemoryMeta(
                location=meta.get("location", ""),
                time=meta.get("time", ""),
                device=meta.get("device", ""),
            ),
            keywords=tuple(keywords),
        )


@dataclass(frozen=True)
class RetrievalHit:
    record_id: str
    score: float
    matched_keywords: tuple[str, ...]


def _encode(record: MemoryRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False, sort_keys=True)


def _decode_lines(lines: Sequence[str]) -> list[MemoryRecord]:
    records = []
    for index, line in enumerate(lines):
        try:
            records.append(MemoryRecord.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CorruptStore(index, f"{type(exc).__name__}: {exc}") from exc
    return records


@dataclass
class MemoryStore:
    """Records in insertion order, optionally backed by an append-only file."""

    path: Path | None = None
    records: list[MemoryRecord] = field(default_factory=list)

    def __iter__(self) -> Iterator[MemoryRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def next_id(self) -> str:
        return f"mem-{len(self.records) + 1:06d}"

    def append(self, record: MemoryRecord) -> None:
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(_encode(record) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise PersistenceFailure(f"cannot append to {self.path}: {exc}") from exc
        self.records.append(record)


def load_store(path: str | os.PathLike) -> MemoryStore:
    """Open a store file; a missing file yields an empty store bound to ``path``."""
    path = Path(path)
    if not path.exists():
        return MemoryStore(path=path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptStore(_line_of(raw, exc.start), "invalid UTF-8") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return MemoryStore(path=path, records=_decode_lines(lines))


def _line_of(raw: bytes, byte_offset: int) -> int:
    return raw[:byte_offset].count(b"\n")


def save_store(store: MemoryStore, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="utf-8") as fh:
            for record in store.records:
                fh.write(_encode(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise PersistenceFailure(f"cannot write {path}: {exc}") from exc


def create_memory(
    scene: FrameRecord,
    roi: RoiCrop,
    user_context: str,
    meta: MemoryMeta,
    keyword_gen: Backend | BackendProfile,
    *,
    store: MemoryStore,
    scene_caption: str,
    object_type: str,
    name: str | None = None,
) -> MemoryRecord:
    """Assemble a memory from captions and spoken context, then persist it.

    Keywords are generated from the name, the user context and both captions.
    """
    if not user_context or not user_context.strip():
        raise ValueError("user_context must be non-empty")
    if not scene_caption or not scene_caption.strip():
        raise MissingCaption("scene caption is missing")
    if not roi.caption or not roi.caption.strip():
        raise MissingCaption("region-of-interest caption is missing")
    gen = make_backend(keyword_gen) if isinstance(keyword_gen, BackendProfile) else keyword_gen
    sources = [t for t in (name, user_context, roi.caption, scene_caption) if t]
    keywords = tuple(gen.keywords(sources))
    if not keywords:
        raise MissingCaption("no retrieval keywords could be generated")
    record = MemoryRecord(
        record_id=store.next_id(),
        ooi_caption=roi.caption,
        scene_caption=scene_caption,
        object_type=object_type,
        name=name,
        user_context=user_context,
        scene_image_path=scene.image_ref,
        ooi_image_path=roi.image_ref.uri,
        meta=meta,
        keywords=keywords,
    )
    store.append(record)
    return record


def retrieve(query: str, store: MemoryStore | Sequence[MemoryRecord]) -> list[RetrievalHit]:
    """Rank records by the share of distinct query tokens found in their keywords."""
    query_tokens = set(tokenize(query))
    if not query_tokens:
        raise EmptyQuery("query has no tokens")
    hits = []
    for record in store:
        kw_tokens = {kw: set(tokenize(kw)) for kw in record.keywords}
        vocabulary = set().union(*kw_tokens.values()) if kw_tokens else set()
        matched = query_tokens & vocabulary
        if not matched:
            continue
        hits.append(
            RetrievalHit(
                record_id=record.record_id,
                score=len(matched) / len(query_tokens),
                matched_keywords=tuple(kw for kw, toks in kw_tokens.items() if toks & matched),
            )
        )
    hits.sort(key=lambda h: (-h.score, h.record_id))
    return hits
