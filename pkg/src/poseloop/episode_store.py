"""Append-only tree database of collection episodes.

Records mirror the flow of the task: a task owns point clouds, a cloud
owns pose estimates, an estimate owns grasps, a grasp owns the in-hand
measurement, and the measurement owns the insertion outcome.  The log is
one tab-separated line per record so it stays diff-able and crash-safe:
a truncated final line is tolerated on load, anything else malformed is
an error naming the line.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, replace
from typing import Iterator, Union

from .geometry import Pose


class StoreIntegrityError(ValueError):
    """A record references a parent id that does not exist."""


class StoreSchemaError(ValueError):
    """A record's parent is not of the immediately preceding level."""


class StoreParseError(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


MAGIC = "storev1"


@dataclass(frozen=True)
class TaskRecord:
    object_id: str
    network_type: str
    id: int = 0


@dataclass(frozen=True)
class CloudRecord:
    task_id: int
    cloud_file: str
    timestamp: float
    id: int = 0


@dataclass(frozen=True)
class PoseEstRecord:
    cloud_id: int
    pose: Pose
    score: float
    id: int = 0


@dataclass(frozen=True)
class GraspRecord:
    pose_est_id: int
    grasp_in_object_frame: Pose
    succeeded: bool
    id: int = 0


@dataclass(frozen=True)
class InHandRecord:
    grasp_id: int
    measured_pose: Pose
    expected_pose: Pose
    id: int = 0


@dataclass(frozen=True)
class InsertionRecord:
    inhand_id: int
    succeeded: bool
    id: int = 0


Record = Union[TaskRecord, CloudRecord, PoseEstRecord, GraspRecord,
               InHandRecord, InsertionRecord]

_LEVELS = {
    TaskRecord: ("task", None, None),
    CloudRecord: ("cloud", TaskRecord, "task_id"),
    PoseEstRecord: ("pose_est", CloudRecord, "cloud_id"),
    GraspRecord: ("grasp", PoseEstRecord, "pose_est_id"),
    InHandRecord: ("inhand", GraspRecord, "grasp_id"),
    InsertionRecord: ("insertion", InHandRecord, "inhand_id"),
}
_TAG_TO_TYPE = {tag: cls for cls, (tag, _, _) in _LEVELS.items()}


def parent_id(record: Record) -> int | None:
    field = _LEVELS[type(record)][2]
    return getattr(record, field) if field else None


def _fmt9(x: float) -> str:
    return f"{x:.9g}"


def _pose_fields(p: Pose) -> list[str]:
    return [_fmt9(v) for v in p.to_numbers()]


def _encode(record: Record) -> str:
    tag = _LEVELS[type(record)][0]
    if isinstance(record, TaskRecord):
        fields = [record.object_id, record.network_type]
    elif isinstance(record, CloudRecord):
        fields = [str(record.task_id), record.cloud_file, _fmt9(record.timestamp)]
    elif isinstance(record, PoseEstRecord):
        fields = [str(record.cloud_id), *_pose_fields(record.pose), _fmt9(record.score)]
    elif isinstance(record, GraspRecord):
        fields = [str(record.pose_est_id), *_pose_fields(record.grasp_in_object_frame),
                  "1" if record.succeeded else "0"]
    elif isinstance(record, InHandRecord):
        fields = [str(record.grasp_id), *_pose_fields(record.measured_pose),
                  *_pose_fields(record.expected_pose)]
    else:
        fields = [str(record.inhand_id), "1" if record.succeeded else "0"]
    return "\t".join([tag, str(record.id), *fields])


def _decode(line: str) -> Record:
    parts = line.split("\t")
    tag = parts[0]
    cls = _TAG_TO_TYPE.get(tag)
    if cls is None:
        raise ValueError(f"unknown record tag {tag!r}")
    rid = int(parts[1])
    body = parts[2:]
    if cls is TaskRecord and len(body) == 2:
        return TaskRecord(body[0], body[1], id=rid)
    if cls is CloudRecord and len(body) == 3:
        return CloudRecord(int(body[0]), body[1], float(body[2]), id=rid)
    if cls is PoseEstRecord and len(body) == 14:
        return PoseEstRecord(int(body[0]), Pose.from_numbers([float(v) for v in body[1:13]]),
                             float(body[13]), id=rid)
    if cls is GraspRecord and len(body) == 14:
        return GraspRecord(int(body[0]), Pose.from_numbers([float(v) for v in body[1:13]]),
                           body[13] == "1", id=rid)
    if cls is InHandRecord and len(body) == 25:
        return InHandRecord(int(body[0]), Pose.from_numbers([float(v) for v in body[1:13]]),
                            Pose.from_numbers([float(v) for v in body[13:25]]), id=rid)
    if cls is InsertionRecord and len(body) == 2:
        return InsertionRecord(int(body[0]), body[1] == "1", id=rid)
    raise ValueError(f"wrong field count for {tag!r}")


class EpisodeStore:
    """Single-writer store with monotone ids and parent/child lookups.

    Readers may run concurrently with the writer: every query works on a
    snapshot of the records appended so far (prefix consistency).
    """

    def __init__(self, path=None):
        self._records: list[Record] = []
        self._by_id: dict[int, Record] = {}
        self._children: dict[int, list[int]] = {}
        self._next_id = 1
        self._lock = threading.Lock()
        self._fh = None
        if path is not None:
            self.attach(path)

    # -- persistence ----------------------------------------------------

    def attach(self, path) -> None:
        """Start appending to path (header written if the file is new)."""
        self._fh = open(path, "a")
        if self._fh.tell() == 0:
            self._fh.write(MAGIC + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @classmethod
    def load(cls, path) -> "EpisodeStore":
        store = cls()
        with open(path) as fh:
            text = fh.read()
        lines = text.split("\n")
        if not lines or lines[0] != MAGIC:
            raise StoreParseError(path, 1, f"missing {MAGIC!r} header")
        ends_clean = text.endswith("\n")
        body = lines[1:-1] if ends_clean else lines[1:]
        if not ends_clean and body:
            tail = body.pop()
            try:
                record = _decode(tail)
            except Exception:
                warnings.warn(f"{path}: dropping truncated final line")
                record = None
            if record is not None:
                body.append(tail)
        for i, line in enumerate(body, start=2):
            if not line:
                raise StoreParseError(path, i, "blank line inside log")
            try:
                record = _decode(line)
            except Exception as exc:
                raise StoreParseError(path, i, str(exc)) from exc
            store._ingest(record, path, i)
        return store

    def save(self, path) -> None:
        """Rewrite the full log; load(save(x)) reproduces x byte-exactly."""
        with open(path, "w") as fh:
            fh.write(MAGIC + "\n")
            for record in self._records:
                fh.write(_encode(record) + "\n")

    # -- writes ----------------------------------------------------------

    def _validate_parent(self, record: Record) -> None:
        tag, parent_cls, field = _LEVELS[type(record)]
        if parent_cls is None:
            return
        pid = getattr(record, field)
        parent = self._by_id.get(pid)
        if parent is None:
            raise StoreIntegrityError(f"{tag} references missing parent id {pid}")
        if not isinstance(parent, parent_cls):
            raise StoreSchemaError(
                f"{tag} parent must be {_LEVELS[parent_cls][0]}, "
                f"id {pid} is {_LEVELS[type(parent)][0]}")

    def append(self, record: Record) -> int:
        """Assign the next id, validate lineage, persist, and index."""
        with self._lock:
            self._validate_parent(record)
            stored = replace(record, id=self._next_id)
            self._next_id += 1
            if self._fh is not None:
                self._fh.write(_encode(stored) + "\n")
                self._fh.flush()
            self._index(stored)
            return stored.id

    def _ingest(self, record: Record, path, line_no: int) -> None:
        if record.id != self._next_id:
            raise StoreParseError(path, line_no,
                                  f"id {record.id} breaks append order")
        try:
            self._validate_parent(record)
        except (StoreIntegrityError, StoreSchemaError) as exc:
            raise StoreParseError(path, line_no, str(exc)) from exc
        self._next_id += 1
        self._index(record)

    def _index(self, record: Record) -> None:
        self._records.append(record)
        self._by_id[record.id] = record
        pid = parent_id(record)
        if pid is not None:
            self._children.setdefault(pid, []).append(record.id)

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[Record]:
        return iter(tuple(self._records))

    def get(self, rid: int) -> Record:
        record = self._by_id.get(rid)
        if record is None:
            raise KeyError(f"no record with id {rid}")
        return record

    def children(self, rid: int) -> list[Record]:
        self.get(rid)
        return [self._by_id[c] for c in self._children.get(rid, [])]

    def records_of(self, cls) -> list[Record]:
        return [r for r in self._records if isinstance(r, cls)]

    def lineage(self, inhand_id: int) -> tuple[InHandRecord, GraspRecord,
                                               PoseEstRecord, CloudRecord, TaskRecord]:
        """Ancestor chain of an in-hand record, leaf first."""
        inhand = self.get(inhand_id)
        if not isinstance(inhand, InHandRecord):
            raise StoreSchemaError(f"id {inhand_id} is not an inhand record")
        chain = [inhand]
        node: Record = inhand
        while True:
            pid = parent_id(node)
            if pid is None:
                break
            node = self._by_id.get(pid)
            if node is None:
                raise StoreIntegrityError(f"dangling parent id {pid}")
            chain.append(node)
        return tuple(chain)
