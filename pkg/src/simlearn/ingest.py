"""Clickstream log parsing and action/break segmentation.

A log is JSON-lines, one mouse event per line::

    {"student_id": "s001", "t_ms": 12345, "kind": "click", "component": "widthSlider",
     "state": {"absorbanceShown": "true", "laser": "green"}}

Everything between a click and its release is an *action* on the clicked
component; everything between a release and the next click is a *break*.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .exceptions import EmptySession, IngestWarning, MalformedRecord, NonMonotonicTimestamp

BREAK = "<break>"
ACTION = "action"
BREAK_KIND = "break"


@dataclass(frozen=True)
class RawLogRecord:
    student_id: str
    timestamp: int
    kind: str
    component: str
    state_snapshot: Mapping[str, str]
    line_no: int = 0


@dataclass(frozen=True)
class EventTriplet:
    event: str
    state: Mapping[str, str]
    duration: float
    kind: str

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"event duration must be positive, got {self.duration}")
        if (self.kind == BREAK_KIND) != (self.event == BREAK):
            raise ValueError("break kind and break marker must coincide")


@dataclass(frozen=True)
class InteractionSequence:
    student_id: str
    triplets: tuple[EventTriplet, ...]
    n_raw: int
    n_filtered: int
    total_duration: float = field(default=0.0)

    @property
    def n_breaks(self) -> int:
        return sum(1 for t in self.triplets if t.kind == BREAK_KIND)

    @property
    def n_actions(self) -> int:
        return sum(1 for t in self.triplets if t.kind == ACTION)

    def to_dict(self) -> dict:
        return {
            "student_id": self.student_id,
            "n_raw": self.n_raw,
            "n_filtered": self.n_filtered,
            "total_duration": self.total_duration,
            "triplets": [
                {"event": t.event, "state": dict(t.state), "duration": t.duration, "kind": t.kind}
                for t in self.triplets
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "InteractionSequence":
        triplets = tuple(
            EventTriplet(t["event"], dict(t["state"]), float(t["duration"]), t["kind"])
            for t in d["triplets"]
        )
        return cls(d["student_id"], triplets, int(d["n_raw"]), int(d["n_filtered"]),
                   float(d["total_duration"]))


_KINDS = ("click", "release")


def _parse_line(line: str, line_no: int) -> RawLogRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_no, str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "not a JSON object")
    for key in ("student_id", "t_ms", "kind", "component"):
        if key not in obj:
            raise MalformedRecord(line_no, f"missing field {key!r}")
    t = obj["t_ms"]
    if isinstance(t, bool) or not isinstance(t, int) or t < 0:
        raise MalformedRecord(line_no, "t_ms must be a non-negative integer")
    if obj["kind"] not in _KINDS:
        raise MalformedRecord(line_no, f"kind must be one of {_KINDS}")
    state = obj.get("state", {})
    if not isinstance(state, dict):
        raise MalformedRecord(line_no, "state must be an object")
    return RawLogRecord(
        student_id=str(obj["student_id"]),
        timestamp=t,
        kind=obj["kind"],
        component=str(obj["component"]),
        state_snapshot={str(k): str(v) for k, v in state.items()},
        line_no=line_no,
    )


def parse_log(stream: Iterable[str]) -> dict[str, list[RawLogRecord]]:
    """Parse a JSON-lines event log into per-student record lists.

    Groups keep the order in which students first appear. Blank lines are
    skipped. Raises ``MalformedRecord`` or ``NonMonotonicTimestamp`` carrying
    the 1-based line number of the offending record.
    """
    groups: dict[str, list[RawLogRecord]] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        rec = _parse_line(line, line_no)
        group = groups.setdefault(rec.student_id, [])
        if group and rec.timestamp < group[-1].timestamp:
            raise NonMonotonicTimestamp(rec.student_id, line_no)
        group.append(rec)
    return groups


def read_log(path) -> dict[str, list[RawLogRecord]]:
    with open(path, encoding="utf-8") as fh:
        return parse_log(fh)


def _pair_clicks(records: list[RawLogRecord]) -> list[tuple[RawLogRecord, RawLogRecord]]:
    pairs = []
    pending = None
    for rec in records:
        if rec.kind == "click":
            if pending is not None:
                warnings.warn(f"student {rec.student_id!r}: click at line {pending.line_no} "
                              "has no release; dropped", IngestWarning, stacklevel=3)
            pending = rec
        else:
            if pending is None:
                warnings.warn(f"student {rec.student_id!r}: release at line {rec.line_no} "
                              "has no click; dropped", IngestWarning, stacklevel=3)
                continue
            pairs.append((pending, rec))
            pending = None
    if pending is not None:
        warnings.warn(f"student {pending.student_id!r}: trailing click at line "
                      f"{pending.line_no} dropped", IngestWarning, stacklevel=3)
    return pairs


def segment_events(records: list[RawLogRecord]) -> InteractionSequence:
    """Turn sorted click/release records into interleaved action and break triplets.

    Zero-length actions or breaks are not emitted.
    """
    if not records:
        raise EmptySession("no records")
    student_id = records[0].student_id
    pairs = _pair_clicks(records)
    triplets = []
    n_actions = 0
    prev_release = None
    for click, release in pairs:
        if prev_release is not None:
            gap = click.timestamp - prev_release.timestamp
            if gap > 0:
                triplets.append(EventTriplet(BREAK, prev_release.state_snapshot, gap / 1000.0,
                                             BREAK_KIND))
        held = release.timestamp - click.timestamp
        if held > 0:
            triplets.append(EventTriplet(click.component, click.state_snapshot, held / 1000.0,
                                         ACTION))
            n_actions += 1
        prev_release = release
    if n_actions == 0:
        raise EmptySession(f"student {student_id!r} has no complete action")
    total = math.fsum(t.duration for t in triplets)
    return InteractionSequence(student_id, tuple(triplets), len(triplets), len(triplets), total)


def filter_breaks(seq: InteractionSequence, fraction: float = 0.6) -> InteractionSequence:
    """Drop the ``floor(fraction * B)`` shortest of the ``B`` breaks.

    Among equal durations the earlier break goes first. Actions and the
    relative order of retained triplets are untouched.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must lie in [0, 1), got {fraction}")
    break_pos = [i for i, t in enumerate(seq.triplets) if t.kind == BREAK_KIND]
    n_drop = math.floor(fraction * len(break_pos))
    if n_drop == 0:
        return seq
    ranked = sorted(break_pos, key=lambda i: (seq.triplets[i].duration, i))
    dropped = set(ranked[:n_drop])
    kept = tuple(t for i, t in enumerate(seq.triplets) if i not in dropped)
    return replace(seq, triplets=kept, n_filtered=len(kept),
                   total_duration=math.fsum(t.duration for t in kept))


def ingest(groups: Mapping[str, list[RawLogRecord]], fraction: float = 0.6,
           skip_empty: bool = True) -> list[InteractionSequence]:
    out = []
    for sid, records in groups.items():
        try:
            seq = segment_events(records)
        except EmptySession:
            if not skip_empty:
                raise
            warnings.warn(f"student {sid!r} has no actions; skipped", IngestWarning, stacklevel=2)
            continue
        out.append(filter_breaks(seq, fraction))
    return out


def write_sequences(sequences: Iterable[InteractionSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.to_dict(), sort_keys=True) + "\n")


def read_sequences(path) -> list[InteractionSequence]:
    with open(path, encoding="utf-8") as fh:
        return [InteractionSequence.from_dict(json.loads(line)) for line in fh if line.strip()]
