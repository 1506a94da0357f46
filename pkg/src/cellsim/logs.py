"""Readers and writers for scan replay, motion, decision, event and cycle logs.

Scan and motion logs are JSON lines, one record per tick; a ``.gz`` suffix
selects gzip. Floats are written with ``repr`` precision so a write/read
round trip is bit-exact. Tabular logs are CSV.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .geometry import Cuboid, Pose
from .safety import SafetyDecision

DECISION_COLUMNS = ("tick", "stop_ratio", "slowdown_ratio", "mode", "speed_ratio")
EVENT_COLUMNS = ("cycle", "node", "start_tick", "end_tick", "outcome", "retries", "controller_retries",
                 "start_time", "end_time", "nominal")
CYCLE_COLUMNS = ("cycle", "start_time", "nominal_time", "wall_time", "paused_time", "slowed_time", "alert_time",
                 "retries", "operations", "failed_operations", "outcome", "failed_node")


class LogError(ValueError):
    """Malformed or misaligned log content; ``tick`` names the first bad record when known."""

    def __init__(self, message: str, tick: int | None = None):
        super().__init__(message if tick is None else f"tick {tick}: {message}")
        self.tick = tick


class _GzipFile(gzip.GzipFile):
    """Gzip stream with no file name and a fixed mtime in the header, so the
    bytes depend only on the content. Owns and closes the underlying file."""

    def __init__(self, path: Path, mode: str):
        self._raw = open(path, mode + "b")
        super().__init__(filename="", mode=mode + "b", fileobj=self._raw, compresslevel=1, mtime=0)

    def close(self) -> None:
        try:
            super().close()
        finally:
            self._raw.close()


def _open(path: str | Path, mode: str) -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(_GzipFile(path, mode), encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


# --- scans --------------------------------------------------------------------


@dataclass
class ScanRecord:
    tick: int
    t: float
    points: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"tick": self.tick, "t": self.t, "points": np.asarray(self.points, float).tolist()},
                          separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> ScanRecord:
        d = json.loads(line)
        pts = np.asarray(d["points"], dtype=float).reshape(-1, 3)
        return cls(int(d["tick"]), float(d["t"]), pts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScanRecord):
            return NotImplemented
        return (self.tick == other.tick and self.t == other.t
                and np.array_equal(np.asarray(self.points).reshape(-1, 3), np.asarray(other.points).reshape(-1, 3)))


class JsonlWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = _open(self.path, "w")
        self.count = 0

    def write(self, record: ScanRecord | MotionRecord) -> None:
        try:
            self._fh.write(record.to_json() + "\n")
        except OSError as exc:
            raise OSError(f"writing {self.path} at tick {record.tick}: {exc}") from exc
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> JsonlWriter:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def _read_jsonl(path: str | Path, parse) -> Iterator:
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield parse(line)
            except (ValueError, KeyError, TypeError) as exc:
                raise LogError(f"{path}:{lineno}: malformed record ({exc})") from exc


def write_scans(path: str | Path, records: Iterable[ScanRecord]) -> int:
    with JsonlWriter(path) as w:
        for r in records:
            w.write(r)
        return w.count


def read_scans(path: str | Path) -> list[ScanRecord]:
    return list(_read_jsonl(path, ScanRecord.from_json))


# --- robot motion -------------------------------------------------------------


@dataclass
class LinkRecord:
    name: str
    center: tuple[float, float, float]
    quat: tuple[float, float, float, float]
    half_extents: tuple[float, float, float]
    speed: float

    def cuboid(self) -> Cuboid:
        return Cuboid(Pose(self.quat, self.center), self.half_extents)


@dataclass
class MotionRecord:
    tick: int
    t: float
    links: list[LinkRecord]
    tool: str | None = None

    @classmethod
    def from_links(cls, tick: int, t: float, links: dict[str, Cuboid], speeds: dict[str, float],
                   tool: str | None) -> MotionRecord:
        recs = [
            LinkRecord(n, tuple(float(v) for v in c.center), tuple(float(v) for v in c.pose.quat),
                       tuple(float(v) for v in c.half_extents), float(speeds.get(n, 0.0)))
            for n, c in links.items()
        ]
        return cls(tick, t, recs, tool)

    def to_json(self) -> str:
        return json.dumps({
            "tick": self.tick, "t": self.t, "tool": self.tool,
            "links": [{"name": l.name, "center": list(l.center), "quat": list(l.quat),
                       "half_extents": list(l.half_extents), "speed": l.speed} for l in self.links],
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> MotionRecord:
        d = json.loads(line)
        links = [LinkRecord(l["name"], tuple(l["center"]), tuple(l["quat"]), tuple(l["half_extents"]),
                            float(l["speed"])) for l in d["links"]]
        return cls(int(d["tick"]), float(d["t"]), links, d.get("tool"))

    def cuboids(self) -> dict[str, Cuboid]:
        return {l.name: l.cuboid() for l in self.links}

    def speeds(self) -> dict[str, float]:
        return {l.name: l.speed for l in self.links}


def read_motion(path: str | Path) -> list[MotionRecord]:
    return list(_read_jsonl(path, MotionRecord.from_json))


def check_aligned(scans: Sequence[ScanRecord], motion: Sequence[MotionRecord]) -> None:
    """Raise LogError at the first tick where the two logs disagree."""
    for i, (s, m) in enumerate(zip(scans, motion)):
        if s.tick != m.tick or s.t != m.t:
            raise LogError(f"scan tick {s.tick} (t={s.t}) vs motion tick {m.tick} (t={m.t})", s.tick)
        if i and s.tick != scans[i - 1].tick + 1:
            raise LogError("ticks are not consecutive", s.tick)
    if len(scans) != len(motion):
        shorter = min(len(scans), len(motion))
        first = (scans if len(scans) > shorter else motion)[shorter].tick
        raise LogError(f"log lengths differ ({len(scans)} scans, {len(motion)} motion records)", first)


# --- tabular logs -------------------------------------------------------------


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def decision_rows(decisions: Sequence[SafetyDecision], first_tick: int = 0) -> Iterator[tuple]:
    for k, d in enumerate(decisions, first_tick):
        yield (k, float(d.stop_ratio), float(d.slowdown_ratio), d.mode.label, float(d.speed_ratio))


def write_decisions(path: str | Path, decisions: Sequence[SafetyDecision], first_tick: int = 0) -> None:
    write_csv(path, DECISION_COLUMNS, decision_rows(decisions, first_tick))


def write_events(path: str | Path, events: Sequence) -> None:
    write_csv(path, EVENT_COLUMNS, (
        (e.cycle, e.node, e.start_tick, e.end_tick, e.outcome, e.retries, e.controller_retries,
         float(e.start_time), float(e.end_time), float(e.nominal))
        for e in events
    ))


def write_cycles(path: str | Path, records: Sequence) -> None:
    write_csv(path, CYCLE_COLUMNS, (
        (r.index, float(r.start_time), float(r.nominal_time), float(r.wall_time), float(r.paused_time),
         float(r.slowed_time), float(r.alert_time), sum(r.retries.values()), r.operations, r.failed_operations,
         r.outcome, r.failed_node)
        for r in records
    ))
