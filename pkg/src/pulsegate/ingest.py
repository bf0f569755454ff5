"""Message stream input: NDJSON parsing, keyword filtering, rate capping, replay."""
from __future__ import annotations

import enum
import json
import logging
import math
import queue
import re
import socket
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, IO, Iterable, Iterator, Sequence

from .core import GroundTruthEvent, Message

log = logging.getLogger(__name__)

DEFAULT_KEYWORDS = frozenset({"touchdown", "td"})


class SourceError(OSError):
    """Raised when a message source cannot be opened or read."""


class MatchMode(str, enum.Enum):
    WORD_BOUNDARY = "word_boundary"
    SUBSTRING = "substring"


@dataclass(frozen=True)
class KeywordFilter:
    keywords: frozenset[str]
    match_mode: MatchMode = MatchMode.SUBSTRING

    def __post_init__(self) -> None:
        kws = frozenset(k.strip().lower() for k in self.keywords)
        if not kws or "" in kws:
            raise ValueError("keywords must be non-empty strings")
        object.__setattr__(self, "keywords", kws)
        object.__setattr__(self, "match_mode", MatchMode(self.match_mode))
        if self.match_mode is MatchMode.WORD_BOUNDARY:
            alts = "|".join(sorted(map(re.escape, kws), key=len, reverse=True))
            # Any non-alphanumeric character separates words.
            pattern = re.compile(rf"(?<![^\W_])(?:{alts})(?![^\W_])")
        else:
            pattern = None
        object.__setattr__(self, "_pattern", pattern)

    def matches(self, text: str) -> bool:
        low = text.lower()
        if self._pattern is not None:
            return self._pattern.search(low) is not None
        return any(k in low for k in self.keywords)

    @classmethod
    def from_file(cls, path: str | Path, match_mode: MatchMode | str = MatchMode.SUBSTRING):
        """One keyword per line; ``#`` starts a comment."""
        words = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                words.append(line)
        return cls(frozenset(words), MatchMode(match_mode))


@dataclass(frozen=True)
class RateCap:
    max_per_second: int | None = None

    def __post_init__(self) -> None:
        if self.max_per_second is not None and self.max_per_second < 1:
            raise ValueError("max_per_second must be >= 1")


def message_from_obj(obj) -> Message:
    if not isinstance(obj, dict):
        raise ValueError("not a JSON object")
    ts = obj["ts_ms"]
    if isinstance(ts, float) and ts.is_integer():
        ts = int(ts)
    for key in ("user_id", "client", "text"):
        if not isinstance(obj[key], str):
            raise ValueError(f"{key} must be a string")
    return Message(ts, obj["user_id"], obj["client"], obj["text"])


def serialize(msgs: Iterable[Message], out: IO[str]) -> int:
    n = 0
    for m in msgs:
        out.write(json.dumps(m.to_dict(), ensure_ascii=False, separators=(",", ":")))
        out.write("\n")
        n += 1
    return n


class NDJSONReader:
    """Lazily parse NDJSON lines into Messages, skipping malformed lines.

    ``skipped`` counts lines that were not valid JSON objects or failed
    Message validation.  Blank lines are ignored and not counted.
    """

    def __init__(self, lines: Iterable[bytes | str]):
        self._lines = lines
        self.skipped = 0
        self.read = 0

    def __iter__(self) -> Iterator[Message]:
        for raw in self._lines:
            if isinstance(raw, bytes):
                try:
                    raw = raw.decode("utf-8")
                except UnicodeDecodeError:
                    self.skipped += 1
                    continue
            if not raw.strip():
                continue
            try:
                msg = message_from_obj(json.loads(raw))
            except (ValueError, KeyError, TypeError):
                self.skipped += 1
                log.debug("skipping malformed line: %.80r", raw)
                continue
            self.read += 1
            yield msg


def open_source(source: str | Path | IO) -> IO[bytes]:
    """Open ``-`` (stdin), ``tcp://host:port``, or a file path for binary reading."""
    if not isinstance(source, (str, Path)):
        return source
    source = str(source)
    try:
        if source == "-":
            return sys.stdin.buffer
        if source.startswith("tcp://"):
            host, _, port = source[len("tcp://"):].rpartition(":")
            sock = socket.create_connection((host or "127.0.0.1", int(port)))
            return sock.makefile("rb")
        return open(source, "rb")
    except (OSError, ValueError) as exc:
        raise SourceError(f"cannot open message source {source!r}: {exc}") from exc


def parse_stream(source: str | Path | IO) -> tuple[list[Message], int]:
    """Read a whole NDJSON source; returns ``(messages, skipped_line_count)``.

    ``source`` is a path, ``-``, ``tcp://host:port`` or an open file object.
    """
    owned = isinstance(source, (str, Path)) and str(source) != "-"
    stream = open_source(source)
    reader = NDJSONReader(stream)
    try:
        msgs = list(reader)
    except OSError as exc:
        raise SourceError(f"unreadable source: {exc}") from exc
    finally:
        if owned:
            stream.close()
    return msgs, reader.skipped


def read_ground_truth(path: str | Path) -> list[GroundTruthEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                events.append(GroundTruthEvent(int(obj["ts_ms"]), str(obj.get("kind", "touchdown"))))
    events.sort(key=lambda e: e.ts_ms)
    return events


def write_ground_truth(events: Iterable[GroundTruthEvent], out: IO[str]) -> None:
    for e in events:
        out.write(json.dumps(e.to_dict(), separators=(",", ":")) + "\n")


def filter_messages(msgs: Iterable[Message], f: KeywordFilter) -> list[Message]:
    return [m for m in msgs if f.matches(m.text)]


def _check_sorted(msgs: Sequence[Message]) -> None:
    for a, b in zip(msgs, msgs[1:]):
        if b.ts_ms < a.ts_ms:
            raise ValueError(f"input not sorted by ts_ms ({a.ts_ms} > {b.ts_ms})")


def apply_rate_cap(msgs: Sequence[Message], cap: RateCap) -> list[Message]:
    """Keep at most ``cap.max_per_second`` messages per epoch-aligned second, earliest first."""
    _check_sorted(msgs)
    if cap.max_per_second is None:
        return list(msgs)
    out = []
    sec, used = None, 0
    for m in msgs:
        s = m.ts_ms // 1000
        if s != sec:
            sec, used = s, 0
        if used < cap.max_per_second:
            out.append(m)
            used += 1
    return out


_DONE = object()


def replay(msgs: Sequence[Message], speed: float, sink: Callable[[Message], object],
           maxsize: int = 1024) -> int:
    """Deliver ``msgs`` to ``sink`` paced by their timestamps divided by ``speed``.

    A producer thread paces and enqueues into a bounded queue; the calling
    thread drains it into ``sink``.  ``speed=math.inf`` delivers without
    delay.  Exceptions raised by ``sink`` stop the producer and propagate.
    Returns the number of messages delivered.
    """
    if not speed > 0:
        raise ValueError("speed must be > 0")
    _check_sorted(msgs)
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    stop = threading.Event()

    def produce() -> None:
        t0 = time.monotonic()
        ts0 = msgs[0].ts_ms if msgs else 0
        for m in msgs:
            if math.isfinite(speed):
                due = t0 + (m.ts_ms - ts0) / 1000.0 / speed
                delay = due - time.monotonic()
                if delay > 0:
                    if stop.wait(delay):
                        return
            while not stop.is_set():
                try:
                    q.put(m, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if stop.is_set():
                return
        while not stop.is_set():
            try:
                q.put(_DONE, timeout=0.1)
                return
            except queue.Full:
                continue

    producer = threading.Thread(target=produce, name="replay-producer", daemon=True)
    producer.start()
    delivered = 0
    try:
        while True:
            item = q.get()
            if item is _DONE:
                break
            sink(item)
            delivered += 1
    finally:
        stop.set()
        producer.join()
    return delivered
