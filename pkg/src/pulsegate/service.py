"""Read-only JSON API over live detector state.

The detection pipeline is the single writer per game; HTTP handlers only
take snapshots under the registry lock.  Endpoints:

* ``GET /games`` lists registered game ids
* ``GET /games/{id}/events`` returns every detection so far, time-ordered
* ``GET /games/{id}/trend?bins=N`` returns the last N one-second volume bins
* ``GET /games/{id}/stats`` returns totals for one game
* ``GET /ranking`` returns games by total volume, descending
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import IO, Iterable, Sequence
from urllib.parse import parse_qs, urlsplit

from .core import Detection, GroupKey, Message
from .corpus import BinAssembler, Game
from .detection import DetectorConfig, StreamingDetector
from .grouping import Markers
from .ingest import replay
from .templates import TemplateSet

DEFAULT_PORT = 8080


class UnknownGame(KeyError):
    pass


@dataclass
class GameState:
    start_ms: int
    bin_width_ms: int = 1000
    counts: list[int] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)
    total_volume: int = 0


class GameRegistry:
    """In-memory state of every monitored game.

    Writers call :meth:`apply_bin` once per closed bin; the bin's count and
    an optional detection land together, so readers never see half an
    update.  Detections are append-only and must be time-ordered.
    """

    def __init__(self, log: IO[str] | None = None):
        self._lock = threading.Lock()
        self._games: dict[str, GameState] = {}
        self._log = log

    def register(self, game_id: str, start_ms: int, bin_width_ms: int = 1000) -> None:
        with self._lock:
            if game_id in self._games:
                raise ValueError(f"game already registered: {game_id}")
            self._games[game_id] = GameState(start_ms, bin_width_ms)

    def apply_bin(self, game_id: str, bin_end_ms: int, count: int,
                  detection: Detection | None = None) -> None:
        count = int(count)
        if count < 0:
            raise ValueError("negative count")
        with self._lock:
            st = self._state(game_id)
            expected = st.start_ms + (len(st.counts) + 1) * st.bin_width_ms
            if bin_end_ms != expected:
                raise ValueError(f"bin out of sequence: got {bin_end_ms}, expected {expected}")
            if detection is not None and st.detections and detection.ts_ms < st.detections[-1].ts_ms:
                raise ValueError("detections must be time-ordered")
            st.counts.append(count)
            st.total_volume += count
            if detection is not None:
                st.detections.append(detection)
                if self._log is not None:
                    self._log.write(json.dumps({"game_id": game_id, **detection.to_dict()}) + "\n")
                    self._log.flush()

    def _state(self, game_id: str) -> GameState:
        try:
            return self._games[game_id]
        except KeyError:
            raise UnknownGame(game_id) from None

    def game_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._games)

    def events(self, game_id: str) -> list[dict]:
        with self._lock:
            dets = list(self._state(game_id).detections)
        return [d.to_dict() for d in dets]

    def trend(self, game_id: str, n_bins: int) -> dict:
        if n_bins < 1:
            raise ValueError("bins must be >= 1")
        with self._lock:
            st = self._state(game_id)
            tail = st.counts[-n_bins:]
            n_done = len(st.counts)
        pad = n_bins - len(tail)
        first = st.start_ms + (n_done - n_bins) * st.bin_width_ms
        return {"start_ms": first, "bin_width_ms": st.bin_width_ms, "counts": [0] * pad + tail}

    def stats(self, game_id: str) -> dict:
        with self._lock:
            st = self._state(game_id)
            return {"game_id": game_id, "start_ms": st.start_ms, "n_bins": len(st.counts),
                    "total_volume": st.total_volume, "n_detections": len(st.detections),
                    "last_bin_end_ms": st.start_ms + len(st.counts) * st.bin_width_ms}

    def ranking(self) -> list[dict]:
        with self._lock:
            vols = [(gid, st.total_volume) for gid, st in self._games.items()]
        vols.sort(key=lambda x: (-x[1], x[0]))
        return [{"game_id": g, "total_volume": v} for g, v in vols]


class _Handler(BaseHTTPRequestHandler):
    registry: GameRegistry  # set on the subclass built by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args) -> None:  # keep test output quiet
        pass

    def _send(self, status: int, body) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        reg = self.registry
        try:
            if parts == ["ranking"]:
                return self._send(200, reg.ranking())
            if parts == ["games"]:
                return self._send(200, reg.game_ids())
            if len(parts) == 3 and parts[0] == "games":
                gid, what = parts[1], parts[2]
                if what == "events":
                    return self._send(200, reg.events(gid))
                if what == "stats":
                    return self._send(200, reg.stats(gid))
                if what == "trend":
                    q = parse_qs(url.query, keep_blank_values=True)
                    raw = q.get("bins", ["60"])[-1]
                    try:
                        n = int(raw)
                    except ValueError:
                        n = 0
                    if n < 1:
                        # unknown game still wins over a bad parameter
                        reg.stats(gid)
                        return self._send(400, {"error": f"invalid bins: {raw!r}"})
                    return self._send(200, reg.trend(gid, n))
            self._send(404, {"error": f"no such endpoint: {url.path}"})
        except UnknownGame as e:
            self._send(404, {"error": f"unknown game: {e.args[0]}"})


def make_server(registry: GameRegistry, host: str = "127.0.0.1", port: int | None = None) -> ThreadingHTTPServer:
    """Bind a threaded HTTP server; port 0 picks a free port."""
    if port is None:
        port = int(os.environ.get("PULSEGATE_PORT", DEFAULT_PORT))
    handler = type("Handler", (_Handler,), {"registry": registry})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


class LivePipeline:
    """Replay one game's messages through binning and streaming detection into a registry."""

    def __init__(self, game_id: str, messages: Sequence[Message], start_ms: int, end_ms: int,
                 templates: TemplateSet, cfg: DetectorConfig, registry: GameRegistry,
                 markers: Markers | None = None):
        self.game_id = game_id
        self.messages = messages
        self.end_ms = end_ms
        self.registry = registry
        self.detector = StreamingDetector(templates, cfg)
        groups = set(cfg.filter_groups) | {GroupKey.ALL}
        self.assembler = BinAssembler(start_ms, groups, markers, end_ms=end_ms)
        registry.register(game_id, start_ms)

    @classmethod
    def for_game(cls, game: Game, templates: TemplateSet, cfg: DetectorConfig,
                 registry: GameRegistry) -> "LivePipeline":
        return cls(game.game_id, game.messages, game.start_ms, game.end_ms, templates, cfg,
                   registry, game.markers)

    def _apply(self, bins: Iterable[tuple[int, dict]]) -> None:
        for ts, counts in bins:
            det = self.detector.push(ts, counts)
            self.registry.apply_bin(self.game_id, ts, int(counts[GroupKey.ALL]), det)

    def run(self, speed: float = float("inf")) -> None:
        replay(self.messages, speed, lambda m: self._apply(self.assembler.push(m)))
        self._apply(self.assembler.flush(self.end_ms))

    def start(self, speed: float = float("inf")) -> threading.Thread:
        t = threading.Thread(target=self.run, args=(speed,), name=f"pipeline-{self.game_id}", daemon=True)
        t.start()
        return t
