"""Session logs and time-paced TCP replay.

Wire format per frame: 8-byte big-endian ``stream_ts_ms`` (server monotonic
clock at send time) followed by a length-prefixed codec frame.
"""

from __future__ import annotations

import asyncio
import datetime as dt
import json
import logging
import os
import socket
import struct
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

from . import codec, synth
from .codec import CodecError, IntersectionMap, V2xMessage

logger = logging.getLogger(__name__)

ENVELOPE = struct.Struct(">Q")
QUEUE_FRAMES = 1024
SOURCES = ("recorded", "synthetic")


class ReplayError(RuntimeError):
    pass


class EmptyLog(ReplayError):
    pass


class BindFailure(ReplayError):
    pass


class ConnectFailure(ReplayError):
    pass


class ClientDropped(ReplayError):
    pass


class LogFormatError(ReplayError):
    pass


@dataclass(frozen=True)
class LogEntry:
    ts_ms: int
    msg: V2xMessage


@dataclass(frozen=True)
class SessionMeta:
    session_id: str
    created_at: str
    source: str
    counts: dict


def count_types(entries: Iterable[LogEntry]) -> dict[str, int]:
    counts = {"BSM": 0, "MAP": 0, "SPAT": 0}
    for e in entries:
        counts[codec.message_type(e.msg)] += 1
    return counts


@dataclass(frozen=True)
class SessionLog:
    meta: SessionMeta
    entries: tuple[LogEntry, ...]

    def __post_init__(self) -> None:
        if self.meta.source not in SOURCES:
            raise LogFormatError(f"unknown source {self.meta.source!r}")
        if any(b.ts_ms < a.ts_ms for a, b in zip(self.entries, self.entries[1:])):
            raise LogFormatError("log timestamps must be non-decreasing")
        if count_types(self.entries) != self.meta.counts:
            raise LogFormatError("header counts do not match the log contents")

    @classmethod
    def build(
        cls,
        messages: Iterable[V2xMessage],
        source: str,
        session_id: Optional[str] = None,
        created_at: Optional[str] = None,
    ) -> "SessionLog":
        """Order messages by time. MAP messages carry no timestamp and are
        placed at the start of the session."""
        msgs = list(messages)
        timed = [m for m in msgs if not isinstance(m, IntersectionMap)]
        t_first = min((codec.message_ts(m) for m in timed), default=0)
        entries = [LogEntry(t_first, m) for m in msgs if isinstance(m, IntersectionMap)]
        entries += sorted((LogEntry(codec.message_ts(m), m) for m in timed), key=lambda e: e.ts_ms)
        meta = SessionMeta(
            session_id or uuid.uuid4().hex[:12],
            created_at or dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            source,
            count_types(entries),
        )
        return cls(meta, tuple(entries))

    @property
    def messages(self) -> list[V2xMessage]:
        return [e.msg for e in self.entries]

    def header_line(self) -> str:
        return json.dumps(
            {
                "session_id": self.meta.session_id,
                "created_at": self.meta.created_at,
                "source": self.meta.source,
                "counts": self.meta.counts,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".partial")
        with tmp.open("w", encoding="utf-8") as fh:
            fh.write(self.header_line() + "\n")
            for e in self.entries:
                fh.write(_entry_line(e.ts_ms, codec.serialize(e.msg)) + "\n")
        os.replace(tmp, path)
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "SessionLog":
        with Path(path).open("r", encoding="utf-8") as fh:
            first = fh.readline()
            try:
                head = json.loads(first)
                meta = SessionMeta(head["session_id"], head["created_at"], head["source"], head["counts"])
            except (ValueError, KeyError, TypeError) as exc:
                raise LogFormatError(f"{path}: bad header line: {exc}") from None
            entries = []
            for n, line in enumerate(fh, 2):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    entries.append(LogEntry(int(obj["ts_ms"]), codec.parse_obj(obj["msg"])))
                except (ValueError, KeyError, TypeError) as exc:
                    raise LogFormatError(f"{path}:{n}: {exc}") from None
        return cls(meta, tuple(entries))


def _entry_line(ts_ms: int, payload_json: str) -> str:
    return f'{{"msg":{payload_json},"ts_ms":{ts_ms}}}'


def session_filename(session_id: str) -> str:
    return f"session-{session_id}.v2xlog"


# ---------------------------------------------------------------- synthetic

def synth_session(
    spec: Union[str, synth.CorridorSpec] = "park-street",
    duration_s: float = 2100.0,
    bsm_hz: float = 10.0,
    spat_hz: float = 9.0,
    noise: Optional[synth.NoiseSpec] = None,
    seed: int = 0,
    max_trips: Optional[int] = None,
) -> tuple[SessionLog, synth.GroundTruth]:
    if isinstance(spec, str):
        try:
            spec = synth.PRESETS[spec]
        except KeyError:
            raise synth.InvalidSpec(f"unknown preset {spec!r}") from None
    out = synth.generate(spec, duration_s, bsm_hz, spat_hz, noise, seed, max_trips=max_trips)
    created = dt.datetime.fromtimestamp(out.truth.t0_ms / 1000, dt.timezone.utc).isoformat(timespec="seconds")
    log = SessionLog.build([*out.maps, *out.spat, *out.bsm], "synthetic", out.session_id, created)
    return log, out.truth


# -------------------------------------------------------------------- serve

def _now_ms() -> int:
    return time.monotonic_ns() // 1_000_000


def parse_addr(addr: Union[str, tuple[str, int]]) -> tuple[str, int]:
    if isinstance(addr, tuple):
        return addr
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


class ReplayServer:
    """Streams a fixed frame list to every client that connects, each client
    paced independently from its own connection time."""

    def __init__(self, frames: Sequence[tuple[int, bytes]], speed_factor: float) -> None:
        if not frames:
            raise EmptyLog("nothing to serve")
        if not speed_factor > 0:
            raise ValueError("speed_factor must be positive")
        self.frames = list(frames)
        self.speed = speed_factor
        self.address: Optional[tuple[str, int]] = None
        self.dropped = 0
        self.served = 0
        self.finished = 0  # clients whose session ended for any reason
        self._loop = asyncio.new_event_loop()
        self._server: Optional[asyncio.base_events.Server] = None
        self._thread = threading.Thread(target=self._loop.run_forever, name="replay-serve", daemon=True)

    def start(self, bind: tuple[str, int]) -> "ReplayServer":
        fut = asyncio.run_coroutine_threadsafe(self._start(bind), self._loop)
        self._thread.start()
        try:
            fut.result(timeout=10)
        except OSError as exc:
            self.close()
            raise BindFailure(f"cannot bind {bind[0]}:{bind[1]}: {exc}") from None
        return self

    async def _start(self, bind):
        self._server = await asyncio.start_server(self._client, bind[0], bind[1])
        self.address = self._server.sockets[0].getsockname()[:2]

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        queue: asyncio.Queue = asyncio.Queue(QUEUE_FRAMES)
        sender = asyncio.create_task(self._drain(queue, writer))
        t0 = time.monotonic()
        ts0 = self.frames[0][0]
        try:
            for ts, frame in self.frames:
                target = t0 + (ts - ts0) / 1000.0 / self.speed
                delay = target - time.monotonic()
                # always yield so the sender task gets to run during bursts
                await asyncio.sleep(delay if delay > 0 else 0)
                if sender.done():
                    return
                try:
                    queue.put_nowait(frame)
                except asyncio.QueueFull:
                    self.dropped += 1
                    logger.warning("%s", ClientDropped(f"client {peer} fell {QUEUE_FRAMES} frames behind"))
                    sender.cancel()
                    return
            await queue.put(None)
            await sender
            self.served += 1
        finally:
            if not sender.done():
                sender.cancel()
            writer.close()
            self.finished += 1

    @staticmethod
    async def _drain(queue: asyncio.Queue, writer: asyncio.StreamWriter) -> None:
        while True:
            frame = await queue.get()
            if frame is None:
                await writer.drain()
                return
            writer.write(ENVELOPE.pack(_now_ms()) + frame)
            if queue.empty():
                try:
                    await writer.drain()
                except ConnectionError:
                    return

    def close(self) -> None:
        async def stop():
            if self._server is not None:
                self._server.close()
                await self._server.wait_closed()

        if self._loop.is_running():
            asyncio.run_coroutine_threadsafe(stop(), self._loop).result(timeout=10)
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join(timeout=10)
        if not self._loop.is_running():
            self._loop.close()

    def __enter__(self) -> "ReplayServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve(log: SessionLog, bind_addr: Union[str, tuple[str, int]] = ("127.0.0.1", 0), speed_factor: float = 1.0) -> ReplayServer:
    if not log.entries:
        raise EmptyLog("session log is empty")
    frames = [(e.ts_ms, codec.frame_encode(e.msg)) for e in log.entries]
    return ReplayServer(frames, speed_factor).start(parse_addr(bind_addr))


def serve_frames(frames: Sequence[tuple[int, bytes]], bind_addr=("127.0.0.1", 0), speed_factor: float = 1.0) -> ReplayServer:
    """Serve pre-encoded frames as given (used to inject bad frames in tests)."""
    return ReplayServer(frames, speed_factor).start(parse_addr(bind_addr))


# ------------------------------------------------------------------- ingest

def _read_exact(fh, n: int) -> Optional[bytes]:
    data = fh.read(n)
    if not data:
        return None
    if len(data) < n:
        raise EOFError("stream ended inside a frame")
    return data


def stream_frames(connect_addr, timeout_s: float = 30.0) -> Iterator[tuple[int, bytes, float]]:
    """Yield ``(stream_ts_ms, payload, receive_monotonic_s)`` until the server
    closes the stream."""
    host, port = parse_addr(connect_addr)
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except OSError as exc:
        raise ConnectFailure(f"cannot connect to {host}:{port}: {exc}") from None
    with sock, sock.makefile("rb") as fh:
        while True:
            head = _read_exact(fh, ENVELOPE.size + 4)
            if head is None:
                return
            (stream_ts,) = ENVELOPE.unpack_from(head)
            (length,) = struct.unpack_from(">I", head, ENVELOPE.size)
            if length > codec.MAX_FRAME_BYTES:
                raise codec.OversizeFrame(f"frame announces {length} bytes")
            payload = _read_exact(fh, length) if length else b""
            yield stream_ts, payload or b"", time.monotonic()


@dataclass
class IngestResult:
    log: SessionLog
    path: Optional[Path]
    corrupt_count: int


def ingest(connect_addr, sink: Union[str, Path, None] = None, timeout_s: float = 30.0) -> IngestResult:
    """Receive a replay stream into a SessionLog. Frames that fail to decode
    are counted and skipped. With ``sink`` set, messages are appended to
    ``<sink>.partial`` as they arrive and the finished log is moved into place."""
    entries: list[LogEntry] = []
    pending_maps: list[V2xMessage] = []
    corrupt = 0
    last_ts: Optional[int] = None
    partial = None
    fh = None
    if sink is not None:
        partial = Path(str(sink) + ".partial")
        fh = partial.open("w", encoding="utf-8")
    try:
        try:
            for _, payload, _ in stream_frames(connect_addr, timeout_s):
                try:
                    msg = codec.parse_line(payload)
                except CodecError as exc:
                    corrupt += 1
                    logger.debug("skipping corrupt frame: %s", exc)
                    continue
                ts = codec.message_ts(msg)
                if ts is None:
                    if last_ts is None:
                        pending_maps.append(msg)
                        continue
                    ts = last_ts
                elif last_ts is None and pending_maps:
                    entries.extend(LogEntry(ts, m) for m in pending_maps)
                    if fh:
                        for m in pending_maps:
                            fh.write(_entry_line(ts, codec.serialize(m)) + "\n")
                    pending_maps.clear()
                if last_ts is not None and ts < last_ts:
                    corrupt += 1
                    logger.debug("skipping out-of-order frame at %d", ts)
                    continue
                last_ts = ts
                entries.append(LogEntry(ts, msg))
                if fh:
                    fh.write(_entry_line(ts, codec.serialize(msg)) + "\n")
        except (EOFError, codec.OversizeFrame, ConnectionError) as exc:
            corrupt += 1
            logger.warning("stream ended abnormally: %s", exc)
        for m in pending_maps:
            entries.append(LogEntry(0, m))
            if fh:
                fh.write(_entry_line(0, codec.serialize(m)) + "\n")
    finally:
        if fh:
            fh.close()
    log = SessionLog.build([], "recorded")
    log = SessionLog(
        SessionMeta(log.meta.session_id, log.meta.created_at, "recorded", count_types(entries)),
        tuple(entries),
    )
    path = None
    if sink is not None:
        path = Path(sink)
        with path.open("w", encoding="utf-8") as out, partial.open("r", encoding="utf-8") as body:
            out.write(log.header_line() + "\n")
            for line in body:
                out.write(line)
        partial.unlink()
    return IngestResult(log, path, corrupt)


def replay_roundtrip(log: SessionLog, speed_factor: float, sink=None) -> IngestResult:
    """Serve ``log`` on an ephemeral loopback port and ingest it back."""
    with serve(log, ("127.0.0.1", 0), speed_factor) as server:
        return ingest(server.address, sink)
