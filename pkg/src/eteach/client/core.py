"""Headless client: the wire protocol surfaced as an ordered event stream.

Whatever front-end sits on top (browser UI, scripted harness, tests) consumes
the same ClientEvent queue via next_event, so they are interchangeable.
Three threads per client: a reader (wire to event queue), a writer (command
queue to wire), and a ticker that owns the cursor cadence and activity
coalescing windows.

Failures of user-initiated operations come back as Errored events on the
same queue, keeping the consumer's view single-sourced; only calls on an
already-dead handle raise (ClientDisconnected).
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from eteach import protocol
from eteach.protocol import (
    AUDIO, CONTROL, MATERIAL, AudioChunk, Frame, FrameError, MalformedControl,
    Oversize, digest_bytes, encode_frame, make_control, parse_audio,
    parse_control, parse_material,
)
from eteach.client.cache import PageCache


# --- events ---

@dataclass(frozen=True)
class UserListUpdated:
    users: tuple


@dataclass(frozen=True)
class PresenceChanged:
    username: str
    status: str


@dataclass(frozen=True)
class ChatReceived:
    sender: str
    text: str
    private: bool
    seq: int | None


@dataclass(frozen=True)
class InviteReceived:
    session_id: int
    teacher: str


@dataclass(frozen=True)
class SessionStarted:
    session_id: int
    peer: str


@dataclass(frozen=True)
class PageChanged:
    material_id: str
    page_index: int
    digest: str
    bytes_ready: bool


@dataclass(frozen=True)
class PageBytesReady:
    digest: str


@dataclass(frozen=True)
class PeerCursor:
    x: float
    y: float


@dataclass(frozen=True)
class AudioReceived:
    seq: int
    payload: bytes


@dataclass(frozen=True)
class SessionEnded:
    reason: str


@dataclass(frozen=True)
class MaterialListed:
    materials: tuple


@dataclass(frozen=True)
class Errored:
    code: str
    context: str = ""


class ClientError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


class ConnectFailed(ClientError):
    def __init__(self, detail: str = ""):
        super().__init__("CONNECT_FAILED", detail)


class LoginFailed(ClientError):
    pass


class ClientDisconnected(ClientError):
    def __init__(self):
        super().__init__("DISCONNECTED")


@dataclass
class ClientConfig:
    host: str
    port: int
    cache_dir: Path
    cursor_period: float = 1.0
    activity_coalesce: float = 30.0
    connect_timeout: float = 5.0
    rcvbuf: int | None = None

    def __post_init__(self):
        self.cache_dir = Path(self.cache_dir)
        if self.cursor_period <= 0 or self.activity_coalesce <= 0:
            raise ValueError("periods must be positive")


class _Fetch:
    __slots__ = ("size", "parts", "retried")

    def __init__(self, size: int):
        self.size = size
        self.parts: dict[int, bytes] = {}
        self.retried = False


class ETeachClient:
    """Use connect_and_login to construct; the handle is thread-safe."""

    def __init__(self, config: ClientConfig, sock: socket.socket,
                 username: str, role: str, display_name: str):
        self.config = config
        self.username = username
        self.role = role
        self.display_name = display_name
        self.cache = PageCache(config.cache_dir)
        self._sock = sock
        self._events: queue.Queue = queue.Queue()
        self._sendq: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._dead = False
        self._terminal_sent = False
        self._stop = threading.Event()
        self._read_gate = threading.Event()
        self._read_gate.set()
        # session state
        self._session_id: int | None = None
        self._peer: str | None = None
        self._audio_seq = 0
        self._cursor: tuple[float, float] | None = None
        self._cursor_sent_at = float("-inf")
        self._activity_sent_at = float("-inf")
        self._fetch: dict[bytes, _Fetch] = {}
        # instrumentation for the harness: raw-bytes taps and fault hooks
        self.wire_in_hook = None
        self.wire_out_hook = None
        self.inbound_transform = None
        # wire counters (frames that actually left / arrived)
        self.sent_frames = {"control": 0, "audio": 0, "material": 0}
        self.recv_frames = {"control": 0, "audio": 0, "material": 0}
        self.activity_frames_sent = 0
        self.cursor_frames_sent = 0
        self._threads = [
            threading.Thread(target=self._read_loop, name=f"{username}-reader", daemon=True),
            threading.Thread(target=self._write_loop, name=f"{username}-writer", daemon=True),
            threading.Thread(target=self._tick_loop, name=f"{username}-ticker", daemon=True),
        ]

    def _start(self) -> None:
        for t in self._threads:
            t.start()

    # --- consumption ---

    def next_event(self, timeout: float | None = None):
        """Next ClientEvent in wire order, or None on timeout."""
        try:
            return self._events.get(timeout=timeout)
        except queue.Empty:
            return None

    def _emit(self, event) -> None:
        self._events.put(event)

    # --- lifecycle ---

    @property
    def connected(self) -> bool:
        return not self._dead

    @property
    def session_id(self) -> int | None:
        return self._session_id

    def close(self) -> None:
        self._shutdown()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout=2.0)

    def _shutdown(self) -> None:
        with self._lock:
            if self._dead:
                return
            self._dead = True
        self._stop.set()
        self._read_gate.set()
        self._sendq.put(None)
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass

    def _terminal(self) -> None:
        with self._lock:
            if self._terminal_sent:
                return
            self._terminal_sent = True
        self._emit(Errored("DISCONNECTED"))

    # --- fault hooks used by the scenario harness ---

    def pause_reading(self) -> None:
        self._read_gate.clear()

    def resume_reading(self) -> None:
        self._read_gate.set()

    # --- commands ---

    def _post(self, frame: Frame) -> None:
        if self._dead:
            raise ClientDisconnected()
        self._sendq.put(encode_frame(frame))

    def _post_control(self, t: str, body: dict | None = None) -> None:
        self._post(make_control(t, body))

    def send_public(self, text: str) -> None:
        self._post_control("chat_pub", {"text": text})

    def send_private(self, to: str, text: str) -> None:
        self._post_control("chat_prv", {"to": to, "text": text})

    def report_activity(self) -> None:
        """Coalesced: at most one activity frame per activity_coalesce window."""
        if self._dead:
            return
        with self._lock:
            now = time.monotonic()
            if now - self._activity_sent_at < self.config.activity_coalesce:
                return
            self._activity_sent_at = now
        self._sendq.put(encode_frame(make_control("activity")))
        self.activity_frames_sent += 1

    def request_user_list(self) -> None:
        self._post_control("user_list")

    def list_materials(self) -> None:
        self._post_control("mat_list")

    def material_meta(self, material_id: str) -> None:
        self._post_control("mat_meta", {"material_id": material_id})

    def upload_material(self, name: str, pages: list[bytes]) -> None:
        if self.role != "teacher":
            self._emit(Errored("NOT_TEACHER", "upload"))
            return
        if not pages:
            self._emit(Errored("EMPTY_MATERIAL", "upload"))
            return
        manifest = []
        distinct: dict[bytes, bytes] = {}
        for data in pages:
            digest = digest_bytes(data)
            manifest.append({"digest": digest.hex(), "size": len(data)})
            distinct.setdefault(digest, data)
        self._post_control("upload", {"name": name, "pages": manifest})
        for digest, data in distinct.items():
            for chunk in protocol.chunk_material(data):
                self._post(protocol.encode_material(chunk))

    def invite(self, student: str) -> None:
        if self.role != "teacher":
            self._emit(Errored("NOT_TEACHER", "invite"))
            return
        self._post_control("invite", {"student": student})

    def respond_invite(self, session_id: int, accept: bool) -> None:
        self._post_control("invite_resp", {"session_id": session_id, "accept": accept})

    def set_page(self, material_id: str, page_index: int) -> None:
        if self.role != "teacher":
            self._emit(Errored("NOT_TEACHER", "page_set"))
            return
        sid = self._session_id
        if sid is None:
            self._emit(Errored("NOT_IN_SESSION", "page_set"))
            return
        self._post_control("page_set", {"session_id": sid, "material_id": material_id,
                                        "page_index": page_index})

    def end_session(self) -> None:
        sid = self._session_id
        if sid is None:
            self._emit(Errored("NOT_IN_SESSION", "session_end"))
            return
        self._post_control("session_end", {"session_id": sid})

    def set_cursor(self, x: float, y: float) -> None:
        """Record the latest position; the ticker flushes it once per period."""
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            self._emit(Errored("OUT_OF_RANGE", "cursor"))
            return
        send_now = False
        with self._lock:
            if self._session_id is None:
                self._emit(Errored("NOT_IN_SESSION", "cursor"))
                return
            self._cursor = (float(x), float(y))
            now = time.monotonic()
            if now - self._cursor_sent_at >= self.config.cursor_period:
                self._cursor_sent_at = now
                send_now = True
        if send_now:
            self._send_cursor()

    def _send_cursor(self) -> None:
        with self._lock:
            sid, cur = self._session_id, self._cursor
        if sid is None or cur is None or self._dead:
            return
        self._sendq.put(encode_frame(make_control(
            "cursor", {"session_id": sid, "x": cur[0], "y": cur[1]})))
        self.cursor_frames_sent += 1

    def send_audio(self, payload: bytes) -> None:
        with self._lock:
            sid = self._session_id
            if sid is None:
                self._emit(Errored("NOT_IN_SESSION", "audio"))
                return
            self._audio_seq += 1
            seq = self._audio_seq
        try:
            frame = protocol.encode_audio(AudioChunk(sid, seq, payload))
        except Oversize:
            self._emit(Errored("OVERSIZE", "audio"))
            return
        self._post(frame)

    # --- writer thread ---

    def _write_loop(self) -> None:
        try:
            while True:
                data = self._sendq.get()
                if data is None:
                    break
                if self.wire_out_hook:
                    self.wire_out_hook(data)
                self._sock.sendall(data)
                kind = data[4]
                key = {CONTROL: "control", AUDIO: "audio", MATERIAL: "material"}[kind]
                self.sent_frames[key] += 1
        except OSError:
            pass
        finally:
            self._shutdown()

    # --- ticker thread: cursor cadence ---

    def _tick_loop(self) -> None:
        period = self.config.cursor_period
        while not self._stop.is_set():
            with self._lock:
                active = self._session_id is not None and self._cursor is not None
                due = self._cursor_sent_at + period
            now = time.monotonic()
            if active and now >= due:
                with self._lock:
                    self._cursor_sent_at = now
                self._send_cursor()
                wait = period
            elif active:
                wait = due - now
            else:
                wait = period / 4
            self._stop.wait(max(0.005, wait))

    # --- reader thread ---

    def _read_exact(self, n: int) -> bytes | None:
        parts = []
        got = 0
        while got < n:
            piece = self._sock.recv(n - got)
            if not piece:
                return None
            parts.append(piece)
            got += len(piece)
        return b"".join(parts)

    def _read_raw_frame(self) -> bytes | None:
        header = self._read_exact(protocol.HEADER_LEN)
        if header is None:
            return None
        length = int.from_bytes(header[:4], "big")
        if length > protocol.MAX_FRAME:
            raise Oversize(f"declared payload of {length} bytes")
        payload = self._read_exact(length) if length else b""
        if payload is None:
            raise protocol.Truncated("stream ended mid-frame")
        return header + payload

    def _read_loop(self) -> None:
        try:
            while not self._stop.is_set():
                raw = self._read_raw_frame()
                if raw is None:
                    break
                # gate sits between read and dispatch so a pause also holds
                # back the frame the reader was already blocked on
                self._read_gate.wait()
                if self.inbound_transform:
                    raw = self.inbound_transform(raw)
                if self.wire_in_hook:
                    self.wire_in_hook(raw)
                try:
                    decoded = protocol.decode_frame(raw)
                except MalformedControl:
                    self._emit(Errored("MALFORMED", "inbound"))
                    continue
                if decoded is None:
                    continue
                frame, _ = decoded
                key = {CONTROL: "control", AUDIO: "audio", MATERIAL: "material"}[frame.kind]
                self.recv_frames[key] += 1
                self._dispatch(frame)
        except (FrameError, OSError):
            pass
        finally:
            self._shutdown()
            self._terminal()

    # --- inbound frame handling ---

    def _dispatch(self, frame: Frame) -> None:
        if frame.kind == AUDIO:
            chunk = parse_audio(frame)
            if chunk.session_id == self._session_id:
                self._emit(AudioReceived(chunk.seq, chunk.payload))
            return
        if frame.kind == MATERIAL:
            self._on_material(parse_material(frame))
            return
        msg = parse_control(frame)
        handler = getattr(self, "_on_" + msg["t"], None)
        if handler is not None:
            handler(msg.get("body") or {}, msg.get("seq"))

    def _on_user_list(self, body: dict, seq) -> None:
        self._emit(UserListUpdated(tuple(body.get("users", ()))))

    def _on_presence(self, body: dict, seq) -> None:
        self._emit(PresenceChanged(body["username"], body["status"]))

    def _on_chat_evt(self, body: dict, seq) -> None:
        self._emit(ChatReceived(body["from"], body["text"],
                                body.get("scope") == "private", seq))

    def _on_invite_evt(self, body: dict, seq) -> None:
        self._emit(InviteReceived(body["session_id"], body["teacher"]))

    def _on_session_start(self, body: dict, seq) -> None:
        with self._lock:
            self._session_id = body["session_id"]
            self._peer = (body["teacher"] if self.username == body["student"]
                          else body["student"])
            self._audio_seq = 0
            self._cursor = None
            self._cursor_sent_at = float("-inf")
        self._emit(SessionStarted(body["session_id"], self._peer))

    def _on_session_end_evt(self, body: dict, seq) -> None:
        with self._lock:
            if self._session_id == body["session_id"]:
                self._session_id = None
                self._peer = None
                self._cursor = None
        self._emit(SessionEnded(body["reason"]))

    def _on_cursor_evt(self, body: dict, seq) -> None:
        if body.get("session_id") == self._session_id:
            self._emit(PeerCursor(body["x"], body["y"]))

    def _on_page_evt(self, body: dict, seq) -> None:
        digest = bytes.fromhex(body["digest"])
        ready = self.cache.has(digest)
        self._emit(PageChanged(body["material_id"], body["page_index"],
                               body["digest"], ready))
        if ready or digest in self._fetch:
            return
        self._fetch[digest] = _Fetch(body["size"])
        self._request_page(digest)

    def _request_page(self, digest: bytes) -> None:
        if not self._dead:
            self._sendq.put(encode_frame(make_control("mat_need", {"digest": digest.hex()})))

    def _on_material(self, chunk) -> None:
        entry = self._fetch.get(chunk.digest)
        if entry is None:
            return
        entry.parts[chunk.index] = chunk.payload

    def _on_mat_done(self, body: dict, seq) -> None:
        digest = bytes.fromhex(body["digest"])
        entry = self._fetch.get(digest)
        if entry is None:
            return
        data = b"".join(entry.parts[i] for i in sorted(entry.parts))
        if len(data) != entry.size:
            self._finish_fetch(digest, entry, "TRANSFER_INCOMPLETE")
            return
        if digest_bytes(data) != digest:
            self._finish_fetch(digest, entry, "DIGEST_MISMATCH")
            return
        self.cache.put(digest, data)
        del self._fetch[digest]
        self._emit(PageBytesReady(digest.hex()))

    def _finish_fetch(self, digest: bytes, entry: _Fetch, code: str) -> None:
        # bad reassembly: discard, retry the transfer once, then give up
        self._emit(Errored(code, "mat_need"))
        if entry.retried:
            del self._fetch[digest]
            return
        entry.retried = True
        entry.parts = {}
        self._request_page(digest)

    def _on_mat_list_ok(self, body: dict, seq) -> None:
        self._emit(MaterialListed(tuple(body.get("materials", ()))))

    def _on_mat_meta(self, body: dict, seq) -> None:
        self._emit(MaterialListed((body["material"],)))

    def _on_upload_ok(self, body: dict, seq) -> None:
        self._emit(MaterialListed((body["material"],)))

    def _on_error(self, body: dict, seq) -> None:
        op = body.get("op", "")
        if op == "mat_need":
            # transfer refused server-side: forget the fetch so a later
            # page_evt for the same digest can start over
            try:
                digest = bytes.fromhex(body.get("detail", ""))
            except ValueError:
                digest = b""
            if len(digest) == 32:
                self._fetch.pop(digest, None)
        self._emit(Errored(body.get("code", "UNKNOWN"), op))


def connect_and_login(config: ClientConfig, username: str, password: str) -> ETeachClient:
    """Connect, authenticate, and return a live client handle.

    The first event on the handle is the UserListUpdated snapshot from login.
    Raises ConnectFailed or LoginFailed; never returns a half-open handle.
    """
    try:
        if config.rcvbuf:
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, config.rcvbuf)
            sock.settimeout(config.connect_timeout)
            sock.connect((config.host, config.port))
        else:
            sock = socket.create_connection((config.host, config.port),
                                            timeout=config.connect_timeout)
    except OSError as exc:
        raise ConnectFailed(str(exc)) from None
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        sock.sendall(encode_frame(make_control("login", {
            "username": username, "password": password, "v": protocol.PROTO_VERSION})))
        # unbuffered read: nothing may be prefetched past the login reply,
        # the reader thread takes over the socket right after
        frame = protocol.read_frame(sock.recv)
        if frame is None or frame.kind != CONTROL:
            raise ConnectFailed("server closed during login")
        msg = parse_control(frame)
        if msg["t"] == "login_err":
            raise LoginFailed(msg["body"]["code"])
        if msg["t"] != "login_ok":
            raise ConnectFailed(f"unexpected reply {msg['t']}")
    except (FrameError, OSError) as exc:
        sock.close()
        raise ConnectFailed(str(exc)) from None
    except LoginFailed:
        sock.close()
        raise
    sock.settimeout(None)
    body = msg["body"]
    you = body["you"]
    client = ETeachClient(config, sock, you["username"], you["role"], you["display_name"])
    client._emit(UserListUpdated(tuple(body.get("users", ()))))
    client._start()
    return client
