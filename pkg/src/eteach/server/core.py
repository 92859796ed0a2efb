"""Server core: accepts connections, authenticates, and routes every frame.

Thread layout mirrors the role split of the design: one acceptor, one pair
of reader/writer threads per connection (the private command handler), one
shared broadcast path guarded by the hub lock (the public handler, which
also hands out the server-wide seq), one SessionRelay thread per active
session, one DataManager thread owning all persistence, and one sweeper for
idle detection and invite expiry.

Locking rule: DataManager requests are never made while holding the hub
lock, so a faulted or slow data manager cannot stall chat, presence, or the
live-session paths.
"""

from __future__ import annotations

import logging
import socket
import threading
import time

from eteach import protocol
from eteach.protocol import (
    AUDIO, CONTROL, MATERIAL, Frame, FrameError, MalformedControl,
    chunk_material, digest_bytes, encode_frame, make_control, parse_audio,
    parse_control, parse_material,
)
from eteach.server.config import MAX_PAGE_BYTES, MAX_TEXT_BYTES, ServerConfig
from eteach.server.outbox import Outbox
from eteach.server.sessions import LiveSession, PendingInvite, SessionRelay
from eteach.server.store import DataManager, DataUnavailable, MaterialRecord

log = logging.getLogger(__name__)

# Control types a client may send; anything else gets an UNSUPPORTED error.
_CLIENT_TYPES = frozenset((
    "login", "activity", "chat_pub", "chat_prv", "user_list", "mat_list",
    "mat_meta", "mat_need", "upload", "invite", "invite_resp", "page_set",
    "cursor", "session_end",
))


class TcpTransport:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self._wlock = threading.Lock()

    def read_frame(self) -> Frame | None:
        return protocol.read_frame(self._rfile.read)

    def send_bytes(self, data: bytes) -> None:
        with self._wlock:
            self._sock.sendall(data)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class Connection:
    """One client link: transport + outbox + login state + upload buffer."""

    _ids = iter(range(1, 1 << 62))

    def __init__(self, core: "ServerCore", transport):
        self.core = core
        self.transport = transport
        self.conn_id = next(Connection._ids)
        self.outbox = Outbox(core.config.audio_queue_cap)
        self.username: str | None = None
        self.display_name = ""
        self.role = ""
        self.upload: _PendingUpload | None = None
        self.closed = False
        self._writer = threading.Thread(
            target=self._write_loop, name=f"conn{self.conn_id}-writer", daemon=True)

    def start_writer(self) -> None:
        self._writer.start()

    def serve(self) -> None:
        """Reader loop; runs in the acceptor-spawned thread (or WS handler)."""
        try:
            while True:
                frame = self.transport.read_frame()
                if frame is None:
                    break
                self.core.handle_frame(self, frame)
        except MalformedControl:
            self.core.send_error(self, "MALFORMED", detail="control payload rejected")
        except (FrameError, OSError):
            pass
        finally:
            self.core.drop(self)

    def _write_loop(self) -> None:
        try:
            while True:
                data = self.outbox.get()
                if data is None:
                    break
                self.transport.send_bytes(data)
        except OSError:
            pass
        finally:
            self.transport.close()
            self.core.drop(self)

    def join_writer(self, timeout: float) -> None:
        self._writer.join(timeout)


class _PendingUpload:
    def __init__(self, name: str, order: list[bytes], sizes: dict[bytes, int]):
        self.name = name
        self.order = order                      # page digests in display order
        self.sizes = sizes                      # per distinct digest
        self.parts: dict[bytes, dict[int, bytes]] = {d: {} for d in sizes}
        self.done: set[bytes] = set()

    def feed(self, digest: bytes, index: int, payload: bytes) -> bytes | None:
        """Record one chunk; returns reassembled page bytes when complete."""
        self.parts[digest][index] = payload
        got = self.parts[digest]
        if sum(len(p) for p in got.values()) < self.sizes[digest]:
            return None
        data = b"".join(got[i] for i in sorted(got))
        return data

    def complete(self) -> bool:
        return self.done == set(self.sizes)


class _Presence:
    __slots__ = ("status", "last_activity")

    def __init__(self, now: float):
        self.status = "online"
        self.last_activity = now


class ServerCore:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.dm = DataManager(config.users_path, config.bookmarks_path, config.repo_dir)
        self._lock = threading.Lock()
        self._conns: dict[str, Connection] = {}
        self._presence: dict[str, _Presence] = {}
        self._directory: dict[str, tuple[str, str]] = {}   # username -> (display, role)
        self._sessions: dict[int, LiveSession] = {}
        self._session_of: dict[str, LiveSession] = {}
        self._invites: dict[int, PendingInvite] = {}
        self._invite_of: dict[str, PendingInvite] = {}
        self._seq = 0
        self._next_session_id = 1
        self._audio_dropped_closed = 0
        self._stop = threading.Event()
        self._listener: socket.socket | None = None
        self._acceptor: threading.Thread | None = None
        self._sweeper: threading.Thread | None = None
        self._gateway = None

    # --- lifecycle ---

    def start(self) -> "ServerCore":
        self.dm.start()
        for rec in self.dm.request("roster"):
            self._directory[rec.username] = (rec.display_name, rec.role)
        self._listener = socket.create_server(
            (self.config.listen_host, self.config.listen_port), reuse_port=False)
        self._acceptor = threading.Thread(target=self._accept_loop, name="acceptor", daemon=True)
        self._acceptor.start()
        self._sweeper = threading.Thread(target=self._sweep_loop, name="sweeper", daemon=True)
        self._sweeper.start()
        if self.config.enable_gateway:
            from eteach.server.gateway import Gateway
            self._gateway = Gateway(self, self.config.gateway_host, self.config.gateway_port)
            self._gateway.start()
        return self

    @property
    def listen_addr(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    @property
    def gateway_addr(self) -> tuple[str, int] | None:
        return self._gateway.addr if self._gateway else None

    def stop(self) -> None:
        self._stop.set()
        if self._listener:
            try:
                self._listener.close()
            except OSError:
                pass
        if self._gateway:
            self._gateway.stop()
        with self._lock:
            conns = list(self._conns.values())
            relays = [s.relay for s in self._sessions.values() if s.relay]
            self._sessions.clear()
            self._session_of.clear()
        for relay in relays:
            relay.stop()
        for conn in conns:
            conn.outbox.close()
        for conn in conns:
            conn.join_writer(1.0)
            conn.transport.close()
        if self._sweeper:
            self._sweeper.join(timeout=2.0)
        self.dm.stop()

    def set_data_fault(self, on: bool) -> None:
        if not self.config.enable_fault_hooks:
            raise RuntimeError("fault hooks are disabled; enable_fault_hooks=True to use")
        self.dm.set_fault(on)

    def stats(self) -> dict:
        with self._lock:
            dropped = self._audio_dropped_closed + sum(
                c.outbox.audio_dropped for c in self._conns.values())
            return {
                "connections": len(self._conns),
                "active_sessions": len(self._sessions),
                "pending_invites": len(self._invites),
                "broadcast_seq": self._seq,
                "audio_dropped": dropped,
            }

    # --- accept / sweep threads ---

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            if self.config.sndbuf:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self.config.sndbuf)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = Connection(self, TcpTransport(sock))
            conn.start_writer()
            threading.Thread(target=conn.serve, name=f"conn{conn.conn_id}-reader",
                             daemon=True).start()

    def _sweep_loop(self) -> None:
        while not self._stop.wait(self.config.sweep_interval):
            try:
                self._sweep_once()
            except Exception:  # a bad sweep must not stop future sweeps
                log.exception("sweep failed")

    def _sweep_once(self) -> None:
        now = time.monotonic()
        with self._lock:
            for user, entry in self._presence.items():
                if entry.status == "online" and now - entry.last_activity > self.config.idle_threshold:
                    entry.status = "idle"
                    self._broadcast_locked("presence", {"username": user, "status": "idle"})
            expired = [inv for inv in self._invites.values() if now > inv.expires_at]
            for inv in expired:
                self._remove_invite_locked(inv)
                self._end_evt_locked(inv.invite_id, {inv.teacher: "expired",
                                                     inv.student: "expired"})

    # --- seq stamping and sends (hub lock held) ---

    def _stamp_locked(self, t: str, body: dict | None) -> bytes:
        self._seq += 1
        return encode_frame(make_control(t, body, self._seq))

    def _send_locked(self, conn: Connection, t: str, body: dict | None = None) -> None:
        conn.outbox.put_control(self._stamp_locked(t, body))

    def _send_many_locked(self, conns, t: str, body: dict | None = None) -> None:
        """One seq, identical bytes, several recipients (session/private pairs)."""
        data = self._stamp_locked(t, body)
        for conn in conns:
            conn.outbox.put_control(data)

    def _broadcast_locked(self, t: str, body: dict, exclude: str | None = None) -> None:
        data = self._stamp_locked(t, body)
        for user, conn in self._conns.items():
            if user != exclude:
                conn.outbox.put_control(data)

    def send_error(self, conn: Connection, code: str, op: str | None = None,
                   detail: str | None = None) -> None:
        body: dict = {"code": code}
        if op:
            body["op"] = op
        if detail:
            body["detail"] = detail
        with self._lock:
            self._send_locked(conn, "error", body)

    # --- frame entry point (runs on each connection's reader thread) ---

    def handle_frame(self, conn: Connection, frame: Frame) -> None:
        if frame.kind == CONTROL:
            self._handle_control(conn, frame)
        elif frame.kind == AUDIO:
            self._handle_audio(conn, frame)
        elif frame.kind == MATERIAL:
            self._handle_material(conn, frame)

    def _handle_control(self, conn: Connection, frame: Frame) -> None:
        msg = parse_control(frame)
        t = msg["t"]
        body = msg.get("body") or {}
        if t not in _CLIENT_TYPES:
            self.send_error(conn, "UNSUPPORTED", op=t)
            return
        if conn.username is None and t != "login":
            self.send_error(conn, "NOT_AUTHENTICATED", op=t)
            return
        handler = getattr(self, "_h_" + t)
        try:
            handler(conn, body)
        except (KeyError, TypeError, ValueError) as exc:
            self.send_error(conn, "MALFORMED", op=t, detail=str(exc))

    # --- login / presence / chat ---

    def _h_login(self, conn: Connection, body: dict) -> None:
        if conn.username is not None:
            self._reply_login_err(conn, "ALREADY_CONNECTED")
            return
        username = body["username"]
        password = body["password"]
        if not isinstance(username, str) or not isinstance(password, str):
            raise TypeError("username and password must be strings")
        try:
            rec = self.dm.request("auth", username, password)
        except DataUnavailable:
            self._reply_login_err(conn, "DATA_UNAVAILABLE")
            return
        if rec is None:
            self._reply_login_err(conn, "AUTH_FAILED")
            return
        with self._lock:
            if username in self._conns:
                self._reply_login_err_locked(conn, "ALREADY_CONNECTED")
                return
            conn.username = username
            conn.display_name = rec.display_name
            conn.role = rec.role
            self._conns[username] = conn
            self._presence[username] = _Presence(time.monotonic())
            self._directory[username] = (rec.display_name, rec.role)
            self._send_locked(conn, "login_ok", {
                "you": {"username": username, "display_name": rec.display_name,
                        "role": rec.role},
                "users": self._roster_locked(),
            })
            self._broadcast_locked("presence", {"username": username, "status": "online"},
                                   exclude=username)

    def _reply_login_err(self, conn: Connection, code: str) -> None:
        with self._lock:
            self._reply_login_err_locked(conn, code)

    def _reply_login_err_locked(self, conn: Connection, code: str) -> None:
        self._send_locked(conn, "login_err", {"code": code})

    def _roster_locked(self) -> list[dict]:
        roster = []
        for user in sorted(self._directory):
            display, role = self._directory[user]
            entry = self._presence.get(user)
            roster.append({
                "username": user,
                "display_name": display,
                "role": role,
                "status": entry.status if entry else "offline",
            })
        return roster

    def _h_activity(self, conn: Connection, body: dict) -> None:
        with self._lock:
            entry = self._presence.get(conn.username)
            if entry is None:
                return
            entry.last_activity = time.monotonic()
            if entry.status == "idle":
                entry.status = "online"
                self._broadcast_locked("presence", {"username": conn.username,
                                                    "status": "online"})

    def _h_user_list(self, conn: Connection, body: dict) -> None:
        with self._lock:
            self._send_locked(conn, "user_list", {"users": self._roster_locked()})

    def _check_text(self, conn: Connection, text, op: str) -> bool:
        if not isinstance(text, str) or not text:
            self.send_error(conn, "EMPTY_MESSAGE", op=op)
            return False
        if len(text.encode("utf-8")) > MAX_TEXT_BYTES:
            self.send_error(conn, "TOO_LONG", op=op)
            return False
        return True

    def _h_chat_pub(self, conn: Connection, body: dict) -> None:
        text = body["text"]
        if not self._check_text(conn, text, "chat_pub"):
            return
        with self._lock:
            self._broadcast_locked("chat_evt", {
                "from": conn.username, "text": text, "ts": time.time(),
                "scope": "public",
            })

    def _h_chat_prv(self, conn: Connection, body: dict) -> None:
        to = body["to"]
        text = body["text"]
        if not self._check_text(conn, text, "chat_prv"):
            return
        with self._lock:
            if to not in self._directory:
                self._send_locked(conn, "error", {"code": "NO_SUCH_USER", "op": "chat_prv"})
                return
            target = self._conns.get(to)
            if target is None:
                self._send_locked(conn, "error", {"code": "RECIPIENT_OFFLINE", "op": "chat_prv"})
                return
            recipients = {target, conn}
            self._send_many_locked(recipients, "chat_evt", {
                "from": conn.username, "to": to, "text": text, "ts": time.time(),
                "scope": "private",
            })

    # --- materials ---

    def _h_mat_list(self, conn: Connection, body: dict) -> None:
        try:
            records = self.dm.request("list_materials")
        except DataUnavailable:
            self.send_error(conn, "DATA_UNAVAILABLE", op="mat_list")
            return
        with self._lock:
            self._send_locked(conn, "mat_list_ok",
                              {"materials": [r.to_wire() for r in records]})

    def _h_mat_meta(self, conn: Connection, body: dict) -> None:
        material_id = body["material_id"]
        try:
            rec = self.dm.request("get_material", material_id)
        except DataUnavailable:
            self.send_error(conn, "DATA_UNAVAILABLE", op="mat_meta")
            return
        if rec is None:
            self.send_error(conn, "NO_SUCH_DIGEST", op="mat_meta", detail=material_id)
            return
        with self._lock:
            self._send_locked(conn, "mat_meta", {"material": rec.to_wire()})

    def _h_mat_need(self, conn: Connection, body: dict) -> None:
        digest_hex = body["digest"]
        try:
            digest = bytes.fromhex(digest_hex)
        except (TypeError, ValueError):
            digest = b""
        if len(digest) != 32:
            self.send_error(conn, "NO_SUCH_DIGEST", op="mat_need")
            return
        try:
            data = self.dm.request("resolve", digest)
        except DataUnavailable:
            # the digest rides along so the client can abandon that fetch
            self.send_error(conn, "DATA_UNAVAILABLE", op="mat_need", detail=digest_hex)
            return
        if data is None:
            self.send_error(conn, "NO_SUCH_DIGEST", op="mat_need", detail=digest_hex)
            return
        for chunk in chunk_material(data):
            conn.outbox.put_control(encode_frame(protocol.encode_material(chunk)))
        with self._lock:
            self._send_locked(conn, "mat_done", {"digest": digest_hex, "size": len(data)})

    def _h_upload(self, conn: Connection, body: dict) -> None:
        if conn.role != "teacher":
            self.send_error(conn, "NOT_TEACHER", op="upload")
            return
        pages = body["pages"]
        if not isinstance(pages, list) or not pages:
            self.send_error(conn, "EMPTY_MATERIAL", op="upload")
            return
        name = str(body.get("name", "material"))
        order: list[bytes] = []
        sizes: dict[bytes, int] = {}
        for page in pages:
            digest = bytes.fromhex(page["digest"])
            size = int(page["size"])
            if len(digest) != 32:
                raise ValueError("page digest must be 64 hex chars")
            if size > MAX_PAGE_BYTES:
                self.send_error(conn, "PAGE_TOO_LARGE", op="upload")
                return
            if size < 0:
                raise ValueError("negative page size")
            order.append(digest)
            sizes[digest] = size
        conn.upload = _PendingUpload(name, order, sizes)
        # zero-byte pages arrive as a single empty chunk, so every digest
        # still gets at least one MATERIAL frame; nothing to finalize here.

    def _handle_material(self, conn: Connection, frame: Frame) -> None:
        if conn.username is None:
            self.send_error(conn, "NOT_AUTHENTICATED", op="upload")
            return
        up = conn.upload
        if up is None:
            self.send_error(conn, "MALFORMED", op="upload", detail="no upload in progress")
            return
        chunk = parse_material(frame)
        if chunk.digest not in up.sizes:
            self.send_error(conn, "NO_SUCH_DIGEST", op="upload")
            return
        if chunk.index >= protocol.chunk_count(up.sizes[chunk.digest]):
            self.send_error(conn, "OUT_OF_RANGE", op="upload")
            return
        data = up.feed(chunk.digest, chunk.index, chunk.payload)
        if data is None:
            return
        if digest_bytes(data) != chunk.digest:
            conn.upload = None
            self.send_error(conn, "DIGEST_MISMATCH", op="upload")
            return
        up.done.add(chunk.digest)
        if not up.complete():
            return
        conn.upload = None
        page_bytes: dict[bytes, bytes] = {}
        for digest in up.sizes:
            page_bytes[digest] = b"".join(
                up.parts[digest][i] for i in sorted(up.parts[digest]))
        ordered = [page_bytes[d] for d in up.order]
        try:
            rec = self.dm.request("store_material", up.name, conn.username, ordered)
        except DataUnavailable:
            self.send_error(conn, "DATA_UNAVAILABLE", op="upload")
            return
        with self._lock:
            self._send_locked(conn, "upload_ok", {"material": rec.to_wire()})
            sess = self._session_of.get(conn.username)
            if sess is not None and sess.teacher == conn.username:
                sess.material = rec
                sess.page_index = 0
                self._post_page_locked(sess)
        if sess is not None and sess.teacher == conn.username:
            self._persist_bookmark(sess)

    # --- sessions ---

    def _h_invite(self, conn: Connection, body: dict) -> None:
        if conn.role != "teacher":
            self.send_error(conn, "NOT_TEACHER", op="invite")
            return
        student = body["student"]
        with self._lock:
            target = self._conns.get(student)
            if target is None:
                self._send_locked(conn, "error", {"code": "STUDENT_OFFLINE", "op": "invite"})
                return
            if (conn.username in self._session_of or conn.username in self._invite_of
                    or student in self._session_of or student in self._invite_of):
                self._send_locked(conn, "error", {"code": "BUSY", "op": "invite"})
                return
            sid = self._next_session_id
            self._next_session_id += 1
            inv = PendingInvite(
                invite_id=sid, teacher=conn.username, student=student,
                material_id="", expires_at=time.monotonic() + self.config.invite_expiry)
            self._invites[sid] = inv
            self._invite_of[conn.username] = inv
            self._invite_of[student] = inv
            self._send_locked(target, "invite_evt",
                              {"session_id": sid, "teacher": conn.username})

    def _remove_invite_locked(self, inv: PendingInvite) -> None:
        self._invites.pop(inv.invite_id, None)
        for user in (inv.teacher, inv.student):
            if self._invite_of.get(user) is inv:
                del self._invite_of[user]

    def _end_evt_locked(self, session_id: int, reasons: dict[str, str]) -> None:
        for user, reason in reasons.items():
            conn = self._conns.get(user)
            if conn is not None:
                self._send_locked(conn, "session_end_evt",
                                  {"session_id": session_id, "reason": reason})

    def _h_invite_resp(self, conn: Connection, body: dict) -> None:
        sid = int(body["session_id"])
        accept = bool(body["accept"])
        with self._lock:
            inv = self._invites.get(sid)
            if inv is None or inv.student != conn.username:
                self._send_locked(conn, "error",
                                  {"code": "NO_SUCH_SESSION", "op": "invite_resp"})
                return
            self._remove_invite_locked(inv)
            if time.monotonic() > inv.expires_at:
                self._send_locked(conn, "error", {"code": "EXPIRED", "op": "invite_resp"})
                self._end_evt_locked(sid, {inv.teacher: "expired", inv.student: "expired"})
                return
            if not accept:
                self._end_evt_locked(sid, {inv.teacher: "declined", inv.student: "declined"})
                return
            sess = LiveSession(session_id=sid, teacher=inv.teacher, student=inv.student,
                               material=None)
            self._sessions[sid] = sess
            self._session_of[inv.teacher] = sess
            self._session_of[inv.student] = sess
        # bookmark lookup happens outside the hub lock: a faulted data
        # manager must not block session start
        material, page_index = self._initial_page(sess.student)
        relay = SessionRelay(sess, self._deliver_cursor, self._deliver_audio,
                             min_interval=self.config.cursor_min_interval)
        with self._lock:
            if self._sessions.get(sid) is not sess:
                return                      # ended while we looked up the bookmark
            sess.relay = relay
            page = None
            if material is not None:
                sess.material = material
                sess.page_index = page_index
                page = self._page_body_locked(sess)
            parties = [c for c in (self._conns.get(sess.teacher),
                                   self._conns.get(sess.student)) if c]
            self._send_many_locked(parties, "session_start", {
                "session_id": sid, "teacher": sess.teacher, "student": sess.student,
                "page": page,
            })
            if page is not None:
                self._post_page_locked(sess)
        relay.start()

    def _initial_page(self, student: str) -> tuple[MaterialRecord | None, int]:
        try:
            bm = self.dm.request("bookmark_latest", student)
            if bm is None:
                return None, 0
            rec = self.dm.request("get_material", bm.material_id)
        except DataUnavailable:
            return None, 0
        if rec is None or not 0 <= bm.page_index < rec.page_count:
            return None, 0
        return rec, bm.page_index

    def _page_body_locked(self, sess: LiveSession) -> dict:
        rec = sess.material
        return {
            "session_id": sess.session_id,
            "material_id": rec.material_id,
            "page_index": sess.page_index,
            "digest": rec.pages[sess.page_index].hex(),
            "size": rec.sizes[sess.page_index],
        }

    def _post_page_locked(self, sess: LiveSession) -> None:
        parties = [c for c in (self._conns.get(sess.teacher),
                               self._conns.get(sess.student)) if c]
        self._send_many_locked(parties, "page_evt", self._page_body_locked(sess))

    def _persist_bookmark(self, sess: LiveSession) -> None:
        teacher = sess.teacher
        material_id = sess.material.material_id
        page_index = sess.page_index

        def flag(_exc):
            with self._lock:
                tconn = self._conns.get(teacher)
                if tconn is not None:
                    self._send_locked(tconn, "error", {
                        "code": "DATA_UNAVAILABLE", "op": "bookmark",
                        "detail": "page shown but bookmark not saved"})

        self.dm.post("bookmark_set", sess.student, material_id, page_index,
                     on_error=flag)

    def _h_page_set(self, conn: Connection, body: dict) -> None:
        sid = int(body["session_id"])
        material_id = body["material_id"]
        page_index = int(body["page_index"])
        with self._lock:
            sess = self._session_of.get(conn.username)
            if sess is None or sess.session_id != sid:
                self._send_locked(conn, "error",
                                  {"code": "NOT_IN_SESSION", "op": "page_set"})
                return
            if conn.username != sess.teacher:
                self._send_locked(conn, "error",
                                  {"code": "NOT_TEACHER_PARTY", "op": "page_set"})
                return
            rec = sess.material if (sess.material is not None
                                    and sess.material.material_id == material_id) else None
        if rec is None:
            # new material for this session: needs the data manager
            try:
                rec = self.dm.request("get_material", material_id)
            except DataUnavailable:
                self.send_error(conn, "DATA_UNAVAILABLE", op="page_set")
                return
            if rec is None:
                self.send_error(conn, "BAD_PAGE", op="page_set", detail=material_id)
                return
        if not 0 <= page_index < rec.page_count:
            self.send_error(conn, "BAD_PAGE", op="page_set")
            return
        with self._lock:
            if self._sessions.get(sid) is not sess:
                self._send_locked(conn, "error",
                                  {"code": "NOT_IN_SESSION", "op": "page_set"})
                return
            sess.material = rec
            sess.page_index = page_index
            self._post_page_locked(sess)
        self._persist_bookmark(sess)

    def _h_cursor(self, conn: Connection, body: dict) -> None:
        x = body["x"]
        y = body["y"]
        for v in (x, y):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError("cursor coordinates must be numbers")
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            self.send_error(conn, "OUT_OF_RANGE", op="cursor")
            return
        sid = int(body["session_id"])
        with self._lock:
            sess = self._session_of.get(conn.username)
            if sess is None or sess.session_id != sid:
                self._send_locked(conn, "error",
                                  {"code": "NOT_IN_SESSION", "op": "cursor"})
                return
            relay = sess.relay
        if relay is not None:
            relay.submit_cursor(conn.username, float(x), float(y))

    def _deliver_cursor(self, to_user: str, from_user: str, x: float, y: float) -> None:
        with self._lock:
            sess = self._session_of.get(to_user)
            if sess is None or from_user not in sess.parties():
                return
            conn = self._conns.get(to_user)
            if conn is None:
                return
            # session-private, latest-wins: no broadcast seq on cursor_evt
            frame = make_control("cursor_evt", {
                "session_id": sess.session_id, "from": from_user, "x": x, "y": y})
            conn.outbox.put_cursor(encode_frame(frame))

    def _deliver_audio(self, to_user: str, raw: bytes) -> None:
        with self._lock:
            if self._session_of.get(to_user) is None:
                return
            conn = self._conns.get(to_user)
            if conn is not None:
                conn.outbox.put_audio(raw)

    def _handle_audio(self, conn: Connection, frame: Frame) -> None:
        if conn.username is None:
            self.send_error(conn, "NOT_AUTHENTICATED", op="audio")
            return
        chunk = parse_audio(frame)
        with self._lock:
            sess = self._session_of.get(conn.username)
            if sess is None:
                self._send_locked(conn, "error",
                                  {"code": "NOT_IN_SESSION", "op": "audio"})
                return
            if chunk.session_id != sess.session_id:
                self._send_locked(conn, "error",
                                  {"code": "SESSION_MISMATCH", "op": "audio"})
                return
            relay = sess.relay
        if relay is not None:
            relay.submit_audio(conn.username, encode_frame(frame))

    def _h_session_end(self, conn: Connection, body: dict) -> None:
        sid = int(body["session_id"])
        user = conn.username
        relay = None
        with self._lock:
            sess = self._session_of.get(user)
            if sess is not None and sess.session_id == sid:
                relay = self._detach_session_locked(sess)
                peer = sess.peer_of(user)
                self._end_evt_locked(sid, {user: "self_ended", peer: "peer_ended"})
            else:
                inv = self._invite_of.get(user)
                if inv is not None and inv.invite_id == sid:
                    self._remove_invite_locked(inv)
                    other = inv.student if user == inv.teacher else inv.teacher
                    self._end_evt_locked(sid, {user: "self_ended", other: "peer_ended"})
                else:
                    self._send_locked(conn, "error",
                                      {"code": "NO_SUCH_SESSION", "op": "session_end"})
        if relay is not None:
            relay.stop()

    def _detach_session_locked(self, sess: LiveSession) -> SessionRelay | None:
        self._sessions.pop(sess.session_id, None)
        for user in sess.parties():
            if self._session_of.get(user) is sess:
                del self._session_of[user]
        return sess.relay

    # --- disconnect ---

    def drop(self, conn: Connection) -> None:
        relay = None
        with self._lock:
            if conn.closed:
                return
            conn.closed = True
            self._audio_dropped_closed += conn.outbox.audio_dropped
            user = conn.username
            if user is not None and self._conns.get(user) is conn:
                del self._conns[user]
                self._presence.pop(user, None)
                self._broadcast_locked("presence", {"username": user, "status": "offline"})
                sess = self._session_of.get(user)
                if sess is not None:
                    relay = self._detach_session_locked(sess)
                    self._end_evt_locked(sess.session_id,
                                         {sess.peer_of(user): "peer_disconnected"})
                inv = self._invite_of.get(user)
                if inv is not None:
                    self._remove_invite_locked(inv)
                    other = inv.student if user == inv.teacher else inv.teacher
                    self._end_evt_locked(inv.invite_id, {other: "peer_disconnected"})
        conn.outbox.close()
        conn.transport.close()
        if relay is not None:
            relay.stop()
