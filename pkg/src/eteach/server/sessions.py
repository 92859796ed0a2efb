"""Live voice/teaching sessions and the per-session relay thread.

Each active session gets one SessionRelay.  The relay forwards audio chunks
in arrival order and rate-limits cursor samples to one per sender per
``min_interval`` seconds: a sample that arrives too early is parked (newer
samples overwrite it) and sent when the interval elapses, so a steady 1 Hz
sender is relayed at 1 Hz, never halved.

The relay holds no sockets.  It hands finished deliveries to callables the
server core provides, which look up the recipient's connection and pick the
outbox lane.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

from eteach.server.store import MaterialRecord


@dataclass
class PendingInvite:
    invite_id: int
    teacher: str
    student: str
    material_id: str
    expires_at: float


@dataclass
class LiveSession:
    session_id: int
    teacher: str
    student: str
    material: MaterialRecord
    page_index: int = 0
    relay: "SessionRelay | None" = field(default=None, repr=False)

    def parties(self) -> tuple[str, str]:
        return (self.teacher, self.student)

    def peer_of(self, username: str) -> str:
        if username == self.teacher:
            return self.student
        if username == self.student:
            return self.teacher
        raise KeyError(username)


class _Direction:
    __slots__ = ("last_sent", "pending")

    def __init__(self):
        self.last_sent = float("-inf")
        self.pending: tuple[float, float] | None = None


class SessionRelay:
    """Forwards one session's cursor and audio traffic between its two parties."""

    def __init__(self, session: LiveSession, deliver_cursor, deliver_audio,
                 min_interval: float = 1.0, clock=time.monotonic):
        self.session = session
        self._deliver_cursor = deliver_cursor    # (to_user, from_user, x, y) -> None
        self._deliver_audio = deliver_audio      # (to_user, frame_bytes) -> None
        self._min_interval = min_interval
        self._clock = clock
        self._inbox: queue.Queue = queue.Queue()
        self._dirs = {session.teacher: _Direction(), session.student: _Direction()}
        self._thread = threading.Thread(
            target=self._run, name=f"relay-{session.session_id}", daemon=True)
        self.cursor_in = 0
        self.cursor_out = 0
        self.audio_relayed = 0

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._inbox.put(None)
        self._thread.join(timeout=2.0)

    def submit_cursor(self, sender: str, x: float, y: float) -> None:
        self._inbox.put(("cursor", sender, x, y))

    def submit_audio(self, sender: str, frame: bytes) -> None:
        self._inbox.put(("audio", sender, frame))

    def _relay_cursor(self, sender: str, x: float, y: float) -> None:
        peer = self.session.peer_of(sender)
        self._deliver_cursor(peer, sender, x, y)
        self.cursor_out += 1

    def _next_deadline(self) -> float | None:
        deadline = None
        for d in self._dirs.values():
            if d.pending is not None:
                due = d.last_sent + self._min_interval
                deadline = due if deadline is None else min(deadline, due)
        return deadline

    def _flush_due(self) -> None:
        now = self._clock()
        for sender, d in self._dirs.items():
            if d.pending is not None and now - d.last_sent >= self._min_interval:
                x, y = d.pending
                d.pending = None
                d.last_sent = now
                self._relay_cursor(sender, x, y)

    def _run(self) -> None:
        while True:
            deadline = self._next_deadline()
            timeout = None if deadline is None else max(0.0, deadline - self._clock())
            try:
                item = self._inbox.get(timeout=timeout)
            except queue.Empty:
                self._flush_due()
                continue
            if item is None:
                break
            if item[0] == "audio":
                _, sender, frame = item
                try:
                    peer = self.session.peer_of(sender)
                except KeyError:
                    continue
                self._deliver_audio(peer, frame)
                self.audio_relayed += 1
            else:
                _, sender, x, y = item
                d = self._dirs.get(sender)
                if d is None:
                    continue
                self.cursor_in += 1
                now = self._clock()
                if now - d.last_sent >= self._min_interval:
                    d.pending = None
                    d.last_sent = now
                    self._relay_cursor(sender, x, y)
                else:
                    d.pending = (x, y)
            self._flush_due()
