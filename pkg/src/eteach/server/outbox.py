"""Per-connection outbound queue with three lanes.

Control frames keep FIFO order and are never dropped.  Cursor frames occupy
a single latest-wins slot: a new sample replaces an undelivered one.  Audio
frames sit in a bounded deque that drops the oldest chunk when full, so a
slow receiver loses stale audio instead of stalling the sender.

The writer thread drains lanes in priority order control > cursor > audio.
"""

from __future__ import annotations

import threading
from collections import deque


class Outbox:
    def __init__(self, audio_cap: int = 64):
        self._lock = threading.Lock()
        self._wakeup = threading.Condition(self._lock)
        self._control: deque[bytes] = deque()
        self._cursor: bytes | None = None
        self._audio: deque[bytes] = deque(maxlen=audio_cap)
        self._closed = False
        self.audio_dropped = 0

    def put_control(self, frame: bytes) -> None:
        with self._wakeup:
            if self._closed:
                return
            self._control.append(frame)
            self._wakeup.notify()

    def put_cursor(self, frame: bytes) -> None:
        with self._wakeup:
            if self._closed:
                return
            self._cursor = frame
            self._wakeup.notify()

    def put_audio(self, frame: bytes) -> None:
        with self._wakeup:
            if self._closed:
                return
            if len(self._audio) == self._audio.maxlen:
                self.audio_dropped += 1
            self._audio.append(frame)
            self._wakeup.notify()

    def get(self, timeout: float | None = None) -> bytes | None:
        """Next frame to send, or None once closed and drained (or on timeout)."""
        with self._wakeup:
            while True:
                if self._control:
                    return self._control.popleft()
                if self._cursor is not None:
                    frame, self._cursor = self._cursor, None
                    return frame
                if self._audio:
                    return self._audio.popleft()
                if self._closed:
                    return None
                if not self._wakeup.wait(timeout):
                    return None

    def close(self) -> None:
        with self._wakeup:
            self._closed = True
            self._wakeup.notify_all()

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed
