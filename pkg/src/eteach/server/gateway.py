"""WebSocket gateway: one binary message = exactly one protocol frame.

The browser UI shares the byte-level codec with every other front-end; this
adapter only swaps the stream transport for message framing, then hands the
connection to the same core dispatch as the TCP listener.
"""

from __future__ import annotations

import logging
import threading

from websockets.exceptions import ConnectionClosed
from websockets.sync.server import serve

from eteach import protocol
from eteach.protocol import Frame, FrameError

log = logging.getLogger(__name__)


class WsTransport:
    def __init__(self, ws):
        self._ws = ws
        self._wlock = threading.Lock()

    def read_frame(self) -> Frame | None:
        try:
            message = self._ws.recv()
        except (ConnectionClosed, OSError):
            return None
        if isinstance(message, str):
            raise FrameError("text messages are not part of the protocol")
        decoded = protocol.decode_frame(message)
        if decoded is None:
            raise FrameError("websocket message holds a partial frame")
        frame, consumed = decoded
        if consumed != len(message):
            raise FrameError("websocket message holds more than one frame")
        return frame

    def send_bytes(self, data: bytes) -> None:
        # the writer loop expects stream semantics: a dead peer is an OSError
        try:
            with self._wlock:
                self._ws.send(data)
        except ConnectionClosed as exc:
            raise BrokenPipeError(str(exc)) from exc

    def close(self) -> None:
        try:
            self._ws.close()
        except Exception:
            pass


class Gateway:
    def __init__(self, core, host: str, port: int):
        self._core = core
        self._server = serve(self._handle, host, port)
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="ws-gateway", daemon=True)

    def _handle(self, ws) -> None:
        from eteach.server.core import Connection
        conn = Connection(self._core, WsTransport(ws))
        conn.start_writer()
        conn.serve()

    def start(self) -> None:
        self._thread.start()

    @property
    def addr(self) -> tuple[str, int]:
        return self._server.socket.getsockname()[:2]

    def stop(self) -> None:
        self._server.shutdown()
        self._thread.join(timeout=2.0)
