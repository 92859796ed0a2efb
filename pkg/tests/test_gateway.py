"""WebSocket gateway: same protocol, message framing instead of a stream."""

import pytest

pytest.importorskip("websockets")

from websockets.exceptions import ConnectionClosed
from websockets.sync.client import connect

from eteach.client import (
    AudioReceived, ChatReceived, PresenceChanged, SessionStarted,
)
from eteach.protocol import (
    AUDIO, AudioChunk, CONTROL, Frame, decode_frame, encode_audio,
    encode_frame, make_control, parse_audio, parse_control,
)


class WsRaw:
    """RawConn's twin for the websocket listener."""

    def __init__(self, addr):
        self.ws = connect(f"ws://{addr[0]}:{addr[1]}", open_timeout=5)

    def send(self, t, body=None):
        self.ws.send(encode_frame(make_control(t, body)))

    def send_bytes(self, data: bytes):
        self.ws.send(data)

    def read_frame(self, timeout=5.0) -> Frame:
        message = self.ws.recv(timeout=timeout)
        assert isinstance(message, bytes)
        frame, consumed = decode_frame(message)
        assert consumed == len(message)
        return frame

    def read(self, timeout=5.0) -> dict:
        frame = self.read_frame(timeout)
        assert frame.kind == CONTROL
        return parse_control(frame)

    def read_until(self, t: str, limit: int = 50) -> dict:
        for _ in range(limit):
            msg = self.read()
            if msg["t"] == t:
                return msg
        raise AssertionError(f"no {t!r} message within {limit} frames")

    def login(self, username: str, password: str) -> dict:
        self.send("login", {"username": username, "password": password, "v": 1})
        return self.read()

    def assert_closed(self, timeout=2.0):
        with pytest.raises(ConnectionClosed):
            while True:
                self.ws.recv(timeout=timeout)

    def close(self):
        try:
            self.ws.close()
        except Exception:
            pass


@pytest.fixture
def gw(harness):
    fix = harness.server(enable_gateway=True)
    conns = []

    def make() -> WsRaw:
        conn = WsRaw(fix.core.gateway_addr)
        conns.append(conn)
        return conn

    yield fix, make
    for conn in conns:
        conn.close()


class TestWsLogin:
    def test_login_returns_roster(self, gw):
        fix, make = gw
        ws = make()
        reply = ws.login("ali", "pw-ali")
        assert reply["t"] == "login_ok"
        names = {u["username"] for u in reply["body"]["users"]}
        assert names == {"cikgu", "ali", "siti", "raju"}

    def test_bad_password_rejected(self, gw):
        fix, make = gw
        ws = make()
        reply = ws.login("ali", "nope")
        assert reply["t"] == "login_err"
        assert reply["body"]["code"] == "AUTH_FAILED"


class TestMixedTransports:
    def test_chat_crosses_both_ways(self, gw, harness):
        fix, make = gw
        ws = make()
        ws.login("ali", "pw-ali")
        siti = harness.login(fix, "siti")

        ws.send("chat_pub", {"text": "from the browser"})
        got = siti.expect(ChatReceived, lambda e: e.text == "from the browser")

        siti.client.send_public("from the socket")
        echo = ws.read_until("chat_evt")
        while echo["body"]["text"] != "from the socket":
            echo = ws.read_until("chat_evt")
        # one shared board, one shared counter: the ws peer's copy of siti's
        # message must carry a later seq than siti's copy of the ws message
        assert echo["seq"] > got.seq

    def test_session_and_audio_over_ws(self, gw, harness):
        fix, make = gw
        ws = make()
        ws.login("ali", "pw-ali")
        cikgu = harness.login(fix, "cikgu")

        cikgu.client.invite("ali")
        invite = ws.read_until("invite_evt")
        sid = invite["body"]["session_id"]
        ws.send("invite_resp", {"session_id": sid, "accept": True})
        ws.read_until("session_start")
        cikgu.expect(SessionStarted)

        cikgu.client.send_audio(b"\x01\x02\x03")
        frame = ws.read_frame()
        while frame.kind != AUDIO:
            frame = ws.read_frame()
        chunk = parse_audio(frame)
        assert (chunk.session_id, chunk.seq, chunk.payload) == (sid, 1, b"\x01\x02\x03")

        # and back: the ws student talks, the tcp teacher hears
        ws.send_bytes(encode_frame(encode_audio(AudioChunk(sid, 1, b"\x09"))))
        heard = cikgu.expect(AudioReceived)
        assert (heard.seq, heard.payload) == (1, b"\x09")


class TestMessageDiscipline:
    def test_two_frames_in_one_message_rejected(self, gw):
        fix, make = gw
        ws = make()
        one = encode_frame(make_control("activity"))
        ws.send_bytes(one + one)
        ws.assert_closed()

    def test_partial_frame_rejected(self, gw):
        fix, make = gw
        ws = make()
        ws.send_bytes(encode_frame(make_control("activity"))[:3])
        ws.assert_closed()

    def test_text_message_rejected(self, gw):
        fix, make = gw
        ws = make()
        ws.ws.send("hello")
        ws.assert_closed()

    def test_clean_close_marks_offline(self, gw, harness):
        fix, make = gw
        ws = make()
        ws.login("ali", "pw-ali")
        siti = harness.login(fix, "siti")
        ws.close()
        siti.expect(PresenceChanged,
                    lambda e: e.username == "ali" and e.status == "offline")
