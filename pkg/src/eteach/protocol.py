"""Wire format shared by the server, headless client, tools, and the browser gateway.

Every frame on the wire is ``4-byte big-endian payload length | 1-byte kind | payload``.
The length field excludes the 5-byte header.  Three kinds exist: CONTROL carries a
UTF-8 JSON object with a string field ``t`` (and ``seq`` on server pushes), AUDIO
carries an opaque voice chunk with a 12-byte sub-header, MATERIAL carries one 64 KiB
chunk of a content-addressed page image with a 36-byte sub-header.

See PROTOCOL.md for the per-type field schemas.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Callable

MAX_FRAME = 1 << 20        # payload byte cap per frame
CHUNK_SIZE = 64 * 1024     # material transfer chunk size
PROTO_VERSION = 1

CONTROL = 0x01
AUDIO = 0x02
MATERIAL = 0x03

_KINDS = frozenset((CONTROL, AUDIO, MATERIAL))

_HEADER = struct.Struct("!IB")          # payload length | kind
_AUDIO_HEADER = struct.Struct("!IQ")    # session_id | per-direction seq
_MATERIAL_HEADER = struct.Struct("!32sI")  # page digest | chunk index

HEADER_LEN = _HEADER.size
AUDIO_HEADER_LEN = _AUDIO_HEADER.size
MATERIAL_HEADER_LEN = _MATERIAL_HEADER.size

# Registered CONTROL message types.  Unknown types are rejected at dispatch,
# not at decode.
CONTROL_TYPES = frozenset((
    "login", "login_ok", "login_err", "user_list", "presence", "activity",
    "chat_pub", "chat_prv", "chat_evt",
    "mat_list", "mat_list_ok", "mat_meta", "mat_need", "mat_done",
    "upload", "upload_ok",
    "invite", "invite_evt", "invite_resp", "session_start",
    "page_set", "page_evt", "cursor", "cursor_evt",
    "session_end", "session_end_evt", "error",
))


class FrameError(Exception):
    """Base class for wire-format violations."""


class Oversize(FrameError):
    pass


class BadKind(FrameError):
    pass


class MalformedControl(FrameError):
    pass


class Truncated(FrameError):
    """Stream ended mid-frame."""


@dataclass(frozen=True)
class Frame:
    kind: int
    payload: bytes


@dataclass(frozen=True)
class AudioChunk:
    session_id: int
    seq: int
    payload: bytes


@dataclass(frozen=True)
class MaterialChunk:
    digest: bytes
    index: int
    payload: bytes


def digest_bytes(data: bytes) -> bytes:
    """SHA-256 of ``data`` as 32 raw bytes; hex form is ``.hex()``."""
    return hashlib.sha256(data).digest()


def _validate_control_payload(payload: bytes) -> None:
    try:
        msg = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedControl(f"control payload is not UTF-8 JSON: {exc}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("t"), str):
        raise MalformedControl("control payload lacks string field 't'")


def encode_frame(frame: Frame) -> bytes:
    if frame.kind not in _KINDS:
        raise BadKind(f"unknown frame kind {frame.kind!r}")
    if len(frame.payload) > MAX_FRAME:
        raise Oversize(f"payload of {len(frame.payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(frame.payload), frame.kind) + frame.payload


def decode_frame(data: bytes | bytearray | memoryview, offset: int = 0) -> tuple[Frame, int] | None:
    """Decode one frame from ``data`` starting at ``offset``.

    Returns ``(frame, next_offset)``, or None if more bytes are needed
    (non-destructive: the caller keeps its buffer).  Never touches bytes past
    the declared frame boundary.
    """
    if len(data) - offset < HEADER_LEN:
        return None
    length, kind = _HEADER.unpack_from(data, offset)
    if length > MAX_FRAME:
        raise Oversize(f"declared payload of {length} bytes exceeds {MAX_FRAME}")
    if kind not in _KINDS:
        raise BadKind(f"unknown frame kind {kind:#04x}")
    end = offset + HEADER_LEN + length
    if len(data) < end:
        return None
    payload = bytes(data[offset + HEADER_LEN:end])
    if kind == CONTROL:
        _validate_control_payload(payload)
    return Frame(kind, payload), end


def read_frame(read: Callable[[int], bytes]) -> Frame | None:
    """Read exactly one frame from a blocking byte source.

    ``read(n)`` must return between 1 and n bytes, or b"" at end of stream.
    Returns None on a clean end of stream at a frame boundary; raises
    Truncated if the stream ends mid-frame.  Never requests bytes beyond the
    declared frame boundary.
    """
    header = _read_exact(read, HEADER_LEN, allow_eof=True)
    if header is None:
        return None
    length, kind = _HEADER.unpack_from(header)
    if length > MAX_FRAME:
        raise Oversize(f"declared payload of {length} bytes exceeds {MAX_FRAME}")
    if kind not in _KINDS:
        raise BadKind(f"unknown frame kind {kind:#04x}")
    payload = _read_exact(read, length) if length else b""
    if kind == CONTROL:
        _validate_control_payload(payload)
    return Frame(kind, payload)


def _read_exact(read: Callable[[int], bytes], n: int, allow_eof: bool = False) -> bytes | None:
    parts = []
    got = 0
    while got < n:
        piece = read(n - got)
        if not piece:
            if allow_eof and got == 0:
                return None
            raise Truncated(f"stream ended after {got} of {n} bytes")
        parts.append(piece)
        got += len(piece)
    return b"".join(parts)


def make_control(t: str, body: dict | None = None, seq: int | None = None) -> Frame:
    msg: dict = {"t": t}
    if seq is not None:
        msg["seq"] = seq
    if body is not None:
        msg["body"] = body
    return Frame(CONTROL, json.dumps(msg, separators=(",", ":")).encode("utf-8"))


def parse_control(frame: Frame) -> dict:
    """Parsed message dict for a CONTROL frame: keys t, optional seq, optional body."""
    if frame.kind != CONTROL:
        raise MalformedControl(f"frame kind {frame.kind:#04x} is not CONTROL")
    _validate_control_payload(frame.payload)
    msg = json.loads(frame.payload.decode("utf-8"))
    if "body" in msg and not isinstance(msg["body"], dict):
        raise MalformedControl("control body is not an object")
    return msg


def encode_audio(chunk: AudioChunk) -> Frame:
    if not 1 <= len(chunk.payload) <= MAX_FRAME - AUDIO_HEADER_LEN:
        raise Oversize(
            f"audio payload must be 1..{MAX_FRAME - AUDIO_HEADER_LEN} bytes, got {len(chunk.payload)}"
        )
    return Frame(AUDIO, _AUDIO_HEADER.pack(chunk.session_id, chunk.seq) + chunk.payload)


def parse_audio(frame: Frame) -> AudioChunk:
    if frame.kind != AUDIO or len(frame.payload) < AUDIO_HEADER_LEN + 1:
        raise FrameError("not a valid audio frame")
    session_id, seq = _AUDIO_HEADER.unpack_from(frame.payload)
    return AudioChunk(session_id, seq, frame.payload[AUDIO_HEADER_LEN:])


def encode_material(chunk: MaterialChunk) -> Frame:
    if len(chunk.digest) != 32:
        raise FrameError("material digest must be 32 bytes")
    if len(chunk.payload) > CHUNK_SIZE:
        raise Oversize(f"material chunk payload {len(chunk.payload)} exceeds {CHUNK_SIZE}")
    return Frame(MATERIAL, _MATERIAL_HEADER.pack(chunk.digest, chunk.index) + chunk.payload)


def parse_material(frame: Frame) -> MaterialChunk:
    if frame.kind != MATERIAL or len(frame.payload) < MATERIAL_HEADER_LEN:
        raise FrameError("not a valid material frame")
    digest, index = _MATERIAL_HEADER.unpack_from(frame.payload)
    return MaterialChunk(digest, index, frame.payload[MATERIAL_HEADER_LEN:])


def chunk_count(total_size: int) -> int:
    return max(1, -(-total_size // CHUNK_SIZE))


def chunk_material(data: bytes) -> list[MaterialChunk]:
    """Split one page image into transfer chunks (64 KiB each, shorter last)."""
    digest = digest_bytes(data)
    if not data:
        return [MaterialChunk(digest, 0, b"")]
    return [
        MaterialChunk(digest, i, data[off:off + CHUNK_SIZE])
        for i, off in enumerate(range(0, len(data), CHUNK_SIZE))
    ]
