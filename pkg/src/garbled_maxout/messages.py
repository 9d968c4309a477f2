"""Wire format for protocol messages.

Frame layout (little-endian)::

    length:u32 | tag:u8 | session_id:u32 | step:u32 | payload

``length`` counts every byte after the length field itself.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import ProtocolError

_HEAD = struct.Struct("<IBII")
HEADER_BYTES = _HEAD.size
MAX_FRAME = 1 << 26


class Tag(enum.IntEnum):
    STATE_SHARE = 1
    TRIPLE_SHARE = 2
    BEAVER_OPEN = 3
    GARBLED_CIRCUIT = 4
    GARBLER_INPUT_LABELS = 5
    OT_REQUEST = 6
    OT_RESPONSE = 7
    OUTPUT_DECODE = 8
    MASKED_RESULT = 9


@dataclass(frozen=True)
class ProtocolMessage:
    tag: Tag
    session_id: int
    step: int
    payload: bytes = b""

    def encode(self) -> bytes:
        return _HEAD.pack(HEADER_BYTES - 4 + len(self.payload), int(self.tag), self.session_id, self.step) + self.payload

    @classmethod
    def decode(cls, frame: bytes) -> "ProtocolMessage":
        if len(frame) < HEADER_BYTES:
            raise ProtocolError("frame shorter than its header")
        length, tag, session_id, step = _HEAD.unpack_from(frame)
        if length != len(frame) - 4:
            raise ProtocolError(f"frame length field {length} does not match {len(frame) - 4} bytes")
        try:
            tag = Tag(tag)
        except ValueError:
            raise ProtocolError(f"unknown message tag {tag}") from None
        return cls(tag, session_id, step, bytes(frame[HEADER_BYTES:]))


def frame_length(prefix: bytes) -> int:
    """Total frame size given at least its first four bytes."""
    (length,) = struct.unpack_from("<I", prefix)
    if length < HEADER_BYTES - 4 or length > MAX_FRAME:
        raise ProtocolError(f"implausible frame length {length}")
    return length + 4
