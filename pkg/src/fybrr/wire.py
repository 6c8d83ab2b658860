"""Length-prefixed binary framing and field codecs for every protocol surface.

One frame layout is shared by node RPC, the rendezvous protocol, and the
direct channel: a big-endian u32 length covering everything after itself,
then a one-byte frame type, then the type-specific payload. Integers are
big-endian throughout; variable-length fields carry a u16 or u32 length
prefix.
"""

from __future__ import annotations

import asyncio
import struct

from .errors import MalformedInput, RpcError

MAX_FRAME = 2 * 1024 * 1024

# Direct-channel frame types (values fixed by the channel wire contract).
DATA = 0x01
PING = 0x02
PONG = 0x03
CLOSE = 0x04
CHANNEL_OPEN = 0x05
CHANNEL_READY = 0x06

# DHT RPCs.
DHT_PING = 0x10
FIND_NODE = 0x11
FIND_VALUE = 0x12
STORE = 0x13

# Block and queue RPCs.
STORE_BLOCK = 0x20
GET_BLOCK = 0x21
RELEASE = 0x22
DMQ_DRAIN = 0x23

# Swarm-consensus gossip.
PROPOSE = 0x30
BALLOT = 0x31
STATE_REQ = 0x32
STATE_RESP = 0x33

# Rendezvous protocol.
REGISTER = 0x40
LOOKUP = 0x41
RELAY = 0x42
DIRECTORY = 0x43
RELAYED = 0x44
MEMBERS = 0x45

RESP = 0x80  # response frame type = request type | RESP

# Status byte leading every RPC response payload.
ST_OK = 0
ST_ERROR = 1
ST_NOT_FOUND = 2
ST_CONFLICT = 3
ST_DENIED = 4


def frame(ftype: int, payload: bytes) -> bytes:
    if len(payload) + 1 > MAX_FRAME:
        raise MalformedInput(f"frame payload too large: {len(payload)}")
    return struct.pack(">IB", len(payload) + 1, ftype) + payload


async def read_frame(reader: asyncio.StreamReader) -> tuple[int, bytes]:
    """Read one frame; raises IncompleteReadError at clean EOF."""
    header = await reader.readexactly(4)
    (length,) = struct.unpack(">I", header)
    if length == 0 or length > MAX_FRAME:
        raise MalformedInput(f"bad frame length {length}")
    body = await reader.readexactly(length)
    return body[0], body[1:]


class Writer:
    """Accumulates big-endian fields into one bytes value."""

    def __init__(self):
        self._buf = bytearray()

    def u8(self, v: int) -> "Writer":
        self._buf += struct.pack(">B", v)
        return self

    def u16(self, v: int) -> "Writer":
        self._buf += struct.pack(">H", v)
        return self

    def u32(self, v: int) -> "Writer":
        self._buf += struct.pack(">I", v)
        return self

    def u64(self, v: int) -> "Writer":
        self._buf += struct.pack(">Q", v)
        return self

    def raw(self, b: bytes) -> "Writer":
        self._buf += b
        return self

    def fixed(self, b: bytes, n: int) -> "Writer":
        if len(b) != n:
            raise MalformedInput(f"expected {n}-byte field, got {len(b)}")
        self._buf += b
        return self

    def var16(self, b: bytes) -> "Writer":
        if len(b) > 0xFFFF:
            raise MalformedInput("field too long for u16 prefix")
        self._buf += struct.pack(">H", len(b)) + b
        return self

    def var32(self, b: bytes) -> "Writer":
        self._buf += struct.pack(">I", len(b)) + b
        return self

    def bytes(self) -> bytes:
        return bytes(self._buf)


class Reader:
    """Cursor over a received payload; underruns raise MalformedInput."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise MalformedInput("truncated payload")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def fixed(self, n: int) -> bytes:
        return self._take(n)

    def var16(self) -> bytes:
        return self._take(self.u16())

    def var32(self) -> bytes:
        n = self.u32()
        if n > MAX_FRAME:
            raise MalformedInput("oversized var32 field")
        return self._take(n)

    def remaining(self) -> bytes:
        return self._take(len(self._data) - self._pos)

    def done(self) -> None:
        if self._pos != len(self._data):
            raise MalformedInput(f"{len(self._data) - self._pos} trailing bytes")


def encode_endpoint(host: str, port: int) -> bytes:
    return Writer().var16(host.encode()).u16(port).bytes()


def decode_endpoint(r: Reader) -> tuple[str, int]:
    host = r.var16().decode()
    port = r.u16()
    if not host:
        raise MalformedInput("empty endpoint host")
    return host, port


def parse_endpoint(text: str) -> tuple[str, int]:
    """Parse "host:port" (the textual form used in configs and CLI flags)."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise MalformedInput(f"endpoint must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise MalformedInput(f"bad port in endpoint {text!r}") from None


def ok(body: bytes = b"") -> bytes:
    return bytes([ST_OK]) + body


def err(status: int, message: str = "") -> bytes:
    return bytes([status]) + message.encode()


def check_ok(payload: bytes) -> bytes:
    """Split a response payload; raises RpcError unless the status byte is OK."""
    if not payload:
        raise MalformedInput("empty response payload")
    if payload[0] != ST_OK:
        raise RpcError(
            f"status {payload[0]}: {payload[1:].decode(errors='replace')}", status=payload[0]
        )
    return payload[1:]
