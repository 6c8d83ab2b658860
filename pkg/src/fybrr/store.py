"""Content-addressed block storage: chunking, manifests, pins, and GC.

An encrypted message payload is split into fixed-size chunks, each stored
under its SHA-256 address. A manifest lists the chunk ids plus the sealing
metadata and is itself stored as a block; the manifest's address is the
message's content id. Blocks live one file per block under blocks/, and
pin state is an append-only journal so a crashed node recovers by replay.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass

from .errors import HashMismatch, MalformedInput, NotFound
from .identity import content_id
from .wire import Reader, Writer

DEFAULT_CHUNK_SIZE = 65536
MIN_CHUNK_SIZE = 1024
PIN_TTL_MS = 30 * 24 * 3600 * 1000

STATE_PINNED = "pinned"
STATE_RELEASED = "released"


@dataclass(frozen=True)
class Chunk:
    cid: bytes
    data: bytes


@dataclass(frozen=True)
class Manifest:
    """Index of one encrypted payload: sealing metadata plus ordered chunk ids."""

    sender_public: bytes
    recipient_peer_id: bytes
    nonce: bytes
    total_len: int
    chunk_cids: tuple[bytes, ...]

    def encode(self) -> bytes:
        w = (
            Writer()
            .fixed(self.sender_public, 32)
            .fixed(self.recipient_peer_id, 32)
            .fixed(self.nonce, 24)
            .u64(self.total_len)
            .u16(len(self.chunk_cids))
        )
        for cid in self.chunk_cids:
            w.fixed(cid, 32)
        return w.bytes()

    @property
    def message_cid(self) -> bytes:
        return content_id(self.encode())

    @classmethod
    def decode(cls, data: bytes) -> "Manifest":
        r = Reader(data)
        sender_public = r.fixed(32)
        recipient = r.fixed(32)
        nonce = r.fixed(24)
        total_len = r.u64()
        n = r.u16()
        cids = tuple(r.fixed(32) for _ in range(n))
        r.done()
        return cls(sender_public, recipient, nonce, total_len, cids)


def chunk_payload(
    payload: bytes,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    *,
    sender_public: bytes = b"\x00" * 32,
    recipient_peer_id: bytes = b"\x00" * 32,
    nonce: bytes = b"\x00" * 24,
) -> tuple[Manifest, list[Chunk]]:
    """Split a payload into content-addressed chunks plus their manifest."""
    if not payload:
        raise MalformedInput("cannot chunk an empty payload")
    if chunk_size < MIN_CHUNK_SIZE:
        raise MalformedInput(f"chunk_size must be >= {MIN_CHUNK_SIZE}")
    chunks = []
    for off in range(0, len(payload), chunk_size):
        data = payload[off : off + chunk_size]
        chunks.append(Chunk(cid=content_id(data), data=data))
    manifest = Manifest(
        sender_public=sender_public,
        recipient_peer_id=recipient_peer_id,
        nonce=nonce,
        total_len=len(payload),
        chunk_cids=tuple(c.cid for c in chunks),
    )
    return manifest, chunks


def reassemble(manifest: Manifest, blocks: dict[bytes, bytes]) -> bytes:
    """Join chunk bytes in manifest order, verifying sizes and hashes."""
    parts = []
    for cid in manifest.chunk_cids:
        if cid not in blocks:
            raise NotFound(f"missing chunk {cid.hex()}")
        data = blocks[cid]
        if content_id(data) != cid:
            raise HashMismatch(f"chunk {cid.hex()} content does not match its id")
        parts.append(data)
    payload = b"".join(parts)
    if len(payload) != manifest.total_len:
        raise HashMismatch("reassembled length disagrees with manifest total_len")
    return payload


@dataclass
class PinRecord:
    cid: bytes
    holders: set[bytes]
    created_at: int
    state: str = STATE_PINNED
    degraded: bool = False


def now_ms() -> int:
    return int(time.time() * 1000)


class BlockStore:
    """One-file-per-block store with an append-only pin journal.

    Every stored block gets a pin timestamp at write time; `released`
    entries flip it. gc() drops blocks that are released or whose pin has
    outlived the TTL, so storage never leaks even when release notices are
    lost.
    """

    def __init__(self, root: str, pin_ttl_ms: int = PIN_TTL_MS):
        self.root = root
        self.pin_ttl_ms = pin_ttl_ms
        self._blocks_dir = os.path.join(root, "blocks")
        self._journal_path = os.path.join(root, "pins.log")
        os.makedirs(self._blocks_dir, exist_ok=True)
        self._lock = threading.Lock()
        self._pins: dict[bytes, tuple[str, int]] = {}
        self._replay_journal()

    def _replay_journal(self):
        if not os.path.exists(self._journal_path):
            return
        with open(self._journal_path, encoding="ascii") as f:
            for line in f:
                parts = line.split()
                if len(parts) != 3 or parts[1] not in (STATE_PINNED, STATE_RELEASED):
                    continue
                try:
                    self._pins[bytes.fromhex(parts[0])] = (parts[1], int(parts[2]))
                except ValueError:
                    continue

    def _journal(self, cid: bytes, state: str, at: int):
        with open(self._journal_path, "a", encoding="ascii") as f:
            f.write(f"{cid.hex()} {state} {at}\n")
        self._pins[cid] = (state, at)

    def _path(self, cid: bytes) -> str:
        return os.path.join(self._blocks_dir, cid.hex())

    def put_block(self, data: bytes, cid: bytes | None = None, at: int | None = None) -> bytes:
        """Store bytes under their hash; a supplied cid must match the data."""
        actual = content_id(data)
        if cid is not None and cid != actual:
            raise HashMismatch(f"claimed cid {cid.hex()} != actual {actual.hex()}")
        with self._lock:
            path = self._path(actual)
            if not os.path.exists(path):
                tmp = path + ".tmp"
                with open(tmp, "wb") as f:
                    f.write(data)
                os.replace(tmp, path)
            state = self._pins.get(actual)
            if state is None or state[0] == STATE_RELEASED:
                self._journal(actual, STATE_PINNED, now_ms() if at is None else at)
        return actual

    def get_block(self, cid: bytes) -> bytes:
        try:
            with open(self._path(cid), "rb") as f:
                data = f.read()
        except FileNotFoundError:
            raise NotFound(f"block {cid.hex()} not stored") from None
        if content_id(data) != cid:
            raise HashMismatch(f"stored block {cid.hex()} fails self-validation")
        return data

    def has_block(self, cid: bytes) -> bool:
        return os.path.exists(self._path(cid))

    def release(self, cid: bytes, at: int | None = None) -> None:
        """Mark a block GC-eligible; unknown cids are a no-op."""
        with self._lock:
            state = self._pins.get(cid)
            if state is not None and state[0] != STATE_RELEASED:
                self._journal(cid, STATE_RELEASED, now_ms() if at is None else at)

    def pin_state(self, cid: bytes) -> tuple[str, int] | None:
        return self._pins.get(cid)

    def gc(self, now: int | None = None) -> int:
        """Remove released and expired blocks; returns the number removed."""
        now = now_ms() if now is None else now
        removed = 0
        with self._lock:
            for cid, (state, at) in list(self._pins.items()):
                if state == STATE_RELEASED or now - at > self.pin_ttl_ms:
                    try:
                        os.unlink(self._path(cid))
                        removed += 1
                    except FileNotFoundError:
                        pass
                    del self._pins[cid]
        return removed

    def audit(self) -> list[bytes]:
        """Full scan; returns cids whose stored bytes fail self-validation."""
        bad = []
        for name in os.listdir(self._blocks_dir):
            if name.endswith(".tmp"):
                continue
            try:
                cid = bytes.fromhex(name)
            except ValueError:
                continue
            try:
                self.get_block(cid)
            except HashMismatch:
                bad.append(cid)
            except NotFound:
                pass
        return bad

    def list_blocks(self) -> list[bytes]:
        out = []
        for name in os.listdir(self._blocks_dir):
            if not name.endswith(".tmp"):
                try:
                    out.append(bytes.fromhex(name))
                except ValueError:
                    pass
        return out
