"""Distributed message queue: signed per-recipient records of pending hashes.

A queue entry references a message only by the 32-byte content id of its
manifest, so queue cost is constant regardless of message size. Entries
live in DHT records at a key derived from the recipient id. Each writer
owns its own record slot there: senders publish their pending entries,
the recipient publishes acknowledgement tombstones, and a drain merges
slots, drops tombstoned entries, and sorts by timestamp. Slots that
outgrow one record spill into immutable hash-linked segment records.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, replace

from . import identity as idm
from . import wire
from .dht import (
    KIND_QUEUE_HEAD,
    RECORD_TTL_MS,
    SLOT_MUTABLE,
    SLOT_SEGMENT,
    DhtRecord,
    make_record,
)
from .errors import AuthenticationError, MalformedInput
from .wire import Reader, Writer

QUEUE_KEY_CONTEXT = b"fybrr/dmq/v1"
DRAIN_CONTEXT = b"fybrr/dmq/drain/v1"
DRAIN_MAX_SKEW_MS = 60_000

ENTRY_LEN = 168

SLOT_ENTRIES = 0x01
SLOT_TOMBSTONES = 0x02

# Per-record item caps chosen so every record stays under the 4096-byte
# DHT value bound (168-byte entries: 20 * 168 + header < 4096).
ENTRY_HEAD_CAP = 20
ENTRY_SEG_CAP = 20
TOMB_HEAD_CAP = 100
TOMB_SEG_CAP = 120

_NO_OVERFLOW = b"\x00" * 32


def queue_key(recipient: bytes) -> bytes:
    """DHT key of a recipient's queue; pure function of the peer id."""
    if len(recipient) != 32:
        raise MalformedInput("recipient id must be 32 bytes")
    return idm.content_id(QUEUE_KEY_CONTEXT + recipient)


@dataclass(frozen=True)
class QueueEntry:
    recipient: bytes
    msg_cid: bytes
    sender: bytes
    timestamp: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .fixed(self.recipient, 32)
            .fixed(self.msg_cid, 32)
            .fixed(self.sender, 32)
            .u64(self.timestamp)
            .bytes()
        )

    def encode(self) -> bytes:
        out = self.signing_bytes() + self.signature
        if len(out) != ENTRY_LEN:
            raise MalformedInput("queue entry must encode to exactly 168 bytes")
        return out

    @classmethod
    def read(cls, r: Reader) -> "QueueEntry":
        return cls(
            recipient=r.fixed(32),
            msg_cid=r.fixed(32),
            sender=r.fixed(32),
            timestamp=r.u64(),
            signature=r.fixed(64),
        )

    @classmethod
    def decode(cls, data: bytes) -> "QueueEntry":
        r = Reader(data)
        entry = cls.read(r)
        r.done()
        return entry

    def verify(self, sig_public: bytes) -> bool:
        return len(self.signature) == 64 and idm.verify(
            self.signing_bytes(), self.signature, sig_public
        )


def make_entry(
    recipient: bytes, msg_cid: bytes, sender: idm.PeerIdentity, timestamp: int
) -> QueueEntry:
    entry = QueueEntry(recipient=recipient, msg_cid=msg_cid, sender=sender.peer_id, timestamp=timestamp)
    return replace(entry, signature=idm.sign(entry.signing_bytes(), sender))


def _encode_items(slot_type: int, items: list[bytes | QueueEntry]) -> bytes:
    w = Writer().u16(len(items))
    for item in items:
        if slot_type == SLOT_ENTRIES:
            w.raw(item.encode())
        else:
            w.fixed(item, 32)
    return w.bytes()


def _read_items(slot_type: int, r: Reader):
    n = r.u16()
    if slot_type == SLOT_ENTRIES:
        return [QueueEntry.read(r) for _ in range(n)]
    return [r.fixed(32) for _ in range(n)]


def encode_head(version: int, slot_type: int, recipient: bytes, overflow: bytes | None, items) -> bytes:
    return (
        Writer()
        .u8(SLOT_MUTABLE)
        .u64(version)
        .u8(slot_type)
        .fixed(recipient, 32)
        .fixed(overflow or _NO_OVERFLOW, 32)
        .raw(_encode_items(slot_type, items))
        .bytes()
    )


def decode_head(value: bytes):
    r = Reader(value)
    if r.u8() != SLOT_MUTABLE:
        raise MalformedInput("not a mutable queue slot")
    version = r.u64()
    slot_type = r.u8()
    recipient = r.fixed(32)
    overflow = r.fixed(32)
    items = _read_items(slot_type, r)
    r.done()
    return version, slot_type, recipient, (None if overflow == _NO_OVERFLOW else overflow), items


def encode_segment(slot_type: int, items, next_cid: bytes | None) -> bytes:
    return (
        Writer()
        .u8(SLOT_SEGMENT)
        .u8(slot_type)
        .raw(_encode_items(slot_type, items))
        .fixed(next_cid or _NO_OVERFLOW, 32)
        .bytes()
    )


def decode_segment(value: bytes):
    r = Reader(value)
    if r.u8() != SLOT_SEGMENT:
        raise MalformedInput("not a queue segment")
    slot_type = r.u8()
    items = _read_items(slot_type, r)
    next_cid = r.fixed(32)
    r.done()
    return slot_type, items, (None if next_cid == _NO_OVERFLOW else next_cid)


def pack_slot(slot_type: int, recipient: bytes, version: int, items: list):
    """Deterministically pack items into one head value plus segment values.

    Items must already be sorted oldest-first. Segments hold fixed-size
    groups anchored at the oldest end, so appending new items only touches
    the head until it spills exactly one new segment.
    """
    head_cap = ENTRY_HEAD_CAP if slot_type == SLOT_ENTRIES else TOMB_HEAD_CAP
    seg_cap = ENTRY_SEG_CAP if slot_type == SLOT_ENTRIES else TOMB_SEG_CAP
    n = len(items)
    n_segments = 0 if n <= head_cap else -(-(n - head_cap) // seg_cap)
    segments = []
    next_cid = None
    for i in range(n_segments):
        value = encode_segment(slot_type, items[i * seg_cap : (i + 1) * seg_cap], next_cid)
        segments.append(value)
        next_cid = idm.content_id(value)
    head = encode_head(version, slot_type, recipient, next_cid, items[n_segments * seg_cap :])
    return head, segments


def drain_signing_bytes(recipient: bytes, requester: bytes, timestamp: int) -> bytes:
    return (
        Writer()
        .raw(DRAIN_CONTEXT)
        .fixed(recipient, 32)
        .fixed(requester, 32)
        .u64(timestamp)
        .bytes()
    )


def now_ms() -> int:
    return int(time.time() * 1000)


class DmqClient:
    """Queue operations executed through a peer's DHT and RPC surface."""

    def __init__(self, peer):
        self.peer = peer
        # recipient -> (version, {(sender, msg_cid): QueueEntry})
        self._outgoing: dict[bytes, tuple[int, dict]] = {}
        self._ack_version = 0
        self._acked: dict[bytes, int] = {}  # msg_cid -> ack time
        # sender keys observed on verified queue slots, for the decrypt step
        self.peer_keys: dict[bytes, tuple[bytes, bytes]] = {}

    def _bump(self, last: int) -> int:
        return max(last + 1, now_ms())

    async def _store_slot(self, recipient: bytes, head_value: bytes, segments: list[bytes]) -> int:
        key = queue_key(recipient)
        expires = now_ms() + RECORD_TTL_MS
        records = [
            make_record(self.peer.identity, idm.content_id(seg), KIND_QUEUE_HEAD, seg, expires)
            for seg in segments
        ]
        records.append(make_record(self.peer.identity, key, KIND_QUEUE_HEAD, head_value, expires))
        nodes = await self.peer.find_node(key)
        written = 0
        for record in records:
            written = await self.peer.store_record_at(nodes, record)
        return written

    async def enqueue(self, entry: QueueEntry, *, pinned: bool = True) -> int:
        """Publish a signed entry into the recipient's queue; idempotent per
        (sender, msg_cid). Returns the replica count of the head record."""
        if entry.sender != self.peer.identity.peer_id:
            raise MalformedInput("can only enqueue entries from the local identity")
        if not entry.verify(self.peer.identity.sig_public):
            raise AuthenticationError("queue entry signature invalid")
        if not pinned:
            self.peer.log.warning(
                "enqueue of %s with unpinned content; delivery degraded", entry.msg_cid.hex()[:12]
            )
        version, pending = self._outgoing.get(entry.recipient, (0, {}))
        pending = dict(pending)
        pending[(entry.sender, entry.msg_cid)] = entry
        cutoff = now_ms() - RECORD_TTL_MS
        pending = {k: e for k, e in pending.items() if e.timestamp >= cutoff}
        version = self._bump(version)
        self._outgoing[entry.recipient] = (version, pending)
        items = sorted(pending.values(), key=lambda e: (e.timestamp, e.msg_cid))
        head, segments = pack_slot(SLOT_ENTRIES, entry.recipient, version, items)
        return await self._store_slot(entry.recipient, head, segments)

    async def _fetch_chain(self, first: bytes | None, slot_type: int, segments_seen: dict) -> list:
        items = []
        cid = first
        hops = 0
        while cid is not None and hops < 256:
            hops += 1
            value = segments_seen.get(cid)
            if value is None:
                records = await self.peer.find_value(cid, KIND_QUEUE_HEAD)
                for rec in records:
                    if idm.content_id(rec.value) == cid:
                        value = rec.value
                        break
            if value is None:
                break  # chain truncated; surviving entries still delivered
            seg_type, seg_items, next_cid = decode_segment(value)
            if seg_type == slot_type:
                items.extend(seg_items)
            cid = next_cid
        return items

    async def drain(self, recipient: idm.PeerIdentity) -> list[QueueEntry]:
        """Fetch all pending entries for an identity we control.

        Read-only: removal happens at ack. Entries are verified against the
        publishing sender's key and returned oldest-first.
        """
        key = queue_key(recipient.peer_id)
        ts = now_ms()
        sig = idm.sign(drain_signing_bytes(recipient.peer_id, recipient.peer_id, ts), recipient)
        req = (
            Writer()
            .fixed(recipient.peer_id, 32)
            .fixed(recipient.peer_id, 32)
            .fixed(recipient.enc_public, 32)
            .fixed(recipient.sig_public, 32)
            .u64(ts)
            .fixed(sig, 64)
            .bytes()
        )
        nodes = await self.peer.find_node(key)
        replies = await asyncio.gather(
            *(self.peer.rpc(n, wire.DMQ_DRAIN, req) for n in nodes), return_exceptions=True
        )
        slots: dict[bytes, DhtRecord] = {}
        segments_seen: dict[bytes, bytes] = {}
        for reply in replies:
            if isinstance(reply, BaseException):
                continue
            r = Reader(reply)
            for _ in range(r.u16()):
                rec = DhtRecord.read(Reader(r.var16()))
                if not rec.verify():
                    continue
                if rec.key != key:
                    if idm.content_id(rec.value) == rec.key:
                        segments_seen[rec.key] = rec.value
                    continue
                held = slots.get(rec.publisher)
                if held is None or decode_head(rec.value)[0] > decode_head(held.value)[0]:
                    slots[rec.publisher] = rec

        tombstones: set[bytes] = set(self._acked)
        entries: dict[tuple[bytes, bytes], QueueEntry] = {}
        for publisher, rec in slots.items():
            self.peer_keys[publisher] = (rec.publisher_enc, rec.publisher_sig_key)
            try:
                _, slot_type, slot_recipient, overflow, items = decode_head(rec.value)
            except MalformedInput:
                continue
            if slot_recipient != recipient.peer_id:
                continue
            items = items + await self._fetch_chain(overflow, slot_type, segments_seen)
            if slot_type == SLOT_TOMBSTONES:
                if publisher == recipient.peer_id:
                    tombstones.update(items)
                continue
            for entry in items:
                if entry.sender != publisher or entry.recipient != recipient.peer_id:
                    continue
                if not entry.verify(rec.publisher_sig_key):
                    continue
                entries.setdefault((entry.sender, entry.msg_cid), entry)

        live = [e for e in entries.values() if e.msg_cid not in tombstones]
        live.sort(key=lambda e: (e.timestamp, e.msg_cid))
        return live

    async def ack(self, recipient: idm.PeerIdentity, msg_cid: bytes) -> int:
        """Record delivery: publish a tombstone so the entry stops draining."""
        if len(msg_cid) != 32:
            raise MalformedInput("msg_cid must be 32 bytes")
        if msg_cid in self._acked:
            return 0
        self._acked[msg_cid] = now_ms()
        self._ack_version = self._bump(self._ack_version)
        cutoff = now_ms() - RECORD_TTL_MS
        self._acked = {c: t for c, t in self._acked.items() if t >= cutoff}
        items = sorted(self._acked, key=lambda c: (self._acked[c], c))
        head, segments = pack_slot(
            SLOT_TOMBSTONES, recipient.peer_id, self._ack_version, items
        )
        return await self._store_slot(recipient.peer_id, head, segments)
