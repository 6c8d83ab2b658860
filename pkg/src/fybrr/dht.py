"""Kademlia-style routing and record storage over the 256-bit id space.

Peer ids and content ids share one keyspace, so the same XOR metric routes
to peers and to content. This module is transport-agnostic: the iterative
lookup takes an async query callable, and the record store is a plain
in-memory structure with the acceptance rules (signature, expiry, version
monotonicity) enforced at insertion.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, replace

from . import identity as idm
from .errors import MalformedInput
from .wire import Reader, Writer, decode_endpoint, encode_endpoint

K = 20
ALPHA = 3
RECORD_TTL_MS = 24 * 3600 * 1000
REPUBLISH_MS = 3600 * 1000
MAX_RECORD_VALUE = 4096

KIND_PROVIDER = 1
KIND_QUEUE_HEAD = 2

_RECORD_CONTEXT = b"fybrr/record/v1"


def xor_distance(a: bytes, b: bytes) -> int:
    if len(a) != 32 or len(b) != 32:
        raise MalformedInput("xor_distance operands must be 32 bytes")
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


def bucket_index(self_id: bytes, peer_id: bytes) -> int:
    """floor(log2(distance)); only defined for distinct ids."""
    d = xor_distance(self_id, peer_id)
    if d == 0:
        raise MalformedInput("no bucket for a node's own id")
    return d.bit_length() - 1


@dataclass(frozen=True)
class NodeInfo:
    peer_id: bytes
    host: str
    port: int
    last_seen: int = 0

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def encode(self) -> bytes:
        return (
            Writer()
            .fixed(self.peer_id, 32)
            .raw(encode_endpoint(self.host, self.port))
            .u64(self.last_seen)
            .bytes()
        )

    @classmethod
    def read(cls, r: Reader) -> "NodeInfo":
        peer_id = r.fixed(32)
        host, port = decode_endpoint(r)
        return cls(peer_id, host, port, r.u64())


class RoutingTable:
    """256 distance buckets of capacity k, most-recently-seen at the tail."""

    def __init__(self, self_id: bytes, k: int = K):
        self.self_id = self_id
        self.k = k
        self.buckets: list[list[NodeInfo]] = [[] for _ in range(256)]

    def __len__(self):
        return sum(len(b) for b in self.buckets)

    def nodes(self) -> list[NodeInfo]:
        return [n for b in self.buckets for n in b]

    def get(self, peer_id: bytes) -> NodeInfo | None:
        if peer_id == self.self_id:
            return None
        bucket = self.buckets[bucket_index(self.self_id, peer_id)]
        for n in bucket:
            if n.peer_id == peer_id:
                return n
        return None

    def add(self, info: NodeInfo) -> NodeInfo | None:
        """Insert or refresh an entry.

        Returns None when the entry was absorbed. When the bucket is full
        and the newcomer is unknown, returns the least-recently-seen
        resident: the caller should ping it and call `evict` only if the
        ping fails (a live node is never displaced by a new one).
        """
        if info.peer_id == self.self_id:
            return None
        bucket = self.buckets[bucket_index(self.self_id, info.peer_id)]
        for i, existing in enumerate(bucket):
            if existing.peer_id == info.peer_id:
                bucket.pop(i)
                if info.last_seen < existing.last_seen:
                    info = replace(info, last_seen=existing.last_seen)
                bucket.append(info)
                return None
        if len(bucket) < self.k:
            bucket.append(info)
            return None
        return bucket[0]

    def evict(self, peer_id: bytes, replacement: NodeInfo | None = None) -> None:
        if peer_id == self.self_id:
            return
        bucket = self.buckets[bucket_index(self.self_id, peer_id)]
        for i, existing in enumerate(bucket):
            if existing.peer_id == peer_id:
                bucket.pop(i)
                break
        if replacement is not None and len(bucket) < self.k:
            bucket.append(replacement)

    def touch(self, peer_id: bytes) -> None:
        """Move a known peer to most-recently-seen."""
        existing = self.get(peer_id)
        if existing is not None:
            self.add(replace(existing))

    def closest(self, target: bytes, n: int | None = None, exclude: frozenset[bytes] = frozenset()) -> list[NodeInfo]:
        n = self.k if n is None else n
        candidates = [x for x in self.nodes() if x.peer_id not in exclude]
        candidates.sort(key=lambda x: xor_distance(x.peer_id, target))
        return candidates[:n]


@dataclass(frozen=True)
class DhtRecord:
    """Signed, expiring key/value record.

    The wire form carries the publisher's two public keys so any node can
    check the publisher id is their hash and the signature verifies: the
    record is self-certifying, no directory needed.
    """

    key: bytes
    kind: int
    value: bytes
    publisher: bytes
    publisher_enc: bytes
    publisher_sig_key: bytes
    expires_at: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .raw(_RECORD_CONTEXT)
            .fixed(self.key, 32)
            .u8(self.kind)
            .var16(self.value)
            .fixed(self.publisher, 32)
            .u64(self.expires_at)
            .bytes()
        )

    def verify(self) -> bool:
        if len(self.value) > MAX_RECORD_VALUE or len(self.signature) != 64:
            return False
        if idm.derive_peer_id(self.publisher_enc, self.publisher_sig_key) != self.publisher:
            return False
        return idm.verify(self.signing_bytes(), self.signature, self.publisher_sig_key)

    def encode(self) -> bytes:
        return (
            Writer()
            .fixed(self.key, 32)
            .u8(self.kind)
            .var16(self.value)
            .fixed(self.publisher, 32)
            .fixed(self.publisher_enc, 32)
            .fixed(self.publisher_sig_key, 32)
            .u64(self.expires_at)
            .fixed(self.signature, 64)
            .bytes()
        )

    @classmethod
    def read(cls, r: Reader) -> "DhtRecord":
        return cls(
            key=r.fixed(32),
            kind=r.u8(),
            value=r.var16(),
            publisher=r.fixed(32),
            publisher_enc=r.fixed(32),
            publisher_sig_key=r.fixed(32),
            expires_at=r.u64(),
            signature=r.fixed(64),
        )


def make_record(
    publisher: idm.PeerIdentity, key: bytes, kind: int, value: bytes, expires_at: int
) -> DhtRecord:
    if len(value) > MAX_RECORD_VALUE:
        raise MalformedInput(f"record value exceeds {MAX_RECORD_VALUE} bytes")
    rec = DhtRecord(
        key=key,
        kind=kind,
        value=value,
        publisher=publisher.peer_id,
        publisher_enc=publisher.enc_public,
        publisher_sig_key=publisher.sig_public,
        expires_at=expires_at,
    )
    return replace(rec, signature=idm.sign(rec.signing_bytes(), publisher))


# Queue-head value convention (see dmq): a leading 0x01 byte is a mutable
# slot whose next 8 bytes are a big-endian version; a leading 0x02 byte is
# an immutable segment whose key must equal the SHA-256 of the value.
SLOT_MUTABLE = 0x01
SLOT_SEGMENT = 0x02


def _queue_head_version(value: bytes) -> int | None:
    if len(value) >= 9 and value[0] == SLOT_MUTABLE:
        return int.from_bytes(value[1:9], "big")
    return None


PUT_STORED = "stored"
PUT_BAD_SIGNATURE = "bad-signature"
PUT_EXPIRED = "expired"
PUT_STALE = "stale"
PUT_BAD_CONTENT = "bad-content"


class RecordStore:
    """Local record shelf with per-(key, publisher) replacement rules."""

    def __init__(self):
        self._records: dict[tuple[bytes, int, bytes], DhtRecord] = {}

    def put(self, record: DhtRecord, now: int) -> str:
        if not record.verify():
            return PUT_BAD_SIGNATURE
        if record.expires_at <= now:
            return PUT_EXPIRED
        slot = (record.key, record.kind, record.publisher)
        held = self._records.get(slot)
        if record.kind == KIND_QUEUE_HEAD:
            if record.value[:1] == bytes([SLOT_SEGMENT]):
                if idm.content_id(record.value) != record.key:
                    return PUT_BAD_CONTENT
            else:
                version = _queue_head_version(record.value)
                if version is None:
                    return PUT_BAD_CONTENT
                if held is not None:
                    held_version = _queue_head_version(held.value)
                    if held_version is not None and version <= held_version:
                        return PUT_STALE
        elif held is not None and record.expires_at <= held.expires_at:
            return PUT_STALE
        self._records[slot] = record
        return PUT_STORED

    def get(self, key: bytes, kind: int | None, now: int) -> list[DhtRecord]:
        out = []
        for (k, knd, _), rec in self._records.items():
            if k == key and (kind is None or knd == kind) and rec.expires_at > now:
                out.append(rec)
        return out

    def held_version(self, key: bytes, publisher: bytes) -> int | None:
        rec = self._records.get((key, KIND_QUEUE_HEAD, publisher))
        return None if rec is None else _queue_head_version(rec.value)

    def sweep(self, now: int) -> int:
        stale = [slot for slot, rec in self._records.items() if rec.expires_at <= now]
        for slot in stale:
            del self._records[slot]
        return len(stale)

    def all_records(self) -> list[DhtRecord]:
        return list(self._records.values())

    def __len__(self):
        return len(self._records)


async def iterative_lookup(
    target: bytes,
    seeds: list[NodeInfo],
    query,
    k: int = K,
    alpha: int = ALPHA,
    collect_records: bool = False,
):
    """Iterative node lookup with parallelism alpha.

    `query(node, target)` must return a list of NodeInfo (and, when
    collect_records is set, a (nodes, records) tuple) or raise on failure.
    Returns the k closest live nodes sorted by distance, plus the gathered
    records when requested. Terminates once every unqueried candidate
    among the k closest has been tried and no round improved the set.
    """
    shortlist: dict[bytes, NodeInfo] = {n.peer_id: n for n in seeds}
    queried: set[bytes] = set()
    alive: set[bytes] = set()
    failed: set[bytes] = set()
    records: list = []

    def ranked() -> list[NodeInfo]:
        nodes = [n for pid, n in shortlist.items() if pid not in failed]
        nodes.sort(key=lambda n: xor_distance(n.peer_id, target))
        return nodes

    while True:
        top = [n for n in ranked() if n.peer_id in alive or n.peer_id not in queried][:k]
        batch = [n for n in top if n.peer_id not in queried][: max(alpha, 1)]
        if not batch:
            break
        results = await asyncio.gather(*(query(n, target) for n in batch), return_exceptions=True)
        for node, result in zip(batch, results):
            queried.add(node.peer_id)
            if isinstance(result, BaseException):
                failed.add(node.peer_id)
                continue
            alive.add(node.peer_id)
            if collect_records:
                found_nodes, found_records = result
                records.extend(found_records)
            else:
                found_nodes = result
            for info in found_nodes:
                shortlist.setdefault(info.peer_id, info)

    closest = [n for n in ranked() if n.peer_id in alive][:k]
    if collect_records:
        return closest, records
    return closest
