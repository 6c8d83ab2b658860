"""Networked peer substrate: one listener serving every swarm RPC.

A peer owns the routing table, the record store, and the block store, and
talks to other peers over one-shot framed TCP requests. Every request
carries the swarm digest (a hash of the pre-shared swarm key) and the
sender's contact info; requests from a different swarm are dropped without
reply, and every inbound request refreshes the sender's routing entry.
Direct-channel connections arrive on the same port and are handed off to
the channel manager after their opening frame.
"""

from __future__ import annotations

import asyncio
import logging
import os
import random
from dataclasses import replace

from . import dmq as dmq_mod
from . import identity as idm
from . import wire
from .dht import (
    ALPHA,
    K,
    KIND_PROVIDER,
    KIND_QUEUE_HEAD,
    RECORD_TTL_MS,
    SLOT_SEGMENT,
    DhtRecord,
    NodeInfo,
    RecordStore,
    RoutingTable,
    iterative_lookup,
    make_record,
    xor_distance,
)
from .errors import NotFound, RpcError
from .store import BlockStore, PinRecord, now_ms
from .wire import Reader, Writer

SWARM_CONTEXT = b"fybrr/swarm/v1"
MAINTENANCE_INTERVAL = 60.0


def swarm_digest(swarm_key: bytes) -> bytes:
    return idm.content_id(SWARM_CONTEXT + swarm_key)


def encode_providers(infos: list[NodeInfo]) -> bytes:
    w = Writer().u16(len(infos))
    for info in infos:
        w.raw(info.encode())
    return w.bytes()


def decode_providers(value: bytes) -> list[NodeInfo]:
    r = Reader(value)
    infos = [NodeInfo.read(r) for _ in range(r.u16())]
    r.done()
    return infos


class Peer:
    """A swarm member: DHT node, pin holder, and channel endpoint."""

    def __init__(
        self,
        identity: idm.PeerIdentity,
        data_dir: str,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        swarm_key: bytes = b"",
        k: int = K,
        alpha: int = ALPHA,
        replication: int = 3,
        rpc_timeout: float = 2.0,
        record_ttl_ms: int = RECORD_TTL_MS,
        is_bootstrap: bool = False,
    ):
        self.identity = identity
        self.swarm_digest = swarm_digest(swarm_key)
        self.k = k
        self.alpha = alpha
        self.replication = replication
        self.rpc_timeout = rpc_timeout
        self.record_ttl_ms = record_ttl_ms
        self.is_bootstrap = is_bootstrap
        self.host = host
        self.port = port
        self.routing = RoutingTable(identity.peer_id, k)
        self.records = RecordStore()
        self.store = BlockStore(data_dir)
        self.log = logging.getLogger(f"fybrr.peer.{identity.peer_id.hex()[:8]}")
        self.dmq = dmq_mod.DmqClient(self)
        self.channel_open_handler = None
        self.gossip_handler = None
        # fault-injection hook for the scenario harness: blocks listed here
        # are served with one byte flipped, exercising reader-side verification
        self.serve_corrupt: set[bytes] = set()
        self._server: asyncio.AbstractServer | None = None
        self._pins: dict[bytes, PinRecord] = {}
        self._published: dict[tuple[bytes, int], DhtRecord] = {}
        self._eviction_checks: set[bytes] = set()
        self._conn_tasks: set[asyncio.Task] = set()
        self._maintenance: asyncio.Task | None = None
        self._running = False

    # ------------------------------------------------------------------ setup

    @property
    def node_info(self) -> NodeInfo:
        return NodeInfo(self.identity.peer_id, self.host, self.port, now_ms())

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._on_connection, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._running = True
        self._maintenance = asyncio.create_task(self._maintenance_loop())

    async def stop(self) -> None:
        self._running = False
        if self._maintenance:
            self._maintenance.cancel()
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._conn_tasks):
            task.cancel()
        await asyncio.gather(*self._conn_tasks, return_exceptions=True)
        self._conn_tasks.clear()

    async def _maintenance_loop(self):
        while True:
            await asyncio.sleep(MAINTENANCE_INTERVAL)
            now = now_ms()
            self.records.sweep(now)
            for record in list(self._published.values()):
                if record.expires_at - now < self.record_ttl_ms // 2:
                    fresh = make_record(
                        self.identity, record.key, record.kind, record.value,
                        now + self.record_ttl_ms,
                    )
                    try:
                        await self.store_record(fresh)
                    except Exception:
                        pass

    # ------------------------------------------------------------- server side

    def _on_connection(self, reader, writer):
        task = asyncio.create_task(self._serve_connection(reader, writer))
        self._conn_tasks.add(task)
        task.add_done_callback(self._conn_tasks.discard)

    async def _serve_connection(self, reader, writer):
        handed_off = False
        try:
            while True:
                try:
                    ftype, payload = await wire.read_frame(reader)
                except (asyncio.IncompleteReadError, ConnectionError):
                    break
                if ftype == wire.CHANNEL_OPEN:
                    if self.channel_open_handler is not None:
                        handed_off = await self.channel_open_handler(payload, reader, writer)
                        if handed_off:
                            # the channel owns this connection now
                            self._conn_tasks.discard(asyncio.current_task())
                    break
                response = await self._handle_rpc(ftype, payload)
                if response is None:
                    break
                writer.write(wire.frame(ftype | wire.RESP, response))
                await writer.drain()
        except Exception:
            self.log.debug("connection handler error", exc_info=True)
        finally:
            if not handed_off:
                writer.close()
                try:
                    await writer.wait_closed()
                except Exception:
                    pass

    async def _handle_rpc(self, ftype: int, payload: bytes) -> bytes | None:
        try:
            r = Reader(payload)
            digest = r.fixed(32)
            sender = NodeInfo.read(r)
            body = r.remaining()
        except Exception:
            return None
        if digest != self.swarm_digest:
            return None  # not our swarm: drop without acknowledging existence
        if sender.peer_id != self.identity.peer_id:
            self._learn(replace(sender, last_seen=now_ms()))
        try:
            return await self._dispatch(ftype, body, sender)
        except Exception as e:
            self.log.debug("rpc %#x failed: %s", ftype, e)
            return wire.err(wire.ST_ERROR, str(e))

    async def _dispatch(self, ftype: int, body: bytes, sender: NodeInfo) -> bytes | None:
        now = now_ms()
        if ftype == wire.DHT_PING:
            return wire.ok(self.node_info.encode())

        if ftype == wire.FIND_NODE:
            r = Reader(body)
            target = r.fixed(32)
            r.done()
            return wire.ok(self._encode_nodes(self.routing.closest(target, self.k)))

        if ftype == wire.FIND_VALUE:
            r = Reader(body)
            key = r.fixed(32)
            kind = r.u8()
            r.done()
            records = self.records.get(key, kind, now)
            if kind == KIND_QUEUE_HEAD:
                # mutable queue slots are served only through signed drains
                records = [rec for rec in records if rec.value[:1] == bytes([SLOT_SEGMENT])]
            w = Writer().u16(len(records))
            for rec in records:
                w.var16(rec.encode())
            w.raw(self._encode_nodes(self.routing.closest(key, self.k)))
            return wire.ok(w.bytes())

        if ftype == wire.STORE:
            record = DhtRecord.read(Reader(body))
            status = self.records.put(record, now)
            if status == "stored":
                return wire.ok()
            if status == "stale":
                return wire.err(wire.ST_CONFLICT, status)
            return wire.err(wire.ST_DENIED, status)

        if ftype == wire.STORE_BLOCK:
            r = Reader(body)
            cid = r.fixed(32)
            data = r.var32()
            r.done()
            self.store.put_block(data, cid=cid)
            return wire.ok()

        if ftype == wire.GET_BLOCK:
            r = Reader(body)
            cid = r.fixed(32)
            r.done()
            try:
                data = self.store.get_block(cid)
            except NotFound:
                return wire.err(wire.ST_NOT_FOUND, "no such block")
            if cid in self.serve_corrupt:
                data = bytes([data[0] ^ 0xFF]) + data[1:]
            return wire.ok(Writer().var32(data).bytes())

        if ftype == wire.RELEASE:
            r = Reader(body)
            cid = r.fixed(32)
            r.done()
            self.store.release(cid)
            return wire.ok()

        if ftype == wire.DMQ_DRAIN:
            return self._handle_drain(body, now)

        if ftype in (wire.PROPOSE, wire.BALLOT, wire.STATE_REQ, wire.STATE_RESP):
            if self.gossip_handler is None:
                return wire.err(wire.ST_ERROR, "consensus not enabled")
            return await self.gossip_handler(ftype, body, sender)

        return wire.err(wire.ST_ERROR, f"unknown rpc {ftype:#x}")

    def _handle_drain(self, body: bytes, now: int) -> bytes:
        r = Reader(body)
        recipient = r.fixed(32)
        requester = r.fixed(32)
        req_enc = r.fixed(32)
        req_sig_key = r.fixed(32)
        ts = r.u64()
        sig = r.fixed(64)
        r.done()
        if idm.derive_peer_id(req_enc, req_sig_key) != requester:
            return wire.err(wire.ST_DENIED, "requester keys do not match id")
        if abs(now - ts) > dmq_mod.DRAIN_MAX_SKEW_MS:
            return wire.err(wire.ST_DENIED, "drain request expired")
        if not idm.verify(dmq_mod.drain_signing_bytes(recipient, requester, ts), sig, req_sig_key):
            return wire.err(wire.ST_DENIED, "bad drain signature")
        records = self.records.get(dmq_mod.queue_key(recipient), KIND_QUEUE_HEAD, now)
        if requester != recipient:
            # a non-recipient may read back only its own published slot
            records = [rec for rec in records if rec.publisher == requester]
        w = Writer().u16(len(records))
        for rec in records:
            w.var16(rec.encode())
        return wire.ok(w.bytes())

    def _encode_nodes(self, nodes: list[NodeInfo]) -> bytes:
        w = Writer().u16(len(nodes))
        for info in nodes:
            w.raw(info.encode())
        return w.bytes()

    @staticmethod
    def _decode_nodes(r: Reader) -> list[NodeInfo]:
        return [NodeInfo.read(r) for _ in range(r.u16())]

    def _learn(self, info: NodeInfo) -> None:
        candidate = self.routing.add(info)
        if candidate is None or candidate.peer_id in self._eviction_checks:
            return
        self._eviction_checks.add(candidate.peer_id)

        async def check():
            try:
                if await self.ping(candidate):
                    self.routing.touch(candidate.peer_id)
                else:
                    self.routing.evict(candidate.peer_id, replace(info, last_seen=now_ms()))
            finally:
                self._eviction_checks.discard(candidate.peer_id)

        asyncio.create_task(check())

    # ------------------------------------------------------------- client side

    async def rpc_endpoint(self, host: str, port: int, ftype: int, body: bytes) -> bytes:
        """One-shot framed request; returns the OK body or raises RpcError."""
        request = (
            Writer().fixed(self.swarm_digest, 32).raw(self.node_info.encode()).raw(body).bytes()
        )

        async def exchange():
            reader, writer = await asyncio.open_connection(host, port)
            try:
                writer.write(wire.frame(ftype, request))
                await writer.drain()
                return await wire.read_frame(reader)
            finally:
                writer.close()

        try:
            rtype, payload = await asyncio.wait_for(exchange(), self.rpc_timeout)
        except (OSError, asyncio.TimeoutError, asyncio.IncompleteReadError) as e:
            raise RpcError(f"rpc {ftype:#x} to {host}:{port}: {e!r}") from None
        if rtype != (ftype | wire.RESP):
            raise RpcError(f"unexpected response frame {rtype:#x}")
        return wire.check_ok(payload)

    async def rpc(self, info: NodeInfo, ftype: int, body: bytes) -> bytes:
        if info.peer_id == self.identity.peer_id:
            response = await self._dispatch(ftype, body, self.node_info)
            return wire.check_ok(response)
        result = await self.rpc_endpoint(info.host, info.port, ftype, body)
        self._learn(replace(info, last_seen=now_ms()))
        return result

    async def ping(self, info: NodeInfo) -> bool:
        try:
            await self.rpc(info, wire.DHT_PING, b"")
            return True
        except Exception:
            return False

    # ------------------------------------------------------------- dht client

    def _lookup_seeds(self, target: bytes) -> list[NodeInfo]:
        seeds = self.routing.closest(target, self.k)
        return seeds + [self.node_info]

    async def find_node(self, target: bytes) -> list[NodeInfo]:
        """Iterative lookup; returns up to k live nodes closest to target."""

        async def query(info, tgt):
            body = await self.rpc(info, wire.FIND_NODE, Writer().fixed(tgt, 32).bytes())
            return self._decode_nodes(Reader(body))

        return await iterative_lookup(
            target, self._lookup_seeds(target), query, k=self.k, alpha=self.alpha
        )

    async def find_value(self, key: bytes, kind: int) -> list[DhtRecord]:
        """Lookup records of one kind along the path to the key's neighborhood."""

        async def query(info, tgt):
            body = await self.rpc(
                info, wire.FIND_VALUE, Writer().fixed(tgt, 32).u8(kind).bytes()
            )
            r = Reader(body)
            records = [DhtRecord.read(Reader(r.var16())) for _ in range(r.u16())]
            return self._decode_nodes(r), records

        _, records = await iterative_lookup(
            key, self._lookup_seeds(key), query, k=self.k, alpha=self.alpha,
            collect_records=True,
        )
        now = now_ms()
        best: dict[tuple[bytes, int, bytes], DhtRecord] = {}
        for rec in records:
            if rec.key != key or rec.kind != kind or rec.expires_at <= now or not rec.verify():
                continue
            slot = (rec.key, rec.kind, rec.publisher)
            held = best.get(slot)
            if held is None or rec.expires_at > held.expires_at:
                best[slot] = rec
        return list(best.values())

    async def store_record_at(self, nodes: list[NodeInfo], record: DhtRecord) -> int:
        results = await asyncio.gather(
            *(self.rpc(n, wire.STORE, record.encode()) for n in nodes),
            return_exceptions=True,
        )
        return sum(1 for res in results if not isinstance(res, BaseException))

    async def store_record(self, record: DhtRecord) -> int:
        """Write a signed record to the k closest nodes; returns replicas written."""
        if record.publisher == self.identity.peer_id:
            self._published[(record.key, record.kind)] = record
        nodes = await self.find_node(record.key)
        return await self.store_record_at(nodes, record)

    async def bootstrap(self, seeds: list[str]) -> int:
        """Join via seed endpoints; populates the routing table via self-lookup."""
        reached = 0
        for endpoint in seeds:
            host, port = wire.parse_endpoint(endpoint)
            try:
                body = await self.rpc_endpoint(host, port, wire.DHT_PING, b"")
                info = NodeInfo.read(Reader(body))
                self._learn(replace(info, host=host, port=port, last_seen=now_ms()))
                reached += 1
            except Exception as e:
                self.log.warning("seed %s unreachable: %s", endpoint, e)
        if reached == 0:
            raise RpcError("no bootstrap seed reachable")
        before = len(self.routing)
        await self.find_node(self.identity.peer_id)
        # one random refresh walk helps small swarms converge to full tables
        await self.find_node(os.urandom(32))
        return len(self.routing) - before

    # ------------------------------------------------------------ pin machinery

    async def pin(self, cid: bytes, replication: int | None = None) -> PinRecord:
        """Push a locally held block to the closest peers and publish providers."""
        replication = self.replication if replication is None else replication
        data = self.store.get_block(cid)
        candidates = [
            n for n in await self.find_node(cid) if n.peer_id != self.identity.peer_id
        ]
        candidates.sort(key=lambda n: (xor_distance(n.peer_id, cid), not self._is_bootstrap_peer(n)))
        holders: list[NodeInfo] = []
        body = Writer().fixed(cid, 32).var32(data).bytes()
        for info in candidates:
            if len(holders) >= replication:
                break
            try:
                await self.rpc(info, wire.STORE_BLOCK, body)
                holders.append(info)
            except RpcError:
                continue
        record = PinRecord(
            cid=cid,
            holders={h.peer_id for h in holders} or {self.identity.peer_id},
            created_at=now_ms(),
            degraded=not holders,
        )
        self._pins[cid] = record
        provider_infos = holders + [self.node_info]
        await self.store_record(
            make_record(
                self.identity, cid, KIND_PROVIDER,
                encode_providers(provider_infos), now_ms() + self.record_ttl_ms,
            )
        )
        return record

    def _is_bootstrap_peer(self, info: NodeInfo) -> bool:
        return False  # placeholder until membership carries bootstrap flags

    async def providers(self, cid: bytes) -> list[NodeInfo]:
        records = await self.find_value(cid, KIND_PROVIDER)
        seen: dict[bytes, NodeInfo] = {}
        for rec in records:
            try:
                for info in decode_providers(rec.value):
                    seen.setdefault(info.peer_id, info)
            except Exception:
                continue
        return list(seen.values())

    async def unpin(self, cid: bytes) -> None:
        """Send release notices to every known holder; idempotent."""
        state = self.store.pin_state(cid)
        if state is not None and state[0] == "released":
            return
        record = self._pins.get(cid)
        holders = await self.providers(cid)
        known = {h.peer_id for h in holders}
        if record is not None:
            known |= record.holders
        body = Writer().fixed(cid, 32).bytes()
        notices = [
            self.rpc(info, wire.RELEASE, body)
            for info in holders
            if info.peer_id != self.identity.peer_id
        ]
        await asyncio.gather(*notices, return_exceptions=True)
        self.store.release(cid)
        if record is not None:
            record.state = "released"

    async def fetch_block(self, cid: bytes) -> bytes:
        """Retrieve a block locally or from any provider, verifying its hash."""
        if self.store.has_block(cid):
            return self.store.get_block(cid)
        holders = await self.providers(cid)
        random.shuffle(holders)
        body = Writer().fixed(cid, 32).bytes()
        for info in holders:
            if info.peer_id == self.identity.peer_id:
                continue
            try:
                payload = await self.rpc(info, wire.GET_BLOCK, body)
                data = Reader(payload).var32()
            except RpcError:
                continue
            if idm.content_id(data) == cid:
                return data
            self.log.warning("holder %s served corrupt block %s", info.peer_id.hex()[:8], cid.hex()[:8])
        raise NotFound(f"no provider could serve block {cid.hex()}")

    def gc(self, now: int | None = None) -> int:
        return self.store.gc(now)
