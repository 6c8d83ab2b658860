"""The full peer node: path selection, inbox sync, contacts, and governance.

Sending tries the direct channel first and falls back to the stored path:
seal, chunk, pin, then enqueue the manifest hash for the recipient.
Receiving drains the queue, fetches and verifies every chunk, decrypts,
surfaces the message, then acknowledges and unpins so the swarm can forget
the ciphertext. Each message travels exactly one path to the application:
a receiver-side id check drops the rare duplicate that crosses paths when
a channel dies mid-send.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
from dataclasses import dataclass

from . import consensus as cons
from . import dmq as dmq_mod
from . import identity as idm
from . import wire
from .channel import Channel, ChannelManager
from .config import NodeConfig
from .errors import (
    AuthenticationError,
    ChannelClosed,
    ConnectivityError,
    DialTimeout,
    FybrrError,
    HashMismatch,
    MalformedInput,
    NotFound,
    PeerOffline,
    RpcError,
)
from .peer import Peer
from .rendezvous import RendezvousClient
from .store import Manifest, chunk_payload, now_ms, reassemble
from .wire import Reader, Writer

ENV_CHAT = 0x01
ENV_ACK = 0x02

MAX_MESSAGE_BYTES = 1 << 20

PENDING = "pending"
SENT_DIRECT = "sent_direct"
QUEUED = "queued"
DELIVERED = "delivered"
FAILED = "failed"

# sent_direct may move to queued: a message whose channel died before the
# delivery ack is rerouted through the stored path exactly once
_NEXT = {
    PENDING: {SENT_DIRECT, QUEUED, FAILED},
    SENT_DIRECT: {DELIVERED, QUEUED, FAILED},
    QUEUED: {DELIVERED},
    DELIVERED: set(),
    FAILED: set(),
}


@dataclass
class OutboundMessage:
    msg_id: bytes
    to: bytes
    plaintext: bytes
    created_at: int
    status: str = PENDING
    error: str | None = None

    def advance(self, status: str) -> bool:
        if status in _NEXT[self.status]:
            self.status = status
            return True
        return False


@dataclass
class InboundMessage:
    from_id: bytes
    plaintext: bytes
    received_at: int
    path: str  # "direct" | "dmq"
    msg_id: bytes


def _encode_envelope(kind: int, msg_id: bytes, created_at: int, body: bytes = b"") -> bytes:
    return Writer().u8(kind).fixed(msg_id, 16).u64(created_at).raw(body).bytes()


def _decode_envelope(data: bytes):
    r = Reader(data)
    return r.u8(), r.fixed(16), r.u64(), r.remaining()


class Node:
    """One user's device: swarm member, message endpoint, and vote caster."""

    def __init__(self, config: NodeConfig, identity: idm.PeerIdentity | None = None):
        self.config = config
        self.identity = identity or idm.load_identity(config.key_file)
        host, port = wire.parse_endpoint(config.listen)
        os.makedirs(config.data_dir, exist_ok=True)
        self.peer = Peer(
            self.identity,
            config.data_dir,
            host=host,
            port=port,
            swarm_key=config.swarm_key_bytes(),
            replication=config.replication,
        )
        self.log = logging.getLogger(f"fybrr.node.{self.identity.peer_id.hex()[:8]}")
        self.channels = ChannelManager(
            self.identity,
            swarm_digest=self.peer.swarm_digest,
            listen_host=host,
            membership_check=self._membership_check if config.private else None,
        )
        self.channels.on_incoming = self._on_channel
        self.peer.channel_open_handler = self.channels.handle_channel_open
        self.peer.gossip_handler = self._on_gossip
        self.rendezvous: RendezvousClient | None = None
        self.consensus: cons.ConsensusEngine | None = None
        self.outbound: dict[bytes, OutboundMessage] = {}
        self.inbox: list[InboundMessage] = []
        self.contacts: dict[bytes, dict] = {}
        self._seen_msg_ids: set[bytes] = set()
        self._quarantined: set[bytes] = set()
        self._rerouted: set[bytes] = set()
        self._subscribers: list = []
        self._sync_lock = asyncio.Lock()
        self._last_ts = 0
        self._tasks: list[asyncio.Task] = []
        self._history_path = os.path.join(config.data_dir, "history.log")
        self._contacts_path = os.path.join(config.data_dir, "contacts.json")
        self._log_path = os.path.join(config.data_dir, "consensus.log")
        self.api = None
        self._load_contacts()
        # the no-duplicate guarantee must survive restarts: re-seed the
        # message-id filter from the durable history
        for record in self.load_history():
            if record.get("dir") == "in":
                try:
                    self._seen_msg_ids.add(bytes.fromhex(record["msg_id"]))
                except (KeyError, ValueError):
                    continue

    # ------------------------------------------------------------- lifecycle

    async def start(self) -> None:
        await self.peer.start()
        self.channels.listen_port = self.peer.port
        if self.config.rendezvous:
            rv_host, rv_port = wire.parse_endpoint(self.config.rendezvous)
            self.rendezvous = RendezvousClient(
                self.identity,
                rv_host,
                rv_port,
                swarm_key=self.config.swarm_key_bytes(),
                listen_host=self.peer.host,
                listen_port=self.peer.port,
                on_relayed=self.channels.handle_relayed,
            )
            self.channels.rendezvous = self.rendezvous
            await self.rendezvous.start()
        if self.config.bootstrap:
            try:
                await self.peer.bootstrap(self.config.bootstrap)
            except RpcError as e:
                self.log.warning("dht bootstrap failed: %s", e)
        await self._init_consensus()
        await self.sync_inbox()
        self._tasks.append(asyncio.create_task(self._inbox_loop()))
        if self.config.api_port is not None:
            from .api import ApiServer

            self.api = ApiServer(self, port=self.config.api_port)
            await self.api.start()

    async def stop(self) -> None:
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks.clear()
        if self.api is not None:
            await self.api.stop()
        await self.channels.close_all()
        if self.rendezvous is not None:
            await self.rendezvous.close()
        await self.peer.stop()

    async def _inbox_loop(self):
        while True:
            await asyncio.sleep(self.config.inbox_poll)
            try:
                await self.sync_inbox()
            except Exception:
                self.log.exception("inbox sync failed; will retry")

    # ------------------------------------------------------------- consensus

    async def _init_consensus(self) -> None:
        if os.path.exists(self._log_path):
            with open(self._log_path, "rb") as f:
                self.consensus = cons.ConsensusEngine.from_log(f.read())
            return
        if not self.config.genesis and self.config.bootstrap:
            for endpoint in self.config.bootstrap:
                try:
                    host, port = wire.parse_endpoint(endpoint)
                    log_bytes = await self._request_state(host, port)
                    self.consensus = cons.ConsensusEngine.from_log(log_bytes)
                    self._persist_consensus()
                    return
                except (FybrrError, OSError) as e:
                    self.log.debug("state sync from %s failed: %s", endpoint, e)
        self.consensus = cons.ConsensusEngine.genesis(self.identity)
        self._persist_consensus()
        await self._push_members()

    def _persist_consensus(self) -> None:
        with open(self._log_path, "wb") as f:
            f.write(self.consensus.encode_log())

    async def _push_members(self) -> None:
        if self.config.private and self.rendezvous is not None and self.rendezvous.connected:
            try:
                await self.rendezvous.push_members(self.consensus.encode_log())
            except RpcError as e:
                self.log.debug("membership push rejected: %s", e)

    def _membership_check(self, peer_id: bytes) -> bool:
        return self.consensus is not None and peer_id in self.consensus.state.members

    def _state_req_signing(self, requester: bytes, ts: int) -> bytes:
        return Writer().raw(b"fybrr/state-req/v1").fixed(requester, 32).u64(ts).bytes()

    async def _request_state(self, host: str, port: int) -> bytes:
        ts = now_ms()
        body = (
            Writer()
            .fixed(self.identity.peer_id, 32)
            .fixed(self.identity.enc_public, 32)
            .fixed(self.identity.sig_public, 32)
            .u64(ts)
            .fixed(idm.sign(self._state_req_signing(self.identity.peer_id, ts), self.identity), 64)
            .bytes()
        )
        return await self.peer.rpc_endpoint(host, port, wire.STATE_REQ, body)

    async def _on_gossip(self, ftype: int, body: bytes, sender) -> bytes:
        if self.consensus is None:
            return wire.err(wire.ST_ERROR, "consensus not initialised")
        if ftype == wire.PROPOSE:
            r = Reader(body)
            proposal = cons.Proposal.read(Reader(r.var16()))
            sig = r.fixed(64)
            r.done()
            try:
                self.consensus.receive_proposal(proposal, sig)
            except FybrrError as e:
                return wire.err(wire.ST_DENIED, str(e))
            await self._emit(self._proposal_event(proposal.proposal_id))
            return wire.ok()
        if ftype == wire.BALLOT:
            try:
                ballot = cons.Ballot.read(Reader(body))
                self.consensus.receive_ballot(ballot)
            except FybrrError as e:
                return wire.err(wire.ST_DENIED, str(e))
            await self._maybe_apply(ballot.proposal_id)
            await self._emit(self._tally_event(ballot.proposal_id))
            return wire.ok()
        if ftype == wire.STATE_REQ:
            r = Reader(body)
            requester = r.fixed(32)
            enc = r.fixed(32)
            sig_key = r.fixed(32)
            ts = r.u64()
            sig = r.fixed(64)
            r.done()
            if idm.derive_peer_id(enc, sig_key) != requester:
                return wire.err(wire.ST_DENIED, "requester keys do not match id")
            if not idm.verify(self._state_req_signing(requester, ts), sig, sig_key):
                return wire.err(wire.ST_DENIED, "bad state request signature")
            if self.config.private and requester not in self.consensus.state.members:
                return wire.err(wire.ST_DENIED, "not a member")
            return wire.ok(self.consensus.encode_log())
        if ftype == wire.STATE_RESP:
            try:
                if self.consensus.adopt_log(body):
                    self._persist_consensus()
            except FybrrError as e:
                return wire.err(wire.ST_DENIED, str(e))
            return wire.ok()
        return wire.err(wire.ST_ERROR, "unknown gossip frame")

    async def _maybe_apply(self, proposal_id: bytes) -> None:
        try:
            if self.consensus.tally(proposal_id) == cons.Outcome.ACCEPTED:
                tracked = self.consensus.get(proposal_id)
                if not tracked.applied:
                    self.consensus.apply(proposal_id)
                    self._persist_consensus()
                    await self._push_members()
        except FybrrError as e:
            self.log.debug("apply skipped for %s: %s", proposal_id.hex()[:12], e)

    async def _member_endpoints(self) -> list[tuple[bytes, str, int]]:
        out = []
        for pid in self.consensus.state.members:
            if pid == self.identity.peer_id:
                continue
            info = self.peer.routing.get(pid)
            if info is not None:
                out.append((pid, info.host, info.port))
                continue
            if self.rendezvous is not None and self.rendezvous.connected:
                reg = await self.rendezvous.lookup(pid)
                if reg is not None:
                    out.append((pid, reg.host, reg.port))
        return out

    async def _broadcast_gossip(self, ftype: int, body: bytes) -> int:
        reached = 0
        for pid, host, port in await self._member_endpoints():
            try:
                await self.peer.rpc_endpoint(host, port, ftype, body)
                reached += 1
            except RpcError:
                continue
        return reached

    async def propose(self, kind: cons.Kind, subject: cons.Subject, ttl_ms=None) -> cons.Proposal:
        kwargs = {} if ttl_ms is None else {"ttl_ms": ttl_ms}
        proposal, sig = self.consensus.propose(kind, subject, self.identity, **kwargs)
        self._persist_consensus()
        body = Writer().var16(proposal.encode()).fixed(sig, 64).bytes()
        await self._broadcast_gossip(wire.PROPOSE, body)
        await self._emit(self._proposal_event(proposal.proposal_id))
        return proposal

    async def vote(self, proposal_id: bytes, choice: cons.Choice) -> cons.Outcome:
        ballot = self.consensus.cast_vote(proposal_id, choice, self.identity)
        await self._broadcast_gossip(wire.BALLOT, ballot.encode())
        await self._maybe_apply(proposal_id)
        outcome = self.consensus.tally(proposal_id)
        await self._emit(self._tally_event(proposal_id))
        return outcome

    def _proposal_event(self, proposal_id: bytes) -> dict:
        tracked = self.consensus.get(proposal_id)
        subject = tracked.proposal.subject
        return {
            "op": "proposal",
            "proposal": proposal_id.hex(),
            "kind": tracked.proposal.kind.name,
            "subject": subject.peer_id.hex() if subject.peer_id else f"{subject.name}={subject.value}",
            "deadline": tracked.proposal.deadline,
        }

    def _tally_event(self, proposal_id: bytes) -> dict:
        yes, no = self.consensus.counts(proposal_id)
        return {
            "op": "tally",
            "proposal": proposal_id.hex(),
            "yes": yes,
            "no": no,
            "members": len(self.consensus.get(proposal_id).electorate),
            "state": self.consensus.tally(proposal_id).value,
        }

    # ------------------------------------------------------------------ keys

    async def resolve_keys(self, peer_id: bytes) -> tuple[bytes, bytes]:
        """(enc_public, sig_public) for a peer, from any trusted source."""
        contact = self.contacts.get(peer_id)
        if contact and contact.get("enc"):
            return bytes.fromhex(contact["enc"]), bytes.fromhex(contact["sig"])
        if self.consensus is not None:
            keys = self.consensus.state.members.get(peer_id)
            if keys is not None:
                return keys.enc_public, keys.sig_public
        known = self.peer.dmq.peer_keys.get(peer_id)
        if known is not None:
            return known
        if self.rendezvous is not None and self.rendezvous.connected:
            keys = await self.rendezvous.directory(peer_id)
            if keys is not None:
                self.add_contact(peer_id, name=None, enc=keys[0], sig=keys[1])
                return keys
        raise NotFound(f"no public keys known for {peer_id.hex()[:16]}")

    def add_contact(self, peer_id: bytes, name: str | None, enc: bytes | None = None, sig: bytes | None = None):
        entry = self.contacts.setdefault(peer_id, {})
        if name:
            entry["name"] = name
        if enc is not None and sig is not None:
            if idm.derive_peer_id(enc, sig) != peer_id:
                raise AuthenticationError("contact keys do not hash to the peer id")
            entry["enc"] = enc.hex()
            entry["sig"] = sig.hex()
        self._save_contacts()

    def _load_contacts(self):
        if os.path.exists(self._contacts_path):
            try:
                with open(self._contacts_path, encoding="utf-8") as f:
                    raw = json.load(f)
                self.contacts = {bytes.fromhex(k): v for k, v in raw.items()}
            except (ValueError, OSError):
                self.log.warning("contacts file unreadable; starting empty")

    def _save_contacts(self):
        with open(self._contacts_path, "w", encoding="utf-8") as f:
            json.dump({k.hex(): v for k, v in self.contacts.items()}, f, indent=0)

    # ------------------------------------------------------------------ send

    def _next_ts(self) -> int:
        # strictly monotonic, so queue order always reflects send order
        self._last_ts = max(now_ms(), self._last_ts + 1)
        return self._last_ts

    async def send_message(self, to: bytes, plaintext: bytes, force_path: str | None = None) -> OutboundMessage:
        if len(plaintext) > MAX_MESSAGE_BYTES:
            raise MalformedInput("messages are capped at 1 MiB")
        msg = OutboundMessage(
            msg_id=os.urandom(16), to=to, plaintext=plaintext, created_at=self._next_ts()
        )
        self.outbound[msg.msg_id] = msg
        try:
            enc_public, _ = await self.resolve_keys(to)
        except NotFound as e:
            msg.advance(FAILED)
            msg.error = str(e)
            await self._emit_status(msg)
            return msg

        envelope = _encode_envelope(ENV_CHAT, msg.msg_id, msg.created_at, plaintext)

        if force_path != "dmq":
            try:
                channel = self.channels.get_open(to) or await self.channels.dial(to)
                if channel.on_message is None:
                    self._wire_channel(channel)
                await channel.send(envelope)
                msg.advance(SENT_DIRECT)
                self._history_append("out", to, plaintext, msg.created_at, "direct", msg.msg_id)
                await self._emit_status(msg)
                return msg
            except (PeerOffline, DialTimeout, ChannelClosed, RpcError) as e:
                self.log.info("direct path unavailable (%s); using store-and-forward", e)
                if force_path == "direct":
                    msg.advance(FAILED)
                    msg.error = str(e)
                    await self._emit_status(msg)
                    return msg

        try:
            await self._send_via_queue(msg, envelope, enc_public)
            msg.advance(QUEUED)
            self._history_append("out", to, plaintext, msg.created_at, "dmq", msg.msg_id)
        except (FybrrError, OSError) as e:
            msg.advance(FAILED)
            msg.error = f"both paths failed: {e}"
            self.log.warning("message %s failed: %s", msg.msg_id.hex()[:8], msg.error)
        await self._emit_status(msg)
        return msg

    async def _send_via_queue(self, msg: OutboundMessage, envelope: bytes, enc_public: bytes):
        box = idm.seal(envelope, self.identity, enc_public)
        manifest, chunks = chunk_payload(
            box.ciphertext,
            sender_public=self.identity.enc_public,
            recipient_peer_id=msg.to,
            nonce=box.nonce,
        )
        for chunk in chunks:
            self.peer.store.put_block(chunk.data, cid=chunk.cid)
            await self.peer.pin(chunk.cid)
        manifest_cid = self.peer.store.put_block(manifest.encode())
        await self.peer.pin(manifest_cid)
        entry = dmq_mod.make_entry(msg.to, manifest_cid, self.identity, msg.created_at)
        replicas = await self.peer.dmq.enqueue(entry)
        if replicas == 0:
            raise ConnectivityError("queue entry could not be replicated anywhere")

    # --------------------------------------------------------------- receive

    def _wire_channel(self, channel: Channel) -> None:
        async def on_message(data):
            await self._on_channel_data(channel, data)

        channel.on_message = on_message
        channel.on_close = self._on_channel_lost

    async def _on_channel(self, channel: Channel) -> None:
        self._wire_channel(channel)

    async def _on_channel_lost(self, channel: Channel) -> None:
        """Reroute unacknowledged direct sends through the stored path.

        A frame written into a dying connection can vanish without an
        error, so anything not yet delivery-acked goes through the queue
        exactly once; the receiver's message-id check drops the duplicate
        if the direct copy did land.
        """
        for msg in list(self.outbound.values()):
            if (
                msg.to != channel.peer
                or msg.status != SENT_DIRECT
                or msg.msg_id in self._rerouted
            ):
                continue
            self._rerouted.add(msg.msg_id)
            try:
                enc_public, _ = await self.resolve_keys(msg.to)
                envelope = _encode_envelope(ENV_CHAT, msg.msg_id, msg.created_at, msg.plaintext)
                await self._send_via_queue(msg, envelope, enc_public)
                msg.advance(QUEUED)
                self.log.info("rerouted %s via the queue after channel loss", msg.msg_id.hex()[:8])
            except (FybrrError, OSError) as e:
                msg.advance(FAILED)
                msg.error = f"channel lost and reroute failed: {e}"
            await self._emit_status(msg)

    async def _on_channel_data(self, channel: Channel, data: bytes) -> None:
        try:
            kind, msg_id, created_at, body = _decode_envelope(data)
        except MalformedInput:
            self.log.warning("undecodable envelope on channel; ignoring")
            return
        if kind == ENV_ACK:
            msg = self.outbound.get(msg_id)
            if msg is not None and msg.advance(DELIVERED):
                await self._emit_status(msg)
            return
        if kind != ENV_CHAT:
            return
        try:
            await channel.send(_encode_envelope(ENV_ACK, msg_id, now_ms()))
        except ChannelClosed:
            pass
        if msg_id in self._seen_msg_ids:
            return
        self._seen_msg_ids.add(msg_id)
        inbound = InboundMessage(
            from_id=channel.peer,
            plaintext=body,
            received_at=now_ms(),
            path="direct",
            msg_id=msg_id,
        )
        self.inbox.append(inbound)
        self._history_append("in", channel.peer, body, inbound.received_at, "direct", msg_id)
        await self._emit_inbound(inbound)

    async def sync_inbox(self) -> list[InboundMessage]:
        """Drain, fetch, verify, decrypt, surface, then ack and unpin.

        Entries that cannot be fetched stay queued for the next pass; ones
        that fail decryption are quarantined and never acknowledged.
        """
        async with self._sync_lock:
            new_messages: list[InboundMessage] = []
            try:
                entries = await self.peer.dmq.drain(self.identity)
            except (FybrrError, OSError) as e:
                self.log.debug("drain failed: %s", e)
                return new_messages
            for entry in entries:
                if entry.msg_cid in self._quarantined:
                    continue
                result = await self._receive_entry(entry)
                if result is not None:
                    new_messages.append(result)
            return new_messages

    async def _receive_entry(self, entry: dmq_mod.QueueEntry) -> InboundMessage | None:
        try:
            manifest = Manifest.decode(await self.peer.fetch_block(entry.msg_cid))
            if manifest.recipient_peer_id != self.identity.peer_id:
                raise AuthenticationError("manifest addressed to someone else")
            blocks = {}
            for cid in manifest.chunk_cids:
                blocks[cid] = await self.peer.fetch_block(cid)
            payload = reassemble(manifest, blocks)
        except (NotFound, HashMismatch, RpcError, MalformedInput) as e:
            self.log.info("entry %s not retrievable yet: %s", entry.msg_cid.hex()[:8], e)
            return None
        except AuthenticationError as e:
            self.log.warning("quarantining %s: %s", entry.msg_cid.hex()[:8], e)
            self._quarantined.add(entry.msg_cid)
            return None

        try:
            known = self.peer.dmq.peer_keys.get(entry.sender)
            if known is not None and manifest.sender_public != known[0]:
                raise AuthenticationError("manifest sender key does not match queue entry")
            envelope = idm.open_box(
                idm.SealedBox(manifest.nonce, payload), self.identity, manifest.sender_public
            )
            kind, msg_id, created_at, body = _decode_envelope(envelope)
            if kind != ENV_CHAT:
                raise MalformedInput("unexpected envelope kind in queue path")
        except (AuthenticationError, MalformedInput) as e:
            self.log.warning("quarantining undecryptable %s: %s", entry.msg_cid.hex()[:8], e)
            self._quarantined.add(entry.msg_cid)
            return None

        inbound = None
        if msg_id not in self._seen_msg_ids:
            self._seen_msg_ids.add(msg_id)
            inbound = InboundMessage(
                from_id=entry.sender,
                plaintext=body,
                received_at=now_ms(),
                path="dmq",
                msg_id=msg_id,
            )
            self.inbox.append(inbound)
            self._history_append("in", entry.sender, body, inbound.received_at, "dmq", msg_id)
            await self._emit_inbound(inbound)

        await self.peer.dmq.ack(self.identity, entry.msg_cid)
        await self.peer.unpin(entry.msg_cid)
        for cid in manifest.chunk_cids:
            await self.peer.unpin(cid)
        return inbound

    # ----------------------------------------------------------- history/api

    def _history_append(self, direction, peer_id, body, ts, path, msg_id):
        record = {
            "dir": direction,
            "peer": peer_id.hex(),
            "text": body.decode("utf-8", errors="replace"),
            "ts": ts,
            "path": path,
            "msg_id": msg_id.hex(),
        }
        blob = json.dumps(record, separators=(",", ":")).encode()
        box = idm.seal(blob, self.identity, self.identity.enc_public)
        with open(self._history_path, "a", encoding="ascii") as f:
            f.write((box.nonce + box.ciphertext).hex() + "\n")

    def load_history(self) -> list[dict]:
        if not os.path.exists(self._history_path):
            return []
        out = []
        with open(self._history_path, encoding="ascii") as f:
            for line in f:
                try:
                    raw = bytes.fromhex(line.strip())
                    box = idm.SealedBox(raw[:24], raw[24:])
                    blob = idm.open_box(box, self.identity, self.identity.enc_public)
                    out.append(json.loads(blob))
                except (ValueError, FybrrError):
                    continue  # unreadable line: skip rather than fail history
        return out

    def subscribe(self, callback) -> None:
        self._subscribers.append(callback)

    def unsubscribe(self, callback) -> None:
        if callback in self._subscribers:
            self._subscribers.remove(callback)

    async def _emit(self, event: dict) -> None:
        for callback in list(self._subscribers):
            try:
                await callback(event)
            except Exception:
                self.log.debug("event subscriber failed", exc_info=True)

    async def _emit_status(self, msg: OutboundMessage) -> None:
        event = {"op": "status", "msg_id": msg.msg_id.hex(), "state": msg.status}
        if msg.error:
            event["error"] = msg.error
        await self._emit(event)

    async def _emit_inbound(self, inbound: InboundMessage) -> None:
        await self._emit(
            {
                "op": "inbound",
                "from": inbound.from_id.hex(),
                "text": inbound.plaintext.decode("utf-8", errors="replace"),
                "path": inbound.path,
                "received_at": inbound.received_at,
                "msg_id": inbound.msg_id.hex(),
            }
        )
