"""Direct encrypted channels between two online peers.

The handshake is brokered by the rendezvous service: a signed offer with a
fresh ephemeral key is relayed to the callee, a signed answer comes back,
and the caller then connects straight to the callee's listener. Both sides
derive the session key from the two ephemerals, so a compromised relay can
delay the handshake but cannot read or inject traffic. Every frame on the
stream carries a sequence number that must increase by exactly one; the
header is repeated inside the authenticated ciphertext so it cannot be
reworked in transit. Failure is detected by ping/pong heartbeats and
surfaces as ChannelClosed, the caller's cue to reroute through the
store-and-forward path.
"""

from __future__ import annotations

import asyncio
import logging
import os
import time
from dataclasses import dataclass, replace

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey

from . import identity as idm
from . import wire, xsalsa
from .errors import AuthenticationError, ChannelClosed, DialTimeout, MalformedInput, PeerOffline
from .wire import Reader, Writer

OFFER = 1
ANSWER = 2

PING_INTERVAL_S = 3.0
MISS_LIMIT = 3
DIAL_TIMEOUT_S = 5.0
MAX_PLAINTEXT = 1 << 20

_OFFER_CONTEXT = b"fybrr/offer/v1"


@dataclass(frozen=True)
class ChannelOffer:
    """Signed half of the handshake; the same shape serves offer and answer."""

    kind: int
    from_id: bytes
    to_id: bytes
    session_id: bytes
    host: str
    port: int
    ephemeral_public: bytes
    enc_public: bytes
    sig_public: bytes
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .raw(_OFFER_CONTEXT)
            .u8(self.kind)
            .fixed(self.from_id, 32)
            .fixed(self.to_id, 32)
            .fixed(self.session_id, 16)
            .raw(wire.encode_endpoint(self.host, self.port))
            .fixed(self.ephemeral_public, 32)
            .bytes()
        )

    def verify(self) -> bool:
        if idm.derive_peer_id(self.enc_public, self.sig_public) != self.from_id:
            return False
        return idm.verify(self.signing_bytes(), self.signature, self.sig_public)

    def encode(self) -> bytes:
        return (
            Writer()
            .u8(self.kind)
            .fixed(self.from_id, 32)
            .fixed(self.to_id, 32)
            .fixed(self.session_id, 16)
            .raw(wire.encode_endpoint(self.host, self.port))
            .fixed(self.ephemeral_public, 32)
            .fixed(self.enc_public, 32)
            .fixed(self.sig_public, 32)
            .fixed(self.signature, 64)
            .bytes()
        )

    @classmethod
    def decode(cls, data: bytes) -> "ChannelOffer":
        r = Reader(data)
        kind = r.u8()
        from_id = r.fixed(32)
        to_id = r.fixed(32)
        session_id = r.fixed(16)
        host, port = wire.decode_endpoint(r)
        offer = cls(
            kind, from_id, to_id, session_id, host, port,
            r.fixed(32), r.fixed(32), r.fixed(32), r.fixed(64),
        )
        r.done()
        return offer


def _make_offer(
    kind: int,
    identity: idm.PeerIdentity,
    to_id: bytes,
    session_id: bytes,
    host: str,
    port: int,
    ephemeral_public: bytes,
) -> ChannelOffer:
    offer = ChannelOffer(
        kind=kind,
        from_id=identity.peer_id,
        to_id=to_id,
        session_id=session_id,
        host=host,
        port=port,
        ephemeral_public=ephemeral_public,
        enc_public=identity.enc_public,
        sig_public=identity.sig_public,
    )
    return replace(offer, signature=idm.sign(offer.signing_bytes(), identity))


def _session_key(eph_secret: X25519PrivateKey, peer_ephemeral: bytes) -> bytes:
    shared = eph_secret.exchange(X25519PublicKey.from_public_bytes(peer_ephemeral))
    return xsalsa.hsalsa20(shared, bytes(16))


class Channel:
    """Ordered, encrypted, heartbeat-supervised stream to one peer."""

    def __init__(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        *,
        session_id: bytes,
        peer: bytes,
        session_key: bytes,
        ping_interval: float = PING_INTERVAL_S,
        miss_limit: int = MISS_LIMIT,
    ):
        self._reader = reader
        self._writer = writer
        self.session_id = session_id
        self.peer = peer
        self._key = session_key
        self.send_seq = 0
        self.recv_seq = 0
        self.state = "open"
        self.ping_interval = ping_interval
        self.miss_limit = miss_limit
        self.on_message = None  # async callable(bytes)
        self.on_close = None  # async callable(channel)
        self.log = logging.getLogger(f"fybrr.channel.{session_id.hex()[:8]}")
        self._send_lock = asyncio.Lock()
        self._last_heard = time.monotonic()
        self._tasks: list[asyncio.Task] = []
        self._close_sent = False
        # test hook: stop answering pings to simulate a silent network cut
        self.mute_pongs = False

    def start(self) -> None:
        self._tasks = [
            asyncio.create_task(self._recv_loop()),
            asyncio.create_task(self._heartbeat_loop()),
        ]

    @property
    def open(self) -> bool:
        return self.state == "open"

    async def _send_frame(self, ftype: int, payload: bytes) -> int:
        async with self._send_lock:
            if not self.open:
                raise ChannelClosed("channel is closed")
            self.send_seq += 1
            seq = self.send_seq
            nonce = os.urandom(24)
            inner = Writer().u8(ftype).u64(seq).raw(payload).bytes()
            box = xsalsa.secretbox_seal(inner, nonce, self._key)
            frame_payload = Writer().u64(seq).fixed(nonce, 24).raw(box).bytes()
            try:
                self._writer.write(wire.frame(ftype, frame_payload))
                await self._writer.drain()
            except (ConnectionError, OSError) as e:
                await self._shutdown(notify=True)
                raise ChannelClosed(f"transport failed: {e}") from None
            return seq

    async def send(self, plaintext: bytes) -> int:
        """Encrypt and send one application message; returns its sequence number."""
        if len(plaintext) > MAX_PLAINTEXT:
            raise MalformedInput("message exceeds the 1 MiB channel limit")
        return await self._send_frame(wire.DATA, plaintext)

    async def close(self) -> None:
        if self.open:
            try:
                await self._send_frame(wire.CLOSE, b"")
            except ChannelClosed:
                pass
        await self._shutdown(notify=False)

    async def _shutdown(self, notify: bool) -> None:
        if self.state == "closed":
            return
        self.state = "closed"
        current = asyncio.current_task()
        for task in self._tasks:
            if task is not current:
                task.cancel()
        self._writer.close()
        if notify and self.on_close is not None:
            try:
                await self.on_close(self)
            except Exception:
                self.log.exception("close handler failed")

    async def _recv_loop(self):
        try:
            while self.open:
                ftype, payload = await wire.read_frame(self._reader)
                r = Reader(payload)
                seq = r.u64()
                nonce = r.fixed(24)
                box = r.remaining()
                try:
                    inner = xsalsa.secretbox_open(box, nonce, self._key)
                except AuthenticationError:
                    self.log.warning("discarding tampered frame")
                    await self._shutdown(notify=True)
                    return
                ir = Reader(inner)
                if ir.u8() != ftype or ir.u64() != seq:
                    self.log.warning("frame header mismatch; closing")
                    await self._shutdown(notify=True)
                    return
                if seq != self.recv_seq + 1:
                    self.log.warning("sequence gap %d -> %d; closing", self.recv_seq, seq)
                    await self._shutdown(notify=True)
                    return
                self.recv_seq = seq
                self._last_heard = time.monotonic()
                body = ir.remaining()
                if ftype == wire.DATA:
                    if self.on_message is not None:
                        await self.on_message(body)
                elif ftype == wire.PING:
                    if not self.mute_pongs:
                        await self._send_frame(wire.PONG, b"")
                elif ftype == wire.PONG:
                    pass
                elif ftype == wire.CLOSE:
                    await self._shutdown(notify=True)
                    return
        except (asyncio.IncompleteReadError, ConnectionError, MalformedInput):
            await self._shutdown(notify=True)
        except asyncio.CancelledError:
            raise
        except Exception:
            self.log.exception("receive loop crashed")
            await self._shutdown(notify=True)

    async def _heartbeat_loop(self):
        while self.open:
            await asyncio.sleep(self.ping_interval)
            if not self.open:
                return
            if time.monotonic() - self._last_heard > self.ping_interval * self.miss_limit:
                self.log.info("peer silent for %d pings; closing", self.miss_limit)
                await self._shutdown(notify=True)
                return
            try:
                await self._send_frame(wire.PING, b"")
            except ChannelClosed:
                return


class ChannelManager:
    """Dialing, accepting, and tracking the channels of one node."""

    def __init__(
        self,
        identity: idm.PeerIdentity,
        *,
        swarm_digest: bytes,
        listen_host: str,
        listen_port: int = 0,
        membership_check=None,
        on_incoming=None,
        ping_interval: float = PING_INTERVAL_S,
        dial_timeout: float = DIAL_TIMEOUT_S,
    ):
        self.identity = identity
        self.swarm_digest = swarm_digest
        self.listen_host = listen_host
        self.listen_port = listen_port
        self.membership_check = membership_check
        self.on_incoming = on_incoming
        self.ping_interval = ping_interval
        self.dial_timeout = dial_timeout
        self.rendezvous = None  # RendezvousClient, wired by the node
        self.log = logging.getLogger(f"fybrr.channels.{identity.peer_id.hex()[:8]}")
        self._pending_dials: dict[bytes, asyncio.Future] = {}
        self._pending_accepts: dict[bytes, tuple[bytes, bytes]] = {}  # session -> (peer, key)
        self.channels: dict[bytes, Channel] = {}

    # ------------------------------------------------------------------ dial

    async def dial(self, peer_id: bytes) -> Channel:
        """Open a direct channel; raises PeerOffline or DialTimeout."""
        if self.rendezvous is None or not self.rendezvous.connected:
            raise PeerOffline("no rendezvous connection for dialing")
        deadline = time.monotonic() + self.dial_timeout
        reg = await self.rendezvous.lookup(peer_id)
        if reg is None:
            raise PeerOffline(f"peer {peer_id.hex()[:12]} is not registered")
        session_id = os.urandom(16)
        eph = X25519PrivateKey.generate()
        offer = _make_offer(
            OFFER, self.identity, peer_id, session_id,
            self.listen_host, self.listen_port, eph.public_key().public_bytes_raw(),
        )
        future = asyncio.get_event_loop().create_future()
        self._pending_dials[session_id] = future
        try:
            delivered = await self.rendezvous.relay(peer_id, offer.encode())
            if not delivered:
                raise PeerOffline("rendezvous reports the peer unreachable")
            try:
                answer = await asyncio.wait_for(future, deadline - time.monotonic())
            except asyncio.TimeoutError:
                raise DialTimeout("no answer before the dial deadline") from None
        finally:
            self._pending_dials.pop(session_id, None)
        key = _session_key(eph, answer.ephemeral_public)
        try:
            channel = await asyncio.wait_for(
                self._connect_direct(answer, key), max(deadline - time.monotonic(), 0.001)
            )
        except (asyncio.TimeoutError, ConnectionError, OSError) as e:
            raise DialTimeout(f"direct connect failed: {e}") from None
        self.channels[peer_id] = channel
        return channel

    async def _connect_direct(self, answer: ChannelOffer, key: bytes) -> Channel:
        reader, writer = await asyncio.open_connection(answer.host, answer.port)
        open_payload = (
            Writer()
            .fixed(answer.session_id, 16)
            .fixed(self.identity.peer_id, 32)
            .fixed(self.swarm_digest, 32)
            .bytes()
        )
        writer.write(wire.frame(wire.CHANNEL_OPEN, open_payload))
        await writer.drain()
        ftype, _ = await wire.read_frame(reader)
        if ftype != wire.CHANNEL_READY:
            writer.close()
            raise ConnectionError("listener refused the channel")
        channel = Channel(
            reader, writer,
            session_id=answer.session_id, peer=answer.from_id, session_key=key,
            ping_interval=self.ping_interval,
        )
        channel.start()
        return channel

    # ---------------------------------------------------------------- accept

    async def handle_relayed(self, payload: bytes) -> None:
        """Relay traffic from the rendezvous: offers to answer, answers to match."""
        try:
            offer = ChannelOffer.decode(payload)
        except MalformedInput:
            return
        if offer.to_id != self.identity.peer_id or not offer.verify():
            return  # forged or misdirected: drop silently, never answer
        if offer.kind == ANSWER:
            future = self._pending_dials.get(offer.session_id)
            if future is not None and not future.done():
                future.set_result(offer)
            return
        if offer.kind != OFFER:
            return
        if self.membership_check is not None and not self.membership_check(offer.from_id):
            self.log.info("dropping offer from non-member %s", offer.from_id.hex()[:12])
            return
        eph = X25519PrivateKey.generate()
        key = _session_key(eph, offer.ephemeral_public)
        self._pending_accepts[offer.session_id] = (offer.from_id, key)
        answer = _make_offer(
            ANSWER, self.identity, offer.from_id, offer.session_id,
            self.listen_host, self.listen_port, eph.public_key().public_bytes_raw(),
        )
        if self.rendezvous is not None:
            await self.rendezvous.relay(offer.from_id, answer.encode())

    async def handle_channel_open(self, payload: bytes, reader, writer) -> bool:
        """Claim an inbound CHANNEL_OPEN connection; True when handed off."""
        try:
            r = Reader(payload)
            session_id = r.fixed(16)
            from_id = r.fixed(32)
            digest = r.fixed(32)
            r.done()
        except MalformedInput:
            return False
        if digest != self.swarm_digest:
            return False
        pending = self._pending_accepts.pop(session_id, None)
        if pending is None or pending[0] != from_id:
            return False
        peer_id, key = pending
        writer.write(wire.frame(wire.CHANNEL_READY, b""))
        await writer.drain()
        channel = Channel(
            reader, writer,
            session_id=session_id, peer=peer_id, session_key=key,
            ping_interval=self.ping_interval,
        )
        self.channels[peer_id] = channel
        if self.on_incoming is not None:
            await self.on_incoming(channel)
        channel.start()
        return True

    def get_open(self, peer_id: bytes) -> Channel | None:
        channel = self.channels.get(peer_id)
        if channel is not None and channel.open:
            return channel
        return None

    async def close_all(self) -> None:
        for channel in list(self.channels.values()):
            await channel.close()
        self.channels.clear()
