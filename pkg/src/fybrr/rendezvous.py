"""Rendezvous service: presence, directory, and opaque handshake relay.

This is the one centralized piece, and it is kept powerless on purpose:
registrations are self-certifying (signed, keys hash to the peer id),
relayed payloads are forwarded byte-for-byte without inspection, and no
message content or queue state ever touches the server. Losing the server
loses only presence; clients re-register on reconnect.

In private-swarm mode the server additionally checks registrations against
the consensus membership it has verified from a pushed history log.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, replace

from . import consensus as cons
from . import identity as idm
from . import wire
from .errors import MalformedInput, RpcError
from .peer import swarm_digest
from .store import now_ms
from .wire import Reader, Writer

PRESENCE_TTL_MS = 60_000
HEARTBEAT_S = 20.0
_REG_CONTEXT = b"fybrr/reg/v1"

log = logging.getLogger("fybrr.rendezvous")


@dataclass(frozen=True)
class Registration:
    peer_id: bytes
    host: str
    port: int
    sig_public: bytes
    enc_public: bytes
    expires_at: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .raw(_REG_CONTEXT)
            .fixed(self.peer_id, 32)
            .raw(wire.encode_endpoint(self.host, self.port))
            .fixed(self.sig_public, 32)
            .fixed(self.enc_public, 32)
            .u64(self.expires_at)
            .bytes()
        )

    def verify(self) -> bool:
        if idm.derive_peer_id(self.enc_public, self.sig_public) != self.peer_id:
            return False
        return idm.verify(self.signing_bytes(), self.signature, self.sig_public)

    def encode(self) -> bytes:
        return (
            Writer()
            .fixed(self.peer_id, 32)
            .raw(wire.encode_endpoint(self.host, self.port))
            .fixed(self.sig_public, 32)
            .fixed(self.enc_public, 32)
            .u64(self.expires_at)
            .fixed(self.signature, 64)
            .bytes()
        )

    @classmethod
    def read(cls, r: Reader) -> "Registration":
        peer_id = r.fixed(32)
        host, port = wire.decode_endpoint(r)
        return cls(peer_id, host, port, r.fixed(32), r.fixed(32), r.u64(), r.fixed(64))


def make_registration(
    identity: idm.PeerIdentity, host: str, port: int, expires_at: int
) -> Registration:
    reg = Registration(
        peer_id=identity.peer_id,
        host=host,
        port=port,
        sig_public=identity.sig_public,
        enc_public=identity.enc_public,
        expires_at=expires_at,
    )
    return replace(reg, signature=idm.sign(reg.signing_bytes(), identity))


class _Session:
    """One client connection; writes are serialized for relay pushes."""

    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.lock = asyncio.Lock()
        self.peer_id: bytes | None = None

    async def send(self, ftype: int, payload: bytes) -> None:
        async with self.lock:
            self.writer.write(wire.frame(ftype, payload))
            await self.writer.drain()


class RendezvousServer:
    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        *,
        swarm_key: bytes = b"",
        private: bool = False,
    ):
        self.host = host
        self.port = port
        self.swarm_digest = swarm_digest(swarm_key)
        self.private = private
        self.presence: dict[bytes, Registration] = {}
        self.directory: dict[bytes, tuple[bytes, bytes]] = {}
        self.members: set[bytes] | None = None  # learned from a verified log
        self._member_epoch = -1
        self._sessions: dict[bytes, _Session] = {}
        self._server: asyncio.AbstractServer | None = None
        self._tasks: set[asyncio.Task] = set()

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._on_connection, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._tasks):
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks.clear()

    def _on_connection(self, reader, writer):
        task = asyncio.create_task(self._serve(reader, writer))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def _serve(self, reader, writer):
        session = _Session(writer)
        try:
            while True:
                try:
                    ftype, payload = await wire.read_frame(reader)
                except (asyncio.IncompleteReadError, ConnectionError):
                    break
                r = Reader(payload)
                digest = r.fixed(32)
                if digest != self.swarm_digest:
                    break
                body = r.remaining()
                try:
                    response = self._handle(ftype, body, session)
                except MalformedInput as e:
                    response = wire.err(wire.ST_ERROR, str(e))
                except Exception as e:
                    log.warning("request %#x failed: %s", ftype, e)
                    response = wire.err(wire.ST_ERROR, "internal error")
                await session.send(ftype | wire.RESP, response)
        finally:
            if session.peer_id is not None and self._sessions.get(session.peer_id) is session:
                del self._sessions[session.peer_id]
            writer.close()
            try:
                await writer.wait_closed()
            except Exception:
                pass

    def _handle(self, ftype: int, body: bytes, session: _Session) -> bytes:
        now = now_ms()
        if ftype == wire.REGISTER:
            reg = Registration.read(Reader(body))
            if not reg.verify():
                return wire.err(wire.ST_DENIED, "bad registration signature")
            if reg.expires_at > now + PRESENCE_TTL_MS + 5000:
                return wire.err(wire.ST_ERROR, "registration ttl too long")
            if reg.expires_at <= now:
                return wire.err(wire.ST_ERROR, "registration already expired")
            if self.private and (self.members is None or reg.peer_id not in self.members):
                return wire.err(wire.ST_DENIED, "not a swarm member")
            self.presence[reg.peer_id] = reg
            self.directory[reg.peer_id] = (reg.enc_public, reg.sig_public)
            session.peer_id = reg.peer_id
            self._sessions[reg.peer_id] = session
            return wire.ok()

        if ftype == wire.LOOKUP:
            r = Reader(body)
            peer_id = r.fixed(32)
            r.done()
            reg = self.presence.get(peer_id)
            if reg is None or reg.expires_at <= now:
                self.presence.pop(peer_id, None)
                return wire.err(wire.ST_NOT_FOUND, "offline")
            return wire.ok(reg.encode())

        if ftype == wire.RELAY:
            r = Reader(body)
            to = r.fixed(32)
            payload = r.var32()
            r.done()
            target = self._sessions.get(to)
            reg = self.presence.get(to)
            if target is None or reg is None or reg.expires_at <= now:
                return wire.err(wire.ST_NOT_FOUND, "undeliverable")
            task = asyncio.create_task(target.send(wire.RELAYED, payload))
            self._tasks.add(task)
            task.add_done_callback(self._tasks.discard)
            return wire.ok()

        if ftype == wire.DIRECTORY:
            r = Reader(body)
            peer_id = r.fixed(32)
            r.done()
            keys = self.directory.get(peer_id)
            if keys is None:
                return wire.err(wire.ST_NOT_FOUND, "unknown peer")
            return wire.ok(Writer().fixed(keys[0], 32).fixed(keys[1], 32).bytes())

        if ftype == wire.MEMBERS:
            try:
                state = cons.replay_log(body)
            except Exception as e:
                return wire.err(wire.ST_DENIED, f"membership log rejected: {e}")
            if state.epoch <= self._member_epoch:
                return wire.err(wire.ST_CONFLICT, "stale membership epoch")
            self.members = state.member_ids()
            self._member_epoch = state.epoch
            # registrations of peers voted out stop resolving immediately
            for pid in list(self.presence):
                if pid not in self.members:
                    del self.presence[pid]
            return wire.ok()

        return wire.err(wire.ST_ERROR, f"unknown request {ftype:#x}")


class RendezvousClient:
    """Persistent client connection with re-registration and relay delivery."""

    def __init__(
        self,
        identity: idm.PeerIdentity,
        server_host: str,
        server_port: int,
        *,
        swarm_key: bytes = b"",
        listen_host: str = "127.0.0.1",
        listen_port: int = 0,
        on_relayed=None,
        heartbeat_s: float = HEARTBEAT_S,
    ):
        self.identity = identity
        self.server_host = server_host
        self.server_port = server_port
        self.swarm_digest = swarm_digest(swarm_key)
        self.listen_host = listen_host
        self.listen_port = listen_port
        self.on_relayed = on_relayed
        self.heartbeat_s = heartbeat_s
        self.log = logging.getLogger(f"fybrr.rvc.{identity.peer_id.hex()[:8]}")
        self._reader = None
        self._writer = None
        self._read_task: asyncio.Task | None = None
        self._heartbeat_task: asyncio.Task | None = None
        self._pending: dict[int, asyncio.Future] = {}
        self._request_lock = asyncio.Lock()
        self._relay_tasks: set[asyncio.Task] = set()
        self._closed = False

    @property
    def connected(self) -> bool:
        return self._writer is not None

    async def start(self) -> None:
        """Connect now if possible and keep retrying in the background."""
        if self._heartbeat_task is None:
            self._heartbeat_task = asyncio.create_task(self._heartbeat_loop())
        try:
            await self.connect()
        except (OSError, RpcError) as e:
            self.log.warning("rendezvous not reachable yet, will retry: %s", e)

    async def connect(self) -> None:
        self._reader, self._writer = await asyncio.open_connection(
            self.server_host, self.server_port
        )
        self._read_task = asyncio.create_task(self._read_loop())
        if self._heartbeat_task is None:
            # started before the first register so a denied registration
            # (private swarm, membership pending) keeps retrying
            self._heartbeat_task = asyncio.create_task(self._heartbeat_loop())
        await self.register()

    async def close(self) -> None:
        self._closed = True
        for task in (self._read_task, self._heartbeat_task):
            if task:
                task.cancel()
        await asyncio.gather(
            *(t for t in (self._read_task, self._heartbeat_task) if t),
            return_exceptions=True,
        )
        if self._writer:
            self._writer.close()
            self._writer = None

    async def _read_loop(self):
        try:
            while True:
                ftype, payload = await wire.read_frame(self._reader)
                if ftype == wire.RELAYED:
                    if self.on_relayed is not None:
                        # handlers may issue requests of their own, so they must
                        # not run inside the loop that reads the responses
                        task = asyncio.create_task(self._dispatch_relayed(payload))
                        self._relay_tasks.add(task)
                        task.add_done_callback(self._relay_tasks.discard)
                    continue
                future = self._pending.pop(ftype, None)
                if future is not None and not future.done():
                    future.set_result(payload)
        except (asyncio.IncompleteReadError, ConnectionError, asyncio.CancelledError):
            pass
        finally:
            for future in self._pending.values():
                if not future.done():
                    future.set_exception(RpcError("rendezvous connection lost"))
            self._pending.clear()
            if self._writer:
                self._writer.close()
                self._writer = None

    async def _dispatch_relayed(self, payload: bytes) -> None:
        try:
            await self.on_relayed(payload)
        except Exception:
            self.log.exception("relay handler failed")

    async def _heartbeat_loop(self):
        while not self._closed:
            await asyncio.sleep(self.heartbeat_s)
            try:
                if self._writer is None:
                    await self.connect()
                else:
                    await self.register()
            except Exception as e:
                self.log.debug("heartbeat failed, will retry: %s", e)

    async def _request(self, ftype: int, body: bytes, timeout: float = 5.0) -> bytes:
        async with self._request_lock:
            if self._writer is None:
                raise RpcError("not connected to rendezvous")
            future = asyncio.get_event_loop().create_future()
            self._pending[ftype | wire.RESP] = future
            payload = Writer().fixed(self.swarm_digest, 32).raw(body).bytes()
            self._writer.write(wire.frame(ftype, payload))
            await self._writer.drain()
            try:
                response = await asyncio.wait_for(future, timeout)
            except asyncio.TimeoutError:
                self._pending.pop(ftype | wire.RESP, None)
                raise RpcError("rendezvous request timed out") from None
            return response

    async def register(self) -> None:
        reg = make_registration(
            self.identity, self.listen_host, self.listen_port, now_ms() + PRESENCE_TTL_MS
        )
        wire.check_ok(await self._request(wire.REGISTER, reg.encode()))

    async def lookup(self, peer_id: bytes) -> Registration | None:
        try:
            body = wire.check_ok(await self._request(wire.LOOKUP, peer_id))
        except RpcError as e:
            if e.status == wire.ST_NOT_FOUND:
                return None
            raise
        reg = Registration.read(Reader(body))
        if not reg.verify() or reg.peer_id != peer_id:
            return None
        return reg

    async def relay(self, to: bytes, payload: bytes) -> bool:
        """Forward opaque bytes to a connected peer; False if undeliverable."""
        try:
            wire.check_ok(
                await self._request(wire.RELAY, Writer().fixed(to, 32).var32(payload).bytes())
            )
            return True
        except RpcError as e:
            if e.status == wire.ST_NOT_FOUND:
                return False
            raise

    async def directory(self, peer_id: bytes) -> tuple[bytes, bytes] | None:
        """Fetch (enc_public, sig_public); None when unknown or mis-bound.

        The hash check makes the directory advisory: a tampering server
        cannot bind wrong keys to a peer id without detection.
        """
        try:
            body = wire.check_ok(await self._request(wire.DIRECTORY, peer_id))
        except RpcError as e:
            if e.status == wire.ST_NOT_FOUND:
                return None
            raise
        r = Reader(body)
        enc, sig = r.fixed(32), r.fixed(32)
        r.done()
        if idm.derive_peer_id(enc, sig) != peer_id:
            return None
        return enc, sig

    async def push_members(self, log_bytes: bytes) -> None:
        wire.check_ok(await self._request(wire.MEMBERS, log_bytes))
