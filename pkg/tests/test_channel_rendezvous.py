"""Rendezvous service and direct-channel handshake over loopback."""

import asyncio
import os
import time

import pytest

from fybrr import identity as idm
from fybrr import wire
from fybrr.channel import ChannelManager, ChannelOffer, OFFER, _make_offer
from fybrr.errors import DialTimeout, PeerOffline
from fybrr.peer import Peer
from fybrr.rendezvous import (
    Registration,
    RendezvousClient,
    RendezvousServer,
    make_registration,
)
from fybrr.store import now_ms
from fybrr.wire import Writer

from conftest import run


class Endpoint:
    """One wired-up peer: listener, channel manager, rendezvous client."""

    def __init__(self, peer, manager, rvc):
        self.peer = peer
        self.manager = manager
        self.rvc = rvc
        self.identity = peer.identity
        self.inbound_channels = []

    @classmethod
    async def up(cls, server, tmp, name, *, ping_interval=3.0, membership_check=None):
        ident = idm.generate_identity(os.urandom(32))
        peer = Peer(ident, f"{tmp}/{name}")
        await peer.start()
        manager = ChannelManager(
            ident,
            swarm_digest=peer.swarm_digest,
            listen_host=peer.host,
            listen_port=peer.port,
            ping_interval=ping_interval,
            membership_check=membership_check,
        )
        inbound = []

        async def on_incoming(channel):
            inbound.append(channel)

        manager.on_incoming = on_incoming
        peer.channel_open_handler = manager.handle_channel_open
        rvc = RendezvousClient(
            ident, server.host, server.port,
            listen_host=peer.host, listen_port=peer.port,
            on_relayed=manager.handle_relayed,
        )
        manager.rendezvous = rvc
        await rvc.connect()
        ep = cls(peer, manager, rvc)
        ep.inbound_channels = inbound
        return ep

    async def down(self):
        await self.manager.close_all()
        await self.rvc.close()
        await self.peer.stop()


async def _with_server(body, *, private=False, swarm_key=b""):
    server = RendezvousServer(swarm_key=swarm_key, private=private)
    await server.start()
    try:
        await body(server)
    finally:
        await server.stop()


def test_register_lookup_and_last_writer_wins(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        try:
            reg = await a.rvc.lookup(a.identity.peer_id)
            assert reg is not None and reg.port == a.peer.port
            # re-register with a different advertised port: latest wins
            a.rvc.listen_port = a.peer.port + 1
            await a.rvc.register()
            reg2 = await a.rvc.lookup(a.identity.peer_id)
            assert reg2.port == a.peer.port + 1
            assert await a.rvc.lookup(os.urandom(32)) is None
        finally:
            await a.down()

    run(_with_server(body))


def test_expired_registration_reads_offline(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        try:
            ident = idm.generate_identity(os.urandom(32))
            reg = make_registration(ident, "127.0.0.1", 1234, now_ms() + 300)
            reader, writer = await asyncio.open_connection(server.host, server.port)
            payload = Writer().fixed(server.swarm_digest, 32).raw(reg.encode()).bytes()
            writer.write(wire.frame(wire.REGISTER, payload))
            await writer.drain()
            ftype, resp = await wire.read_frame(reader)
            assert wire.check_ok(resp) == b""
            assert await a.rvc.lookup(ident.peer_id) is not None
            await asyncio.sleep(0.4)
            assert await a.rvc.lookup(ident.peer_id) is None
            writer.close()
        finally:
            await a.down()

    run(_with_server(body))


def test_registration_signature_required(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        try:
            ident = idm.generate_identity(os.urandom(32))
            reg = make_registration(ident, "127.0.0.1", 1, now_ms() + 10_000)
            forged = Registration(
                reg.peer_id, reg.host, 9, reg.sig_public, reg.enc_public,
                reg.expires_at, reg.signature,
            )
            reader, writer = await asyncio.open_connection(server.host, server.port)
            payload = Writer().fixed(server.swarm_digest, 32).raw(forged.encode()).bytes()
            writer.write(wire.frame(wire.REGISTER, payload))
            await writer.drain()
            _, resp = await wire.read_frame(reader)
            assert resp[0] == wire.ST_DENIED
            writer.close()
        finally:
            await a.down()

    run(_with_server(body))


def test_relay_bytes_are_bit_identical(tmp_path):
    async def body(server):
        got = asyncio.get_event_loop().create_future()

        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")

        async def capture(payload):
            if not got.done():
                got.set_result(payload)

        b.rvc.on_relayed = capture
        try:
            blob = os.urandom(700)
            assert await a.rvc.relay(b.identity.peer_id, blob)
            assert await asyncio.wait_for(got, 2) == blob
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_relay_to_offline_peer_undeliverable(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        try:
            assert not await a.rvc.relay(os.urandom(32), b"hello?")
        finally:
            await a.down()

    run(_with_server(body))


def test_directory_self_certifies(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            keys = await a.rvc.directory(b.identity.peer_id)
            assert keys == (b.identity.enc_public, b.identity.sig_public)
            assert idm.derive_peer_id(*keys) == b.identity.peer_id
            assert await a.rvc.directory(os.urandom(32)) is None
            # a malicious server binding wrong keys is caught by the hash check
            evil = idm.generate_identity(os.urandom(32))
            server.directory[b.identity.peer_id] = (evil.enc_public, evil.sig_public)
            assert await a.rvc.directory(b.identity.peer_id) is None
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_private_mode_rejects_non_members(tmp_path):
    async def body(server):
        from fybrr import consensus as cons

        creator = idm.generate_identity(os.urandom(32))
        engine = cons.ConsensusEngine.genesis(creator, created_at=now_ms())

        # the membership log reaches the server before anyone registers
        boot = RendezvousClient(creator, server.host, server.port, listen_host="127.0.0.1", listen_port=1)
        reader, writer = await asyncio.open_connection(server.host, server.port)
        payload = Writer().fixed(server.swarm_digest, 32).raw(engine.encode_log()).bytes()
        writer.write(wire.frame(wire.MEMBERS, payload))
        await writer.drain()
        _, resp = await wire.read_frame(reader)
        wire.check_ok(resp)
        writer.close()

        # the creator may register; a stranger may not
        peer = Peer(creator, str(tmp_path / "creator"))
        await peer.start()
        rvc = RendezvousClient(
            creator, server.host, server.port, listen_host=peer.host, listen_port=peer.port
        )
        await rvc.connect()
        stranger = idm.generate_identity(os.urandom(32))
        svc = RendezvousClient(stranger, server.host, server.port, listen_host="127.0.0.1", listen_port=2)
        with pytest.raises(Exception):
            await svc.connect()
        await svc.close()
        await rvc.close()
        await peer.stop()

    run(_with_server(body, private=True))


def test_dial_and_exchange_messages_both_ways(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            t0 = time.monotonic()
            channel = await a.manager.dial(b.identity.peer_id)
            assert time.monotonic() - t0 < 1.0
            assert channel.open

            got_at_b = asyncio.Queue()
            got_at_a = asyncio.Queue()

            async def b_sink(data):
                await got_at_b.put(data)

            async def a_sink(data):
                await got_at_a.put(data)

            assert len(b.inbound_channels) == 1
            b_channel = b.inbound_channels[0]
            b_channel.on_message = b_sink
            channel.on_message = a_sink

            await channel.send(b"hello from a")
            assert await asyncio.wait_for(got_at_b.get(), 2) == b"hello from a"
            await b_channel.send(b"hello from b")
            assert await asyncio.wait_for(got_at_a.get(), 2) == b"hello from b"
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_dial_unregistered_peer_offline(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        try:
            with pytest.raises(PeerOffline):
                await a.manager.dial(os.urandom(32))
        finally:
            await a.down()

    run(_with_server(body))


def test_dial_unresponsive_peer_times_out(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            # the deadline contract is five seconds by default
            assert a.manager.dial_timeout == 5.0
            # b is registered but never answers offers
            b.rvc.on_relayed = None
            a.manager.dial_timeout = 0.6
            t0 = time.monotonic()
            with pytest.raises(DialTimeout):
                await a.manager.dial(b.identity.peer_id)
            assert 0.5 <= time.monotonic() - t0 < 2.0
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_forged_offer_dropped_without_answer(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            mallory = idm.generate_identity(os.urandom(32))
            offer = _make_offer(
                OFFER, mallory, b.identity.peer_id, os.urandom(16),
                "127.0.0.1", 1, os.urandom(32),
            )
            # claim to be A: binding check must fail
            forged = ChannelOffer(
                OFFER, a.identity.peer_id, b.identity.peer_id, offer.session_id,
                offer.host, offer.port, offer.ephemeral_public,
                mallory.enc_public, mallory.sig_public, offer.signature,
            )
            assert await a.rvc.relay(b.identity.peer_id, forged.encode())
            await asyncio.sleep(0.2)
            assert b.manager._pending_accepts == {}
            assert b.inbound_channels == []
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_non_member_offer_dropped_in_private_swarm(tmp_path):
    async def body(server):
        allowed = set()
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(
            server, tmp_path, "b", membership_check=lambda pid: pid in allowed
        )
        try:
            with pytest.raises(DialTimeout):
                a.manager.dial_timeout = 0.5
                await a.manager.dial(b.identity.peer_id)
            allowed.add(a.identity.peer_id)
            a.manager.dial_timeout = 5.0
            channel = await a.manager.dial(b.identity.peer_id)
            assert channel.open
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_ordered_exactly_once_delivery_10k(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            channel = await a.manager.dial(b.identity.peer_id)
            received = []
            done = asyncio.get_event_loop().create_future()

            async def sink(data):
                received.append(data)
                if len(received) == 10_000:
                    done.set_result(True)

            b.inbound_channels[0].on_message = sink
            for i in range(10_000):
                await channel.send(i.to_bytes(4, "big"))
            await asyncio.wait_for(done, 60)
            assert received == [i.to_bytes(4, "big") for i in range(10_000)]
        finally:
            await a.down()
            await b.down()

    run(_with_server(body), timeout=120)


def test_healthy_idle_channel_stays_open(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a", ping_interval=0.1)
        b = await Endpoint.up(server, tmp_path, "b", ping_interval=0.1)
        try:
            channel = await a.manager.dial(b.identity.peer_id)
            await asyncio.sleep(1.0)  # ten ping intervals of idle time
            assert channel.open
            assert b.inbound_channels[0].open
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_silent_peer_closes_after_three_missed_pings(tmp_path):
    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a", ping_interval=0.2)
        b = await Endpoint.up(server, tmp_path, "b", ping_interval=0.2)
        try:
            channel = await a.manager.dial(b.identity.peer_id)
            lost = asyncio.get_event_loop().create_future()

            async def on_close(ch):
                if not lost.done():
                    lost.set_result(time.monotonic())

            channel.on_close = on_close
            b.inbound_channels[0].mute_pongs = True
            # also stop b's own pings so a hears nothing at all
            for task in b.inbound_channels[0]._tasks:
                task.cancel()
            t0 = time.monotonic()
            await asyncio.wait_for(lost, 5)
            elapsed = (await lost) - t0
            # three 0.2s intervals scale to the 9-12s window of the 3s default
            assert 0.5 <= elapsed <= 1.6
            assert not channel.open
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_send_on_closed_channel_raises(tmp_path):
    async def body(server):
        from fybrr.errors import ChannelClosed

        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            channel = await a.manager.dial(b.identity.peer_id)
            await channel.close()
            with pytest.raises(ChannelClosed):
                await channel.send(b"too late")
        finally:
            await a.down()
            await b.down()

    run(_with_server(body))


def test_kill_receiver_surfaces_channel_closed_quickly(tmp_path):
    async def body(server):
        from fybrr.errors import ChannelClosed

        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        try:
            channel = await a.manager.dial(b.identity.peer_id)
            await b.down()  # hard stop: sockets closed
            t0 = time.monotonic()
            with pytest.raises(ChannelClosed):
                for _ in range(200):
                    await channel.send(b"are you there?")
                    await asyncio.sleep(0.05)
            assert time.monotonic() - t0 < 10.0
        finally:
            await a.down()

    run(_with_server(body))


def test_wire_capture_shows_no_plaintext(tmp_path):
    """A recording proxy sits where the callee's listener is advertised."""

    async def body(server):
        a = await Endpoint.up(server, tmp_path, "a")
        b = await Endpoint.up(server, tmp_path, "b")
        captured = bytearray()

        async def proxy(creader, cwriter):
            ureader, uwriter = await asyncio.open_connection(b.peer.host, b.peer.port)

            async def pipe(src, dst, record):
                try:
                    while True:
                        data = await src.read(4096)
                        if not data:
                            break
                        if record:
                            captured.extend(data)
                        dst.write(data)
                        await dst.drain()
                except ConnectionError:
                    pass
                finally:
                    dst.close()

            await asyncio.gather(
                pipe(creader, uwriter, True), pipe(ureader, cwriter, True)
            )

        proxy_server = await asyncio.start_server(proxy, "127.0.0.1", 0)
        b.manager.listen_port = proxy_server.sockets[0].getsockname()[1]
        try:
            channel = await a.manager.dial(b.identity.peer_id)
            secret = b"the launch codes are 0000-improbable-zebra-hypothesis!"
            seen = asyncio.get_event_loop().create_future()

            async def sink(data):
                if not seen.done():
                    seen.set_result(data)

            b.inbound_channels[0].on_message = sink
            await channel.send(secret)
            assert await asyncio.wait_for(seen, 2) == secret
            blob = bytes(captured)
            for i in range(len(secret) - 8 + 1):
                assert secret[i : i + 8] not in blob
        finally:
            proxy_server.close()
            await a.down()
            await b.down()

    run(_with_server(body))
