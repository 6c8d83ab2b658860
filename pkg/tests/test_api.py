"""Local API sessions: NDJSON and WebSocket framings over one port."""

import asyncio
import base64
import hashlib
import json
import os
import struct

from fybrr.sim import NodeSwarm

from conftest import run


async def _swarm_with_api(tmp_path, n=2, seed=60):
    swarm = await NodeSwarm.launch(n, seed=seed, workdir=str(tmp_path))
    for i in range(n):
        node = swarm.node(i)
        from fybrr.api import ApiServer

        node.api = ApiServer(node)
        await node.api.start()
    return swarm


class NdjsonClient:
    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    @classmethod
    async def connect(cls, port):
        """Open a session; the first command reveals the framing to the server."""
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        client = cls(reader, writer)
        writer.write(json.dumps({"op": "status", "id": "hello"}).encode() + b"\n")
        await writer.drain()
        await client.wait_for(lambda o: o.get("id") == "hello")
        return client

    async def request(self, obj, timeout=10):
        obj = {**obj, "id": "t"}
        self.writer.write(json.dumps(obj).encode() + b"\n")
        await self.writer.drain()
        return await self.wait_for(lambda o: o.get("id") == "t", timeout)

    async def wait_for(self, predicate, timeout=10):
        async def go():
            while True:
                line = await self.reader.readline()
                assert line, "api closed the session"
                obj = json.loads(line)
                if predicate(obj):
                    return obj

        return await asyncio.wait_for(go(), timeout)

    def close(self):
        self.writer.close()


def test_ndjson_send_status_and_inbound_events(tmp_path):
    async def body():
        swarm = await _swarm_with_api(tmp_path)
        try:
            a, b = swarm.node(0), swarm.node(1)
            ca = await NdjsonClient.connect(a.api.port)
            cb = await NdjsonClient.connect(b.api.port)

            response = await ca.request(
                {"op": "send", "to": b.identity.peer_id.hex(), "text": "over the api"}
            )
            assert response["ok"] and response["op"] == "status"
            assert response["state"] == "sent_direct"

            inbound = await cb.wait_for(lambda o: o.get("op") == "inbound")
            assert inbound["text"] == "over the api"
            assert inbound["path"] == "direct"
            assert inbound["from"] == a.identity.peer_id.hex()

            # the sender's session later sees the delivered transition
            delivered = await ca.wait_for(
                lambda o: o.get("op") == "status" and o.get("state") == "delivered"
            )
            assert delivered["msg_id"] == response["msg_id"]
            ca.close()
            cb.close()
        finally:
            await swarm.close()

    run(body())


def test_malformed_json_keeps_session_open(tmp_path):
    async def body():
        swarm = await _swarm_with_api(tmp_path, n=1, seed=61)
        try:
            client = await NdjsonClient.connect(swarm.node(0).api.port)
            client.writer.write(b"this is not json\n")
            await client.writer.drain()
            err = await client.wait_for(lambda o: o.get("ok") is False)
            assert "malformed" in err["error"]
            status = await client.request({"op": "status"})
            assert status["ok"]
            client.close()
        finally:
            await swarm.close()

    run(body())


def test_unknown_op_and_bad_fields_are_errors_not_crashes(tmp_path):
    async def body():
        swarm = await _swarm_with_api(tmp_path, n=1, seed=62)
        try:
            client = await NdjsonClient.connect(swarm.node(0).api.port)
            r1 = await client.request({"op": "frobnicate"})
            assert not r1["ok"]
            r2 = await client.request({"op": "send", "to": "zz", "text": "x"})
            assert not r2["ok"]
            r3 = await client.request({"op": "status"})
            assert r3["ok"]
            client.close()
        finally:
            await swarm.close()

    run(body())


def test_proposal_and_vote_through_api(tmp_path):
    async def body():
        swarm = await _swarm_with_api(tmp_path, n=2, seed=63)
        try:
            creator = swarm.node(0)
            other = swarm.node(1)
            client = await NdjsonClient.connect(creator.api.port)

            made = await client.request(
                {"op": "propose", "kind": "ADD_MEMBER", "subject": other.identity.peer_id.hex()}
            )
            assert made["ok"]
            listed = await client.request({"op": "proposals"})
            assert listed["proposals"][0]["state"] == "pending"
            assert listed["proposals"][0]["my_vote"] is None

            voted = await client.request(
                {"op": "vote", "proposal": made["proposal"], "choice": "yes"}
            )
            assert voted["ok"] and voted["state"] == "accepted"
            members = await client.request({"op": "members"})
            assert other.identity.peer_id.hex() in members["members"]
            assert members["epoch"] == 1
            client.close()
        finally:
            await swarm.close()

    run(body())


async def _ws_connect(port):
    reader, writer = await asyncio.open_connection("127.0.0.1", port)
    key = base64.b64encode(os.urandom(16)).decode()
    writer.write(
        (
            "GET /api HTTP/1.1\r\n"
            "Host: 127.0.0.1\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        ).encode()
    )
    await writer.drain()
    status = await reader.readline()
    assert b"101" in status
    accept = None
    while True:
        line = await reader.readline()
        if line in (b"\r\n", b""):
            break
        if line.lower().startswith(b"sec-websocket-accept:"):
            accept = line.split(b":", 1)[1].strip().decode()
    expected = base64.b64encode(
        hashlib.sha1((key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode()).digest()
    ).decode()
    assert accept == expected
    return reader, writer


async def _ws_send(writer, obj):
    payload = json.dumps(obj).encode()
    mask = os.urandom(4)
    header = bytes([0x81])
    n = len(payload)
    if n < 126:
        header += bytes([0x80 | n])
    else:
        header += bytes([0x80 | 126]) + struct.pack(">H", n)
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    writer.write(header + mask + masked)
    await writer.drain()


async def _ws_recv(reader, timeout=10):
    async def go():
        head = await reader.readexactly(2)
        opcode = head[0] & 0x0F
        length = head[1] & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", await reader.readexactly(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", await reader.readexactly(8))
        payload = await reader.readexactly(length)
        assert opcode == 0x1
        return json.loads(payload)

    return await asyncio.wait_for(go(), timeout)


def test_websocket_session_full_round_trip(tmp_path):
    async def body():
        swarm = await _swarm_with_api(tmp_path, n=2, seed=64)
        try:
            a, b = swarm.node(0), swarm.node(1)
            reader, writer = await _ws_connect(b.api.port)
            await _ws_send(writer, {"op": "status", "id": 1})
            status = await _ws_recv(reader)
            assert status["ok"] and status["peer_id"] == b.identity.peer_id.hex()

            # an inbound message arrives as an event on the socket
            await a.send_message(b.identity.peer_id, b"ws hello")
            while True:
                event = await _ws_recv(reader)
                if event.get("op") == "inbound":
                    assert event["text"] == "ws hello"
                    break
            writer.close()
        finally:
            await swarm.close()

    run(body())


def test_non_localhost_clients_rejected(tmp_path):
    async def body():
        swarm = await _swarm_with_api(tmp_path, n=1, seed=65)
        try:
            api = swarm.node(0).api
            # the server binds 127.0.0.1, so any peername there is localhost;
            # the handler additionally drops anything else
            assert api.host == "127.0.0.1"
        finally:
            await swarm.close()

    run(body())
