"""Local client API: JSON commands and events over a localhost socket.

Two framings share one port: newline-delimited JSON for programs (the CLI
uses this), and WebSocket text frames for the browser client, detected by
the HTTP upgrade request's leading "GET ". The WebSocket side is a minimal
RFC 6455 server implementation since no suitable package is available.
Every connected session receives node events (inbound messages, status
transitions, proposals, tallies) as they happen; commands carry an
optional "id" echoed in the response.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import logging
import struct

from . import consensus as cons
from .errors import FybrrError, NotFound

_WS_GUID = b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_LINE = 4 * 1024 * 1024

log = logging.getLogger("fybrr.api")


class _NdjsonSession:
    def __init__(self, first_line: bytes, reader, writer):
        self._first = first_line
        self._reader = reader
        self._writer = writer
        self._lock = asyncio.Lock()

    async def recv(self) -> bytes | None:
        if self._first is not None:
            line, self._first = self._first, None
            return line
        try:
            line = await self._reader.readline()
        except (ConnectionError, asyncio.LimitOverrunError, ValueError):
            return None
        return line if line else None

    async def send(self, obj: dict) -> None:
        data = json.dumps(obj, separators=(",", ":")).encode() + b"\n"
        async with self._lock:
            self._writer.write(data)
            await self._writer.drain()


class _WebSocketSession:
    def __init__(self, reader, writer):
        self._reader = reader
        self._writer = writer
        self._lock = asyncio.Lock()

    @classmethod
    async def handshake(cls, request_line: bytes, reader, writer) -> "_WebSocketSession | None":
        headers: dict[str, str] = {}
        while True:
            line = await reader.readline()
            if line in (b"\r\n", b"\n", b""):
                break
            name, _, value = line.decode("latin-1").partition(":")
            headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade", "").lower():
            writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            await writer.drain()
            return None
        accept = base64.b64encode(hashlib.sha1(key.encode() + _WS_GUID).digest()).decode()
        writer.write(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        await writer.drain()
        return cls(reader, writer)

    async def _read_frame(self) -> tuple[int, bytes] | None:
        head = await self._reader.readexactly(2)
        fin = head[0] & 0x80
        opcode = head[0] & 0x0F
        masked = head[1] & 0x80
        length = head[1] & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", await self._reader.readexactly(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", await self._reader.readexactly(8))
        if length > _MAX_LINE:
            return None
        mask = await self._reader.readexactly(4) if masked else b"\x00" * 4
        payload = await self._reader.readexactly(length)
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        if not fin and opcode in (0x1, 0x2, 0x0):
            # accumulate continuation frames into one message
            rest = await self._read_frame()
            if rest is None or rest[0] != 0x0:
                return None
            payload += rest[1]
        return opcode, payload

    async def recv(self) -> bytes | None:
        try:
            while True:
                frame = await self._read_frame()
                if frame is None:
                    return None
                opcode, payload = frame
                if opcode in (0x1, 0x2):
                    return payload
                if opcode == 0x9:  # ping
                    await self._send_frame(0xA, payload)
                elif opcode == 0x8:  # close
                    await self._send_frame(0x8, b"")
                    return None
        except (asyncio.IncompleteReadError, ConnectionError):
            return None

    async def _send_frame(self, opcode: int, payload: bytes) -> None:
        header = bytes([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header += bytes([n])
        elif n < (1 << 16):
            header += bytes([126]) + struct.pack(">H", n)
        else:
            header += bytes([127]) + struct.pack(">Q", n)
        async with self._lock:
            self._writer.write(header + payload)
            await self._writer.drain()

    async def send(self, obj: dict) -> None:
        await self._send_frame(0x1, json.dumps(obj, separators=(",", ":")).encode())


class ApiServer:
    def __init__(self, node, host: str = "127.0.0.1", port: int = 0):
        self.node = node
        self.host = host
        self.port = port
        self._server = None
        self._tasks: set[asyncio.Task] = set()

    async def start(self) -> None:
        self._server = await asyncio.start_server(
            self._on_connection, self.host, self.port, limit=_MAX_LINE
        )
        self.port = self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._tasks):
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)

    def _on_connection(self, reader, writer):
        task = asyncio.create_task(self._serve(reader, writer))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def _serve(self, reader, writer):
        peername = writer.get_extra_info("peername")
        if peername and peername[0] not in ("127.0.0.1", "::1"):
            writer.close()
            return
        # events are buffered until the first client bytes reveal the framing,
        # so a session that only listens still receives everything
        session = None
        backlog: list[dict] = []

        async def subscriber(event):
            if session is None:
                backlog.append(event)
            else:
                await session.send(event)

        self.node.subscribe(subscriber)
        try:
            first = await reader.readline()
            if not first:
                return
            if first.startswith(b"GET "):
                session = await _WebSocketSession.handshake(first, reader, writer)
                if session is None:
                    return
            else:
                session = _NdjsonSession(first, reader, writer)
            while backlog:
                await session.send(backlog.pop(0))
            while True:
                raw = await session.recv()
                if raw is None:
                    break
                response = await self._dispatch(raw)
                await session.send(response)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        except Exception:
            log.exception("api session crashed")
        finally:
            self.node.unsubscribe(subscriber)
            writer.close()

    async def _dispatch(self, raw: bytes) -> dict:
        try:
            cmd = json.loads(raw)
            if not isinstance(cmd, dict):
                raise ValueError("command must be an object")
        except (ValueError, UnicodeDecodeError):
            return {"ok": False, "error": "malformed json"}
        req_id = cmd.get("id")
        try:
            response = await self._handle(cmd)
        except NotFound as e:
            response = {"ok": False, "error": str(e)}
        except FybrrError as e:
            response = {"ok": False, "error": str(e)}
        except (KeyError, ValueError, TypeError) as e:
            response = {"ok": False, "error": f"bad command: {e}"}
        if req_id is not None:
            response["id"] = req_id
        return response

    async def _handle(self, cmd: dict) -> dict:
        node = self.node
        op = cmd.get("op")

        if op == "send":
            to = bytes.fromhex(cmd["to"])
            msg = await node.send_message(
                to, cmd["text"].encode(), force_path=cmd.get("path")
            )
            return {
                "ok": msg.status != "failed",
                "op": "status",
                "msg_id": msg.msg_id.hex(),
                "state": msg.status,
                **({"error": msg.error} if msg.error else {}),
            }

        if op == "sync":
            received = await node.sync_inbox()
            return {"ok": True, "received": len(received)}

        if op == "history":
            return {"ok": True, "messages": node.load_history()}

        if op == "contacts":
            action = cmd.get("action", "list")
            if action == "add":
                peer_id = bytes.fromhex(cmd["peer"])
                enc = sig = None
                try:
                    enc, sig = await node.resolve_keys(peer_id)
                except NotFound:
                    pass
                node.add_contact(peer_id, cmd.get("name"), enc, sig)
            return {
                "ok": True,
                "contacts": [
                    {"peer": pid.hex(), "name": entry.get("name"), "keys": "enc" in entry}
                    for pid, entry in node.contacts.items()
                ],
            }

        if op == "presence":
            peer_id = bytes.fromhex(cmd["peer"])
            reg = None
            if node.rendezvous is not None and node.rendezvous.connected:
                reg = await node.rendezvous.lookup(peer_id)
            return {
                "ok": True,
                "online": reg is not None,
                **({"endpoint": f"{reg.host}:{reg.port}"} if reg else {}),
            }

        if op == "status":
            return {
                "ok": True,
                "peer_id": node.identity.peer_id.hex(),
                "endpoint": node.peer.endpoint,
                "rendezvous": bool(node.rendezvous and node.rendezvous.connected),
                "dht_peers": len(node.peer.routing),
                "epoch": node.consensus.state.epoch if node.consensus else None,
                "members": len(node.consensus.state.members) if node.consensus else 0,
            }

        if op == "members":
            state = node.consensus.state
            return {
                "ok": True,
                "epoch": state.epoch,
                "members": [pid.hex() for pid in sorted(state.members)],
                "bootstrap": [pid.hex() for pid in sorted(state.bootstrap)],
            }

        if op == "proposals":
            out = []
            for tracked in node.consensus.proposals():
                pid = tracked.proposal.proposal_id
                yes, no = node.consensus.counts(pid)
                mine = tracked.ballots.get(node.identity.peer_id)
                subject = tracked.proposal.subject
                out.append(
                    {
                        "proposal": pid.hex(),
                        "kind": tracked.proposal.kind.name,
                        "subject": subject.peer_id.hex()
                        if subject.peer_id
                        else f"{subject.name}={subject.value}",
                        "deadline": tracked.proposal.deadline,
                        "yes": yes,
                        "no": no,
                        "members": len(tracked.electorate),
                        "state": node.consensus.tally(pid).value,
                        "applied": tracked.applied,
                        "my_vote": mine.choice.name.lower() if mine else None,
                    }
                )
            return {"ok": True, "proposals": out}

        if op == "propose":
            kind = cons.Kind[cmd["kind"]]
            if kind == cons.Kind.SET_POLICY:
                subject = cons.Subject(name=cmd["name"], value=cmd.get("value", ""))
            else:
                peer_id = bytes.fromhex(cmd["subject"])
                keys = None
                if kind == cons.Kind.ADD_MEMBER:
                    enc, sig = await node.resolve_keys(peer_id)
                    keys = cons.MemberKeys(enc, sig)
                subject = cons.Subject(peer_id=peer_id, keys=keys)
            proposal = await node.propose(kind, subject)
            return {"ok": True, "proposal": proposal.proposal_id.hex()}

        if op == "vote":
            proposal_id = bytes.fromhex(cmd["proposal"])
            choice = cons.Choice.YES if cmd["choice"] == "yes" else cons.Choice.NO
            outcome = await node.vote(proposal_id, choice)
            yes, no = node.consensus.counts(proposal_id)
            return {"ok": True, "state": outcome.value, "yes": yes, "no": no}

        return {"ok": False, "error": f"unknown op {op!r}"}
