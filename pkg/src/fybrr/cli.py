"""Command-line frontend: key management, daemons, messaging, and governance.

Messaging and swarm commands talk to a running node's local API over
newline-delimited JSON on localhost. Everything prints stable line-oriented
output; --json switches to one JSON object per line. Exit codes: 0 on
success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import socket
import sys

from . import identity as idm
from .errors import FybrrError

DEFAULT_API_PORT = 7677


def _out(args, obj: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(obj, separators=(",", ":")))
    else:
        for line in lines:
            print(line)


def _fail(args, message: str) -> int:
    if args.json:
        print(json.dumps({"ok": False, "error": message}, separators=(",", ":")))
    else:
        print(f"error: {message}", file=sys.stderr)
    return 1


def _api_port(args) -> int:
    if getattr(args, "api_port", None):
        return args.api_port
    env = os.environ.get("FYBRR_API_PORT")
    return int(env) if env else DEFAULT_API_PORT


def _api_call(args, command: dict, timeout: float = 30.0) -> dict:
    """One NDJSON request to the node's local API, skipping event pushes."""
    command = {**command, "id": "cli"}
    with socket.create_connection(("127.0.0.1", _api_port(args)), timeout=timeout) as sock:
        sock.sendall(json.dumps(command, separators=(",", ":")).encode() + b"\n")
        buf = b""
        sock.settimeout(timeout)
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                raise FybrrError("node api closed the connection")
            buf += chunk
            while b"\n" in buf:
                line, _, buf = buf.partition(b"\n")
                obj = json.loads(line)
                if obj.get("id") == "cli":
                    return obj


def _peer_hex(value: str) -> str:
    raw = bytes.fromhex(value)
    if len(raw) != 32:
        raise ValueError("peer ids are 32 bytes (64 hex chars)")
    return raw.hex()


def cmd_keygen(args) -> int:
    identity = idm.generate_identity()
    idm.save_identity(identity, args.out)
    _out(
        args,
        {"ok": True, "peer_id": identity.peer_id.hex(), "key_file": args.out},
        [f"peer_id {identity.peer_id.hex()}", f"key file written to {args.out}"],
    )
    return 0


def cmd_rendezvous(args) -> int:
    from .rendezvous import RendezvousServer
    from .wire import parse_endpoint

    host, port = parse_endpoint(args.listen)
    swarm_key = bytes.fromhex(args.swarm_key) if args.swarm_key else b""

    async def serve():
        server = RendezvousServer(host, port, swarm_key=swarm_key, private=args.private)
        await server.start()
        print(f"rendezvous listening on {server.endpoint}", flush=True)
        try:
            await asyncio.Event().wait()
        finally:
            await server.stop()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        pass
    return 0


def cmd_node(args) -> int:
    from .config import parse_config
    from .node import Node

    config = parse_config(args.config)
    if config.api_port is None:
        config.api_port = _api_port(args)

    async def serve():
        node = Node(config)
        await node.start()
        print(f"node {node.identity.peer_id.hex()}", flush=True)
        print(f"listening on {node.peer.endpoint}", flush=True)
        if node.api is not None:
            print(f"api on 127.0.0.1:{node.api.port}", flush=True)
        try:
            await asyncio.Event().wait()
        finally:
            await node.stop()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        return 0
    return 0


def cmd_send(args) -> int:
    response = _api_call(args, {"op": "send", "to": _peer_hex(args.to), "text": args.text})
    if not response.get("ok"):
        return _fail(args, response.get("error", "send failed"))
    _out(
        args,
        response,
        [f"msg_id {response['msg_id']}", f"state {response['state']}"],
    )
    return 0


def cmd_inbox(args) -> int:
    sync = _api_call(args, {"op": "sync"}, timeout=120.0)
    if not sync.get("ok"):
        return _fail(args, sync.get("error", "sync failed"))
    response = _api_call(args, {"op": "history"})
    if not response.get("ok"):
        return _fail(args, response.get("error", "history failed"))
    messages = [m for m in response["messages"] if m.get("dir") == "in"]
    lines = [
        f"{m['ts']} {m['peer'][:16]} [{m['path']}] {m['text']}" for m in messages
    ] or ["inbox empty"]
    _out(args, {"ok": True, "messages": messages, "new": sync.get("received", 0)}, lines)
    return 0


def cmd_contacts(args) -> int:
    if args.action == "add":
        if not args.peer or args.name is None:
            print("usage: fybrr contacts add <hex peer id> <name>", file=sys.stderr)
            return 2
        response = _api_call(
            args, {"op": "contacts", "action": "add", "peer": _peer_hex(args.peer), "name": args.name}
        )
    else:
        response = _api_call(args, {"op": "contacts", "action": "list"})
    if not response.get("ok"):
        return _fail(args, response.get("error", "contacts failed"))
    lines = [
        f"{c['peer']} {c.get('name') or '-'} {'keys' if c.get('keys') else 'no-keys'}"
        for c in response["contacts"]
    ] or ["no contacts"]
    _out(args, response, lines)
    return 0


def cmd_swarm(args) -> int:
    if args.swarm_cmd == "propose":
        command = {"op": "propose", "kind": args.kind}
        if args.kind == "SET_POLICY":
            if not args.name:
                print("SET_POLICY needs --name (and optionally --value)", file=sys.stderr)
                return 2
            command.update({"name": args.name, "value": args.value or ""})
        else:
            if not args.subject:
                print(f"{args.kind} needs --subject <hex peer id>", file=sys.stderr)
                return 2
            command["subject"] = _peer_hex(args.subject)
        response = _api_call(args, command)
        if not response.get("ok"):
            return _fail(args, response.get("error", "propose failed"))
        _out(args, response, [f"proposal {response['proposal']}"])
        return 0

    if args.swarm_cmd == "vote":
        choice = "yes" if args.yes else "no"
        response = _api_call(
            args, {"op": "vote", "proposal": args.proposal, "choice": choice}
        )
        if not response.get("ok"):
            return _fail(args, response.get("error", "vote failed"))
        _out(
            args,
            response,
            [f"state {response['state']} (yes={response['yes']} no={response['no']})"],
        )
        return 0

    # status
    status = _api_call(args, {"op": "status"})
    proposals = _api_call(args, {"op": "proposals"})
    if not (status.get("ok") and proposals.get("ok")):
        return _fail(args, "status failed")
    lines = [
        f"peer    {status['peer_id']}",
        f"epoch   {status['epoch']}  members {status['members']}",
        f"dht     {status['dht_peers']} peers  rendezvous {'up' if status['rendezvous'] else 'down'}",
    ]
    for p in proposals["proposals"]:
        lines.append(
            f"proposal {p['proposal'][:16]} {p['kind']} {p['subject'][:16]} "
            f"yes={p['yes']} no={p['no']} state={p['state']}"
        )
    _out(args, {"ok": True, "status": status, "proposals": proposals["proposals"]}, lines)
    return 0


def cmd_bench(args) -> int:
    from .bench import export_csv, run_benchmark
    from .plotting import render_bench_figures

    async def go():
        return await run_benchmark(
            n_messages=args.messages,
            len_from=args.min_len,
            len_to=args.max_len,
            path=args.path,
            seed=args.seed,
        )

    samples, summary = asyncio.run(go())
    lines = summary.lines()
    written = []
    if args.csv:
        export_csv(samples, args.csv)
        written.append(args.csv)
    if args.plot:
        written.extend(render_bench_figures(samples, args.plot))
    for path in written:
        lines.append(f"wrote {path}")
    _out(
        args,
        {
            "ok": True,
            "count": summary.count,
            "mean_ms": summary.mean_ms,
            "p50_ms": summary.p50_ms,
            "p99_ms": summary.p99_ms,
            "total_s": summary.total_s,
            "files": written,
        },
        lines,
    )
    return 0


def cmd_scenario(args) -> int:
    from .sim import parse_scenario_file, run_scenario

    scenario = parse_scenario_file(args.file)
    report = asyncio.run(run_scenario(scenario))
    lines = [
        f"sent      {report.sent}",
        f"delivered {report.delivered}",
        f"queued    {report.queued}",
        f"failed    {report.failed}",
    ]
    if args.events:
        lines += [json.dumps(e, separators=(",", ":")) for e in report.events]
    _out(
        args,
        {
            "ok": True,
            "sent": report.sent,
            "delivered": report.delivered,
            "queued": report.queued,
            "failed": report.failed,
            "events": report.events,
        },
        lines,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fybrr", description="serverless peer-to-peer messaging"
    )
    parser.add_argument("--json", action="store_true", help="one JSON object per line")
    parser.add_argument("--api-port", type=int, help="local node api port")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate an identity key file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("rendezvous", help="run the signaling server")
    p.add_argument("--listen", required=True)
    p.add_argument("--swarm-key", default="")
    p.add_argument("--private", action="store_true")
    p.set_defaults(func=cmd_rendezvous)

    p = sub.add_parser("node", help="run a node")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("send", help="send a message via the running node")
    p.add_argument("--to", required=True)
    p.add_argument("--text", required=True)
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("inbox", help="sync and print received messages")
    p.set_defaults(func=cmd_inbox)

    p = sub.add_parser("contacts", help="manage the contact list")
    p.add_argument("action", choices=["add", "list"])
    p.add_argument("peer", nargs="?")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_contacts)

    p = sub.add_parser("swarm", help="membership proposals and votes")
    swarm_sub = p.add_subparsers(dest="swarm_cmd", required=True)
    sp = swarm_sub.add_parser("propose")
    sp.add_argument(
        "--kind",
        required=True,
        choices=["ADD_MEMBER", "REMOVE_MEMBER", "PROMOTE_BOOTSTRAP", "DEMOTE_BOOTSTRAP", "SET_POLICY"],
    )
    sp.add_argument("--subject")
    sp.add_argument("--name")
    sp.add_argument("--value")
    sp.set_defaults(func=cmd_swarm)
    sp = swarm_sub.add_parser("vote")
    sp.add_argument("--proposal", required=True)
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--yes", action="store_true")
    group.add_argument("--no", action="store_true")
    sp.set_defaults(func=cmd_swarm)
    sp = swarm_sub.add_parser("status")
    sp.set_defaults(func=cmd_swarm)

    p = sub.add_parser("scenario", help="run a scripted multi-node scenario file")
    p.add_argument("--file", required=True)
    p.add_argument("--events", action="store_true", help="also print the event log")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("bench", help="run the loopback latency benchmark")
    p.add_argument("--messages", type=int, default=500)
    p.add_argument("--min-len", type=int, default=50)
    p.add_argument("--max-len", type=int, default=500)
    p.add_argument("--path", choices=["direct", "dmq"], default="direct")
    p.add_argument("--csv")
    p.add_argument("--plot", help="base path for rendered figures")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FybrrError, ValueError, OSError, json.JSONDecodeError) as e:
        return _fail(args, str(e))


if __name__ == "__main__":
    sys.exit(main())
