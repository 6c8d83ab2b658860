"""In-process multi-node simulation on loopback sockets.

Everything runs in one event loop with real TCP on 127.0.0.1: the swarm
builders here are the apparatus for integration tests, scripted fault
scenarios, and the latency benchmark. Logic is deterministic given the
seed; wall-clock timings are whatever the host provides.
"""

from __future__ import annotations

import asyncio
import os
import random
import shutil
import string
import tempfile
from dataclasses import dataclass, field

from . import identity as idm
from .config import NodeConfig
from .node import Node
from .peer import Peer
from .rendezvous import RendezvousServer


class PeerSwarm:
    """N bare peers (DHT + blocks + queue), bootstrapped into one swarm."""

    def __init__(self, peers: list[Peer], workdir: str, owns_workdir: bool):
        self.peers = peers
        self.workdir = workdir
        self._owns_workdir = owns_workdir
        self.stopped: set[int] = set()

    @classmethod
    async def launch(
        cls,
        n: int,
        *,
        seed: int = 0,
        workdir: str | None = None,
        swarm_key: bytes = b"",
        replication: int = 3,
        k: int = 20,
        rpc_timeout: float = 2.0,
        bootstrap: bool = True,
    ) -> "PeerSwarm":
        owns = workdir is None
        workdir = workdir or tempfile.mkdtemp(prefix="fybrr-swarm-")
        rng = random.Random(seed)
        peers = []
        for i in range(n):
            ident = idm.generate_identity(rng.randbytes(32))
            peer = Peer(
                ident,
                os.path.join(workdir, f"peer{i:03d}"),
                swarm_key=swarm_key,
                replication=replication,
                k=k,
                rpc_timeout=rpc_timeout,
            )
            await peer.start()
            peers.append(peer)
        swarm = cls(peers, workdir, owns)
        if bootstrap and n > 1:
            seed_ep = [peers[0].endpoint]
            for peer in peers[1:]:
                await peer.bootstrap(seed_ep)
            await peers[0].find_node(peers[0].identity.peer_id)
        return swarm

    async def stop_peer(self, i: int) -> None:
        if i not in self.stopped:
            await self.peers[i].stop()
            self.stopped.add(i)

    async def close(self) -> None:
        for i in range(len(self.peers)):
            await self.stop_peer(i)
        if self._owns_workdir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def alive(self) -> list[Peer]:
        return [p for i, p in enumerate(self.peers) if i not in self.stopped]

    def by_id(self, peer_id: bytes) -> Peer:
        for p in self.peers:
            if p.identity.peer_id == peer_id:
                return p
        raise KeyError(peer_id.hex())

    def brute_force_closest(self, target: bytes, n: int, *, exclude=frozenset()) -> list[bytes]:
        """Oracle: XOR-sort all live peer ids; no routing involved."""
        from .dht import xor_distance

        ids = [
            p.identity.peer_id
            for i, p in enumerate(self.peers)
            if i not in self.stopped and p.identity.peer_id not in exclude
        ]
        ids.sort(key=lambda pid: xor_distance(pid, target))
        return ids[:n]


class NodeSwarm:
    """N full nodes plus one rendezvous server, ready for messaging."""

    def __init__(self, rendezvous: RendezvousServer, workdir: str, owns_workdir: bool):
        self.rendezvous = rendezvous
        self.workdir = workdir
        self._owns_workdir = owns_workdir
        self.nodes: list[Node | None] = []
        self.identities: list[idm.PeerIdentity] = []
        self.configs: list[NodeConfig] = []
        self.inboxes: list[asyncio.Queue] = []
        self.stopped: set[int] = set()

    @classmethod
    async def launch(
        cls,
        n: int,
        *,
        seed: int = 0,
        workdir: str | None = None,
        swarm_key: str = "",
        replication: int = 3,
        inbox_poll: float = 3600.0,
    ) -> "NodeSwarm":
        owns = workdir is None
        workdir = workdir or tempfile.mkdtemp(prefix="fybrr-nodes-")
        os.makedirs(workdir, exist_ok=True)
        rendezvous = RendezvousServer(
            swarm_key=bytes.fromhex(swarm_key) if swarm_key else b""
        )
        await rendezvous.start()
        swarm = cls(rendezvous, workdir, owns)
        rng = random.Random(seed)
        for i in range(n):
            ident = idm.generate_identity(rng.randbytes(32))
            key_path = os.path.join(workdir, f"node{i:03d}.key")
            idm.save_identity(ident, key_path)
            config = NodeConfig(
                key_file=key_path,
                listen="127.0.0.1:0",
                rendezvous=rendezvous.endpoint,
                swarm_key=swarm_key,
                replication=replication,
                data_dir=os.path.join(workdir, f"node{i:03d}"),
                inbox_poll=inbox_poll,
            )
            swarm.identities.append(ident)
            swarm.configs.append(config)
            swarm.nodes.append(None)
            swarm.inboxes.append(asyncio.Queue())
            await swarm.start_node(i)
        return swarm

    async def start_node(self, i: int) -> Node:
        config = self.configs[i]
        alive_endpoints = [
            node.peer.endpoint
            for j, node in enumerate(self.nodes)
            if node is not None and j not in self.stopped and j != i
        ]
        config.bootstrap = alive_endpoints[:2]
        node = Node(config, identity=self.identities[i])
        queue = self.inboxes[i]

        async def capture(event):
            if event.get("op") == "inbound":
                await queue.put(event)

        node.subscribe(capture)
        await node.start()
        self.nodes[i] = node
        self.stopped.discard(i)
        return node

    async def stop_node(self, i: int) -> None:
        if i in self.stopped or self.nodes[i] is None:
            return
        await self.nodes[i].stop()
        self.stopped.add(i)

    async def close(self) -> None:
        for i, node in enumerate(self.nodes):
            if node is not None and i not in self.stopped:
                await node.stop()
        await self.rendezvous.stop()
        if self._owns_workdir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def node(self, i: int) -> Node:
        node = self.nodes[i]
        assert node is not None and i not in self.stopped, f"node {i} is not running"
        return node

    def gc_all(self) -> int:
        removed = 0
        for i, node in enumerate(self.nodes):
            if node is not None and i not in self.stopped:
                removed += node.peer.gc()
        return removed

    def blocks_everywhere(self) -> set[bytes]:
        cids: set[bytes] = set()
        for i, node in enumerate(self.nodes):
            if node is not None and i not in self.stopped:
                cids.update(node.peer.store.list_blocks())
        return cids


def deterministic_text(rng: random.Random, length: int) -> str:
    alphabet = string.ascii_letters + string.digits + " "
    return "".join(rng.choice(alphabet) for _ in range(length))


# --------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScheduleItem:
    time_s: float
    node: int
    event: str  # start | stop | send | sync
    to: int | None = None
    length: int = 50


@dataclass(frozen=True)
class Fault:
    time_s: float
    kind: str  # corrupt_chunk | drop_holder | kill_rendezvous


@dataclass
class Scenario:
    n_nodes: int
    schedule: list[ScheduleItem]
    seed: int = 0
    faults: list[Fault] = field(default_factory=list)
    replication: int = 3

    def __post_init__(self):
        self.schedule = sorted(self.schedule, key=lambda item: item.time_s)
        self.faults = sorted(self.faults, key=lambda f: f.time_s)


@dataclass
class ScenarioReport:
    events: list[dict] = field(default_factory=list)
    sent: int = 0
    delivered: int = 0
    queued: int = 0
    failed: int = 0

    def log(self, kind: str, **fields):
        self.events.append({"kind": kind, **fields})


async def run_scenario(scenario: Scenario, workdir: str | None = None) -> ScenarioReport:
    """Execute a schedule against a fresh swarm; returns the event log.

    Ordering is deterministic for a given scenario and seed: items run
    strictly in schedule order, with faults injected between them.
    """
    rng = random.Random(scenario.seed)
    report = ScenarioReport()
    swarm = await NodeSwarm.launch(
        scenario.n_nodes,
        seed=scenario.seed,
        workdir=workdir,
        replication=scenario.replication,
    )
    expected: dict[bytes, tuple[int, int]] = {}  # msg_id -> (sender, recipient)
    faults = list(scenario.faults)
    try:
        for item in scenario.schedule:
            while faults and faults[0].time_s <= item.time_s:
                await _inject_fault(swarm, faults.pop(0), rng, report)
            if item.event == "start":
                await swarm.start_node(item.node)
                report.log("start", node=item.node)
            elif item.event == "stop":
                await swarm.stop_node(item.node)
                report.log("stop", node=item.node)
            elif item.event == "send":
                sender = swarm.node(item.node)
                recipient_id = swarm.identities[item.to].peer_id
                text = deterministic_text(rng, item.length)
                msg = await sender.send_message(recipient_id, text.encode())
                report.sent += 1
                if msg.status == "failed":
                    report.failed += 1
                elif msg.status == "queued":
                    report.queued += 1
                expected[msg.msg_id] = (item.node, item.to)
                report.log("send", node=item.node, to=item.to, state=msg.status,
                           msg_id=msg.msg_id.hex(), text=text)
            elif item.event == "sync":
                node = swarm.node(item.node)
                received = await node.sync_inbox()
                for inbound in received:
                    report.log("deliver", node=item.node, msg_id=inbound.msg_id.hex(),
                               path=inbound.path)
                report.log("sync", node=item.node, received=len(received))
        # direct-path deliveries land in the inbox queues as events
        for i, queue in enumerate(swarm.inboxes):
            while not queue.empty():
                event = queue.get_nowait()
                report.log("deliver", node=i, msg_id=event["msg_id"], path=event["path"])
        delivered_ids = {e["msg_id"] for e in report.events if e["kind"] == "deliver"}
        report.delivered = len(delivered_ids)
        return report
    finally:
        await swarm.close()


async def _inject_fault(swarm: NodeSwarm, fault: Fault, rng: random.Random, report: ScenarioReport):
    if fault.kind == "kill_rendezvous":
        await swarm.rendezvous.stop()
        report.log("fault", fault="kill_rendezvous")
    elif fault.kind == "drop_holder":
        holders = [
            i for i, node in enumerate(swarm.nodes)
            if node is not None and i not in swarm.stopped and node.peer.store.list_blocks()
        ]
        if holders:
            victim = rng.choice(holders)
            await swarm.stop_node(victim)
            report.log("fault", fault="drop_holder", node=victim)
    elif fault.kind == "corrupt_chunk":
        candidates = [
            (i, cid)
            for i, node in enumerate(swarm.nodes)
            if node is not None and i not in swarm.stopped
            for cid in node.peer.store.list_blocks()
        ]
        if candidates:
            i, cid = rng.choice(candidates)
            swarm.node(i).peer.serve_corrupt.add(cid)
            report.log("fault", fault="corrupt_chunk", node=i, cid=cid.hex())


def parse_scenario_file(path: str) -> Scenario:
    """Scenario files: key=value settings, then [schedule] and [faults] blocks.

    Schedule lines: <time_s> <event> <node> [to] [length]
    Fault lines:    <time_s> <kind>
    """
    settings = {"n_nodes": None, "seed": 0, "replication": 3}
    schedule: list[ScheduleItem] = []
    faults: list[Fault] = []
    section = "settings"
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("[schedule]", "[faults]"):
                section = line[1:-1]
                continue
            where = f"{path}:{lineno}"
            if section == "settings":
                if "=" not in line:
                    raise ValueError(f"{where}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in settings:
                    raise ValueError(f"{where}: unknown setting {key!r}")
                settings[key] = int(value.strip())
            elif section == "schedule":
                parts = line.split()
                if len(parts) < 3:
                    raise ValueError(f"{where}: expected <time> <event> <node>")
                time_s, event, node = float(parts[0]), parts[1], int(parts[2])
                if event == "send":
                    if len(parts) < 4:
                        raise ValueError(f"{where}: send needs a recipient node")
                    to = int(parts[3])
                    length = int(parts[4]) if len(parts) > 4 else 50
                    schedule.append(ScheduleItem(time_s, node, "send", to, length))
                elif event in ("start", "stop", "sync"):
                    schedule.append(ScheduleItem(time_s, node, event))
                else:
                    raise ValueError(f"{where}: unknown event {event!r}")
            else:
                parts = line.split()
                if len(parts) != 2 or parts[1] not in (
                    "corrupt_chunk", "drop_holder", "kill_rendezvous"
                ):
                    raise ValueError(f"{where}: expected <time> <fault kind>")
                faults.append(Fault(float(parts[0]), parts[1]))
    if settings["n_nodes"] is None:
        raise ValueError(f"{path}: n_nodes is required")
    return Scenario(
        n_nodes=settings["n_nodes"],
        schedule=schedule,
        seed=settings["seed"],
        faults=faults,
        replication=settings["replication"],
    )
