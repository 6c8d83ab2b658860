"""Latency benchmark: timed message runs over either delivery path.

Two nodes and a rendezvous server run on loopback; message lengths grow
linearly across the run. Each message is sent and awaited at the receiver
before the next goes out, so per-message latency covers the whole
application-to-application path. Results go to CSV (and optionally to
figures, see plotting).
"""

from __future__ import annotations

import asyncio
import random
import statistics
import time
from dataclasses import dataclass

from .sim import NodeSwarm, deterministic_text


@dataclass(frozen=True)
class LatencySample:
    msg_index: int
    length_chars: int
    path: str  # "direct" | "dmq"
    send_ts: float  # unix-ms
    recv_ts: float  # unix-ms

    @property
    def latency_ms(self) -> float:
        return self.recv_ts - self.send_ts


@dataclass(frozen=True)
class BenchSummary:
    count: int
    mean_ms: float
    p50_ms: float
    p99_ms: float
    total_s: float

    def lines(self) -> list[str]:
        return [
            f"messages        {self.count}",
            f"mean latency    {self.mean_ms:.3f} ms",
            f"p50 latency     {self.p50_ms:.3f} ms",
            f"p99 latency     {self.p99_ms:.3f} ms",
            f"total wall time {self.total_s:.3f} s",
        ]


def message_length(i: int, n_messages: int, len_from: int, len_to: int) -> int:
    if n_messages <= 1:
        return len_from
    return round(len_from + i * (len_to - len_from) / (n_messages - 1))


def summarize(samples: list[LatencySample], total_s: float) -> BenchSummary:
    if not samples:
        return BenchSummary(0, 0.0, 0.0, 0.0, total_s)
    latencies = sorted(s.latency_ms for s in samples)
    return BenchSummary(
        count=len(samples),
        mean_ms=statistics.fmean(latencies),
        p50_ms=latencies[len(latencies) // 2],
        p99_ms=latencies[min(len(latencies) - 1, int(len(latencies) * 0.99))],
        total_s=total_s,
    )


async def run_benchmark(
    n_messages: int = 500,
    len_from: int = 50,
    len_to: int = 500,
    path: str = "direct",
    *,
    seed: int = 0,
    workdir: str | None = None,
) -> tuple[list[LatencySample], BenchSummary]:
    """Sequentially send and await n messages; every one must arrive."""
    if path not in ("direct", "dmq"):
        raise ValueError(f"path must be direct or dmq, not {path!r}")
    rng = random.Random(seed)
    samples: list[LatencySample] = []
    if n_messages == 0:
        return samples, summarize(samples, 0.0)

    swarm = await NodeSwarm.launch(2, seed=seed, workdir=workdir)
    try:
        sender, receiver = swarm.node(0), swarm.node(1)
        inbox = swarm.inboxes[1]
        # resolve keys and (on the direct path) the channel before timing
        await sender.resolve_keys(receiver.identity.peer_id)
        wall_start = time.monotonic()
        for i in range(n_messages):
            length = message_length(i, n_messages, len_from, len_to)
            text = deterministic_text(rng, length)
            send_ts = time.time() * 1000.0
            msg = await sender.send_message(
                receiver.identity.peer_id, text.encode(), force_path=path
            )
            if msg.status == "failed":
                raise RuntimeError(f"message {i} failed: {msg.error}")
            if path == "dmq":
                received = await receiver.sync_inbox()
                if not any(m.plaintext.decode() == text for m in received):
                    raise RuntimeError(f"message {i} not delivered by sync")
            else:
                event = await asyncio.wait_for(inbox.get(), 10)
                if event["text"] != text:
                    raise RuntimeError(f"message {i} arrived out of order")
            recv_ts = time.time() * 1000.0
            samples.append(
                LatencySample(
                    msg_index=i, length_chars=length, path=path,
                    send_ts=send_ts, recv_ts=recv_ts,
                )
            )
        total_s = time.monotonic() - wall_start
    finally:
        await swarm.close()
    return samples, summarize(samples, total_s)


CSV_HEADER = "msg_index,length_chars,path,send_ts,recv_ts,latency_ms"


def export_csv(samples: list[LatencySample], path: str) -> None:
    """One row per sample, ordered by msg_index; stable across re-exports."""
    rows = [CSV_HEADER]
    for s in sorted(samples, key=lambda s: s.msg_index):
        rows.append(
            f"{s.msg_index},{s.length_chars},{s.path},"
            f"{s.send_ts:.3f},{s.recv_ts:.3f},{s.latency_ms:.3f}"
        )
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(rows) + "\n")
