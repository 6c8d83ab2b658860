"""Benchmark figures rendered next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_PATH_COLORS = {"direct": "tab:blue", "dmq": "tab:orange"}


def render_latency_figure(samples, out_path: str) -> str:
    """Per-message latency scatter, one point per message."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for path in sorted({s.path for s in samples}):
        subset = [s for s in samples if s.path == path]
        ax.scatter(
            [s.msg_index for s in subset],
            [s.latency_ms for s in subset],
            s=8,
            alpha=0.6,
            label=path,
            color=_PATH_COLORS.get(path),
        )
    ax.set_xlabel("message index")
    ax.set_ylabel("latency (ms)")
    ax.set_title("Per-message delivery latency")
    if samples:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_cumulative_figure(samples, out_path: str) -> str:
    """Cumulative delivery time against message count; monotone by construction."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for path in sorted({s.path for s in samples}):
        subset = sorted((s for s in samples if s.path == path), key=lambda s: s.msg_index)
        total = 0.0
        xs, ys = [], []
        for s in subset:
            total += s.latency_ms / 1000.0
            xs.append(s.msg_index)
            ys.append(total)
        ax.plot(xs, ys, label=path, color=_PATH_COLORS.get(path))
    ax.set_xlabel("messages sent")
    ax.set_ylabel("cumulative time (s)")
    ax.set_title("Total time to deliver the run")
    if samples:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_bench_figures(samples, base_path: str) -> list[str]:
    """Write both figures; base_path like out/bench gives out/bench_latency.png."""
    stem = base_path[:-4] if base_path.endswith(".png") else base_path
    return [
        render_latency_figure(samples, f"{stem}_latency.png"),
        render_cumulative_figure(samples, f"{stem}_cumulative.png"),
    ]
