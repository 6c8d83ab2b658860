"""Node configuration: a line-oriented key=value file.

Recognized keys: key_file, listen, rendezvous, swarm_key, bootstrap
(comma-separated endpoints), replication, api_port, plus the optional
extras data_dir, private, genesis, and inbox_poll. Blank lines and
#-comments are skipped; unknown keys are an error so typos surface early.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .errors import ConfigError

_KNOWN_KEYS = {
    "key_file",
    "listen",
    "rendezvous",
    "swarm_key",
    "bootstrap",
    "replication",
    "api_port",
    "data_dir",
    "private",
    "genesis",
    "inbox_poll",
}

_TRUTHY = {"1", "true", "yes", "on"}


@dataclass
class NodeConfig:
    key_file: str
    listen: str = "127.0.0.1:0"
    rendezvous: str | None = None
    swarm_key: str = ""
    bootstrap: list[str] = field(default_factory=list)
    replication: int = 3
    api_port: int | None = None
    data_dir: str | None = None
    private: bool = False
    genesis: bool = False
    inbox_poll: float = 10.0

    def swarm_key_bytes(self) -> bytes:
        if not self.swarm_key:
            return b""
        try:
            return bytes.fromhex(self.swarm_key)
        except ValueError:
            raise ConfigError("swarm_key must be hex") from None


def parse_config(path: str) -> NodeConfig:
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    values: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()

    if "key_file" not in values:
        raise ConfigError(f"{path}: key_file is required")

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        config = NodeConfig(
            key_file=resolve(values["key_file"]),
            listen=values.get("listen", "127.0.0.1:0"),
            rendezvous=values.get("rendezvous") or None,
            swarm_key=values.get("swarm_key", ""),
            bootstrap=[e.strip() for e in values.get("bootstrap", "").split(",") if e.strip()],
            replication=int(values.get("replication", "3")),
            api_port=int(values["api_port"]) if values.get("api_port") else None,
            data_dir=resolve(values["data_dir"]) if values.get("data_dir") else None,
            private=values.get("private", "").lower() in _TRUTHY,
            genesis=values.get("genesis", "").lower() in _TRUTHY,
            inbox_poll=float(values.get("inbox_poll", "10")),
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    if config.replication < 1:
        raise ConfigError("replication must be at least 1")
    if config.data_dir is None:
        config.data_dir = os.path.join(base, "fybrr-data")
    config.swarm_key_bytes()  # validate hex early
    return config
