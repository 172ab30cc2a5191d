"""Versioned policy checkpoint: magic line, JSON header, little-endian float64 parameters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .network import PARAM_ORDER, PolicyNetwork
from .rewards import RewardSpec

MAGIC = b"CROWDNAV-POLICY\n"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    network: PolicyNetwork
    reward: RewardSpec = field(default_factory=RewardSpec)
    metadata: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        net = self.network
        header = {
            "version": FORMAT_VERSION,
            "input_size": net.input_size,
            "hidden": net.hidden,
            "dense": list(net.dense),
            "n_actions": net.n_actions,
            "param_order": list(PARAM_ORDER),
            "reward": asdict(self.reward),
            "metadata": self.metadata,
        }
        body = b"".join(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes() for k in PARAM_ORDER)
        return MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(MAGIC):
            raise ValueError("not a policy checkpoint")
        end = data.index(b"\n", len(MAGIC))
        header = json.loads(data[len(MAGIC) : end])
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        if header["param_order"] != list(PARAM_ORDER):
            raise ValueError("checkpoint parameter order does not match this build")
        shapes = PolicyNetwork._shapes(
            header["input_size"], header["hidden"], tuple(header["dense"]), header["n_actions"]
        )
        pos = end + 1
        params = {}
        for k in PARAM_ORDER:
            n = int(np.prod(shapes[k]))
            params[k] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shapes[k])
            pos += 8 * n
        if pos != len(data):
            raise ValueError("trailing bytes in checkpoint")
        net = PolicyNetwork(params, header["input_size"], header["hidden"],
                            tuple(header["dense"]), header["n_actions"])
        return cls(net, RewardSpec(**header["reward"]), header["metadata"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
