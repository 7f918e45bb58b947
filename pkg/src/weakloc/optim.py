"""SGD with momentum and decoupled parameter groups, the cosine learning-rate
schedule, and the binary checkpoint format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

CHECKPOINT_MAGIC = b"WENDCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ParamGroup:
    """Parameters sharing an lr multiplier and weight-decay setting.

    Weight decay is applied to conv/linear weights only; bias groups use
    decay=0.
    """

    params: list[Tensor]
    lr_mult: float = 1.0
    weight_decay: float = 0.0


@dataclass
class SGD:
    """v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v."""

    groups: list[ParamGroup]
    momentum: float = 0.9
    velocities: list[list[np.ndarray]] = field(init=False)
    steps: int = field(default=0, init=False)

    def __post_init__(self):
        self.velocities = [[np.zeros_like(p.data) for p in g.params] for g in self.groups]

    def step(self, lr: float):
        for group, vels in zip(self.groups, self.velocities):
            g_lr = lr * group.lr_mult
            for p, v in zip(group.params, vels):
                if p.grad is None:
                    raise ValueError(f"parameter {p.name!r} has no gradient")
                v *= self.momentum
                v += p.grad + group.weight_decay * p.data
                p.data -= g_lr * v
        self.steps += 1

    def zero_grad(self):
        for group in self.groups:
            for p in group.params:
                p.grad = None

    def fill_missing_grads(self):
        """Zero-fill parameters the last backward never reached (a step with
        no positive samples leaves the regression head off the graph)."""
        for group in self.groups:
            for p in group.params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine annealing: base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs))."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, then per-tensor records of
# (u32 name length, utf-8 name, u32 rank, u32 dims..., little-endian f64 data)
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = arr.astype(np.float64)
    return out
