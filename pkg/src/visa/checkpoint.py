"""Binary weight files and run directories.

Weights file: ``b"VISAW01\\0"``, uint32 tensor count, then per tensor a uint32
name length, the UTF-8 name, uint32 rank, uint32 extents and float32 values,
all little-endian. Parameters and batch-norm buffers are both stored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data.io import FormatError
from .indices import StandardizationStats
from .model import Predictor, VisaModel

MAGIC = b"VISAW01\x00"


def encode_state(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, value in state.items():
        raw = name.encode()
        arr = np.asarray(value, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_state(raw: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if raw[:8] != MAGIC:
        raise FormatError(f"{source}: not a weights file (magic {raw[:8]!r})")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{source}: truncated at byte {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(raw):
        raise FormatError(f"{source}: {len(raw) - pos} trailing bytes")
    return state


def save_weights(path, model: VisaModel) -> None:
    Path(path).write_bytes(encode_state(model.state_dict()))


def load_weights(path, model: VisaModel) -> None:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model.load_state_dict(decode_state(path.read_bytes(), str(path)))


def save_run_files(run_dir, cfg: RunConfig, stats: StandardizationStats) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    stats.save(run_dir / "stats.txt")


def load_predictor(checkpoint, batch_size: int = 8) -> tuple[Predictor, RunConfig]:
    """Rebuild a frozen model from a checkpoint and the config/stats files beside it."""
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    run_dir = checkpoint.parent
    for name in ("config.txt", "stats.txt"):
        if not (run_dir / name).exists():
            raise FileNotFoundError(f"{run_dir / name} missing next to checkpoint {checkpoint}")
    cfg = RunConfig.from_text((run_dir / "config.txt").read_text())
    model = VisaModel(cfg.model_config())
    load_weights(checkpoint, model)
    stats = StandardizationStats.load(run_dir / "stats.txt")
    return Predictor(model.eval(), stats, batch_size), cfg
