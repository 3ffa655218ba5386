"""Binary patch and mask files.

Patch: ``b"BAWP01\\0\\0"``, then little-endian uint32 bands, height, width,
then float32 reflectance in band-major row-major order.
Mask: ``b"BAWM01\\0\\0"``, uint32 height, width, then uint8 codes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

PATCH_MAGIC = b"BAWP01\x00\x00"
MASK_MAGIC = b"BAWM01\x00\x00"


class FormatError(ValueError):
    pass


def encode_patch(bands: np.ndarray) -> bytes:
    bands = np.asarray(bands, dtype="<f4")
    if bands.ndim != 3:
        raise ValueError(f"patch must be [bands, H, W], got {bands.shape}")
    return PATCH_MAGIC + struct.pack("<III", *bands.shape) + bands.tobytes(order="C")


def decode_patch(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if raw[:8] != PATCH_MAGIC:
        raise FormatError(f"{source}: bad patch magic/version {raw[:8]!r}")
    if len(raw) < 20:
        raise FormatError(f"{source}: truncated patch header ({len(raw)} bytes)")
    c, h, w = struct.unpack("<III", raw[8:20])
    expected = 20 + 4 * c * h * w
    if len(raw) != expected:
        raise FormatError(f"{source}: patch payload is {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(c, h, w).astype(np.float32)


def encode_mask(codes: np.ndarray) -> bytes:
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError(f"mask must be [H, W], got {codes.shape}")
    return MASK_MAGIC + struct.pack("<II", *codes.shape) + codes.astype(np.uint8).tobytes(order="C")


def decode_mask(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if raw[:8] != MASK_MAGIC:
        raise FormatError(f"{source}: bad mask magic/version {raw[:8]!r}")
    if len(raw) < 16:
        raise FormatError(f"{source}: truncated mask header ({len(raw)} bytes)")
    h, w = struct.unpack("<II", raw[8:16])
    if len(raw) != 16 + h * w:
        raise FormatError(f"{source}: mask payload is {len(raw)} bytes, header implies {16 + h * w}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(h, w).copy()


def write_patch(path, bands) -> None:
    Path(path).write_bytes(encode_patch(bands))


def read_patch(path) -> np.ndarray:
    return decode_patch(Path(path).read_bytes(), str(path))


def write_mask(path, codes) -> None:
    Path(path).write_bytes(encode_mask(codes))


def read_mask(path) -> np.ndarray:
    return decode_mask(Path(path).read_bytes(), str(path))
