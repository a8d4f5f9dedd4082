"""Binary frame packs: raw rendered frames of action-free videos.

Layout (little-endian): magic ``LFSP``, then ``<IIIIIII`` version, frame count,
height, width, channels, dtype code, episode length, then the frames in C order.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LFSP"
VERSION = 1
_HEADER = struct.Struct("<IIIIIII")
_DTYPES = {0: np.dtype("u1"), 1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class FramePackError(ValueError):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code


def encode_pack(frames: np.ndarray, episode_length: int) -> bytes:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"frames must be (N, H, W, C), got shape {frames.shape}")
    dtype = frames.dtype.newbyteorder("<") if frames.dtype.byteorder == ">" else frames.dtype
    if np.dtype(dtype) not in _CODES:
        raise ValueError(f"unsupported frame dtype {frames.dtype}")
    if episode_length < 1 or len(frames) % episode_length:
        raise ValueError(f"{len(frames)} frames do not split into episodes of {episode_length}")
    n, h, w, c = frames.shape
    header = MAGIC + _HEADER.pack(VERSION, n, h, w, c, _CODES[np.dtype(dtype)], episode_length)
    return header + np.ascontiguousarray(frames, dtype=dtype).tobytes()


def decode_pack(data: bytes) -> tuple[np.ndarray, int]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FramePackError("bad_magic", "not a frame pack")
    if len(data) < 4 + _HEADER.size:
        raise FramePackError("truncated_payload", "header is incomplete")
    version, n, h, w, c, code, episode_length = _HEADER.unpack_from(data, 4)
    if version != VERSION:
        raise FramePackError("version_mismatch", f"pack version {version}, reader supports {VERSION}")
    if code not in _DTYPES:
        raise FramePackError("bad_dtype", f"unknown dtype code {code}")
    dtype = _DTYPES[code]
    expected = n * h * w * c * dtype.itemsize
    payload = memoryview(data)[4 + _HEADER.size:]
    if len(payload) < expected:
        raise FramePackError("truncated_payload", f"{len(payload)} of {expected} payload bytes present")
    if len(payload) > expected:
        raise FramePackError("trailing_bytes", f"{len(payload) - expected} bytes after the last frame")
    frames = np.frombuffer(payload, dtype=dtype).reshape(n, h, w, c).copy()
    return frames, episode_length


def write_pack(path: str | Path, frames: np.ndarray, episode_length: int) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_pack(frames, episode_length))
    os.replace(tmp, path)


def read_pack(path: str | Path) -> tuple[np.ndarray, int]:
    return decode_pack(Path(path).read_bytes())


def episodes(frames: np.ndarray, episode_length: int) -> list[np.ndarray]:
    return [frames[i:i + episode_length] for i in range(0, len(frames), episode_length)]
