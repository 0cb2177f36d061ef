"""Configuration memory model: frames of bits, a golden image, per-frame SEC-DED
and a device-wide CRC-32.

The memory is a ``frame_count x frame_size`` grid. Frames are columns (indexed
left to right) and bit positions are rows (top to bottom); MBE patterns are
resolved on this grid.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Union

import numpy as np

DEFAULT_FRAME_SIZE = 1312
MIN_FRAME_SIZE = 16


class FrameAddress(NamedTuple):
    index: int

    @classmethod
    def checked(cls, index: int, frame_count: int) -> "FrameAddress":
        if not 0 <= index < frame_count:
            raise IndexError(f"frame {index} outside [0, {frame_count})")
        return cls(index)


class BitAddress(NamedTuple):
    frame: int
    bit: int

    @classmethod
    def checked(cls, frame: int, bit: int, frame_count: int, frame_size: int) -> "BitAddress":
        if not 0 <= frame < frame_count:
            raise IndexError(f"frame {frame} outside [0, {frame_count})")
        if not 0 <= bit < frame_size:
            raise IndexError(f"bit {bit} outside [0, {frame_size})")
        return cls(frame, bit)


# --------------------------------------------------------------------------
# SEC-DED (extended Hamming)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EccLayout:
    """Extended Hamming layout over one frame.

    Position 0 holds the overall parity bit, positions that are powers of two
    hold the Hamming check bits and every other position carries payload.
    """

    frame_size: int = DEFAULT_FRAME_SIZE

    def __post_init__(self):
        if self.frame_size < MIN_FRAME_SIZE:
            raise ValueError(f"frame_size must be >= {MIN_FRAME_SIZE}, got {self.frame_size}")

    @property
    def hamming_bits(self) -> int:
        return (self.frame_size - 1).bit_length()

    @property
    def check_bits(self) -> int:
        return self.hamming_bits + 1

    @property
    def payload_bits(self) -> int:
        return self.frame_size - self.check_bits

    @property
    def check_positions(self) -> np.ndarray:
        return np.array([1 << i for i in range(self.hamming_bits)], dtype=np.int64)

    @property
    def payload_positions(self) -> np.ndarray:
        pos = np.arange(1, self.frame_size, dtype=np.int64)
        return pos[(pos & (pos - 1)) != 0]


class Clean(NamedTuple):
    pass


class Corrected(NamedTuple):
    position: int


class DetectedUncorrectable(NamedTuple):
    syndrome: int


DecodeResult = Union[Clean, Corrected, DetectedUncorrectable]

_POSITIONS_CACHE: dict[int, np.ndarray] = {}


def _positions(frame_size: int) -> np.ndarray:
    pos = _POSITIONS_CACHE.get(frame_size)
    if pos is None:
        pos = np.arange(frame_size, dtype=np.int64)
        _POSITIONS_CACHE[frame_size] = pos
    return pos


def _as_bits(vector, length: int, what: str) -> np.ndarray:
    bits = np.asarray(vector, dtype=np.uint8)
    if bits.ndim != 1 or bits.shape[0] != length:
        raise ValueError(f"{what} must have length {length}, got shape {bits.shape}")
    return bits


def syndrome(frame: np.ndarray) -> tuple[int, int]:
    """Return ``(hamming_syndrome, overall_parity)`` of a frame."""
    frame = np.asarray(frame, dtype=np.uint8)
    set_positions = _positions(frame.shape[0])[frame.astype(bool)]
    syn = int(np.bitwise_xor.reduce(set_positions)) if set_positions.size else 0
    return syn, int(set_positions.size & 1)


def ecc_encode_frame(payload, layout: EccLayout | None = None) -> np.ndarray:
    layout = layout or EccLayout()
    bits = _as_bits(payload, layout.payload_bits, "payload")
    frame = np.zeros(layout.frame_size, dtype=np.uint8)
    frame[layout.payload_positions] = bits
    syn, _ = syndrome(frame)
    for i in range(layout.hamming_bits):
        frame[1 << i] = (syn >> i) & 1
    frame[0] = int(frame.sum()) & 1
    return frame


def ecc_decode_frame(frame, layout: EccLayout | None = None) -> DecodeResult:
    layout = layout or EccLayout()
    bits = _as_bits(frame, layout.frame_size, "frame")
    syn, parity = syndrome(bits)
    if parity == 0:
        return Clean() if syn == 0 else DetectedUncorrectable(syn)
    # odd number of errors: a single error sits at the syndrome position
    # (syndrome 0 means the overall parity bit itself)
    if syn >= layout.frame_size:
        return DetectedUncorrectable(syn)
    return Corrected(syn)


def ecc_payload(frame, layout: EccLayout | None = None) -> np.ndarray:
    layout = layout or EccLayout()
    return _as_bits(frame, layout.frame_size, "frame")[layout.payload_positions]


def encode_image(payloads: np.ndarray, layout: EccLayout) -> np.ndarray:
    """Vectorised encoder for a ``frames x payload_bits`` array."""
    payloads = np.asarray(payloads, dtype=np.uint8)
    frames = np.zeros((payloads.shape[0], layout.frame_size), dtype=np.uint8)
    frames[:, layout.payload_positions] = payloads
    pos = _positions(layout.frame_size)
    for i in range(layout.hamming_bits):
        covered = (pos & (1 << i)) != 0
        frames[:, 1 << i] = frames[:, covered].sum(axis=1) & 1
    frames[:, 0] = frames.sum(axis=1) & 1
    return frames


# --------------------------------------------------------------------------
# Memory
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ConfigMemory:
    """Live configuration memory plus its immutable golden reference.

    ``diff`` (the set of cells where live differs from golden) is maintained
    incrementally so scrubbers and the DUT never scan the whole grid.
    """

    golden: np.ndarray
    live: np.ndarray = field(init=False)
    _diff: set = field(init=False, default_factory=set)
    # frame -> (tick the frame became dirty, sequence) for oldest-first repair
    _dirty_since: dict = field(init=False, default_factory=dict)
    _seq: int = field(init=False, default=0)

    def __post_init__(self):
        self.golden = np.array(self.golden, dtype=np.uint8, copy=True)
        self.golden.setflags(write=False)
        self.live = self.golden.copy()

    @property
    def frame_count(self) -> int:
        return self.golden.shape[0]

    @property
    def frame_size(self) -> int:
        return self.golden.shape[1]

    @property
    def layout(self) -> EccLayout:
        return EccLayout(self.frame_size)

    @property
    def diff(self) -> frozenset:
        return frozenset(self._diff)

    def hamming_distance(self) -> int:
        return len(self._diff)

    def frame_diff(self, frame: int) -> set:
        return {c for c in self._diff if c[0] == frame}

    def dirty_frames(self) -> list[int]:
        """Dirty frames, oldest first."""
        return sorted(self._dirty_since, key=self._dirty_since.__getitem__)

    def is_dirty(self, frame: int) -> bool:
        return frame in self._dirty_since

    def _check(self, frame: int, bit: int) -> BitAddress:
        return BitAddress.checked(frame, bit, self.frame_count, self.frame_size)

    def flip_bits(self, targets: Iterable, now: int = 0) -> frozenset:
        cells = [self._check(int(f), int(b)) for f, b in targets]
        for cell in cells:
            self._toggle(cell, now)
        return self.diff

    def _toggle(self, cell: BitAddress, now: int):
        f, b = cell
        self.live[f, b] ^= 1
        if cell in self._diff:
            self._diff.remove(cell)
            if not any(c[0] == f for c in self._diff):
                del self._dirty_since[f]
        else:
            self._diff.add(cell)
            if f not in self._dirty_since:
                self._dirty_since[f] = (now, self._seq)
                self._seq += 1

    def restore_frame(self, frame: int) -> set:
        """Rewrite one frame from golden; returns the cells that were repaired."""
        FrameAddress.checked(frame, self.frame_count)
        fixed = self.frame_diff(frame)
        if fixed:
            self.live[frame] = self.golden[frame]
            self._diff -= fixed
            del self._dirty_since[frame]
        return fixed

    def restore_all(self) -> set:
        fixed = set(self._diff)
        self.live[:] = self.golden
        self._diff.clear()
        self._dirty_since.clear()
        return fixed

    def flip_back(self, frame: int, bit: int) -> None:
        """Single-bit read-modify-write (may also corrupt if the bit was clean)."""
        self._toggle(self._check(frame, bit), now=0)

    def read_frame(self, frame: int) -> np.ndarray:
        FrameAddress.checked(frame, self.frame_count)
        return self.live[frame].copy()


def build_memory(frame_count: int, frame_size: int = DEFAULT_FRAME_SIZE, golden_image=None) -> ConfigMemory:
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    EccLayout(frame_size)  # validates the size
    if golden_image is None:
        golden_image = np.zeros((frame_count, frame_size), dtype=np.uint8)
    image = np.asarray(golden_image, dtype=np.uint8)
    if image.shape != (frame_count, frame_size):
        raise ValueError(f"golden image shape {image.shape} != ({frame_count}, {frame_size})")
    if image.size and image.max() > 1:
        raise ValueError("golden image must contain only 0/1 values")
    return ConfigMemory(image)


def random_golden_image(frame_count: int, frame_size: int = DEFAULT_FRAME_SIZE, seed: int = 0,
                        encoded: bool = True) -> np.ndarray:
    """Seeded random image; with ``encoded`` every frame is a valid SEC-DED codeword."""
    rng = np.random.default_rng(seed)
    layout = EccLayout(frame_size)
    if not encoded:
        return rng.integers(0, 2, size=(frame_count, frame_size), dtype=np.uint8)
    payloads = rng.integers(0, 2, size=(frame_count, layout.payload_bits), dtype=np.uint8)
    return encode_image(payloads, layout)


# --------------------------------------------------------------------------
# CRC and raw image files
# --------------------------------------------------------------------------

def pack_bits(bits: np.ndarray) -> bytes:
    """Frame-major, bit 0 of frame 0 first, LSB-first within each byte."""
    flat = np.asarray(bits, dtype=np.uint8).reshape(-1)
    return np.packbits(flat, bitorder="little").tobytes()


def device_crc(mem: Union[ConfigMemory, np.ndarray]) -> int:
    bits = mem.live if isinstance(mem, ConfigMemory) else mem
    return zlib.crc32(pack_bits(bits)) & 0xFFFFFFFF


def save_image(path: Union[str, Path], bits: np.ndarray) -> None:
    Path(path).write_bytes(pack_bits(bits))


def load_image(path: Union[str, Path], frame_count: int, frame_size: int) -> np.ndarray:
    data = Path(path).read_bytes()
    expected = math.ceil(frame_count * frame_size / 8)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return flat[: frame_count * frame_size].reshape(frame_count, frame_size)
