"""Round-to-nearest group quantization and INT4/INT2 packing into 16-bit words.

Layout conventions used across the package:

* weights are ``[k, n]`` (input features x output features);
* group ``(gk, gn)`` tiles the matrix row-major over ``(k // gk, n // gn)``;
* a packed word stores element ``i`` in bits ``[i*bits, (i+1)*bits)`` as the
  offset-binary value ``q + 2**(bits-1)``;
* elements inside one word follow increasing index along the packing
  dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import halffloat as hf

PACK_DIMS = ("k", "n")


def qrange(bits: int) -> tuple[int, int]:
    if bits not in (4, 2):
        raise ValueError(f"unsupported weight width {bits}; expected 4 or 2")
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


@dataclass(frozen=True)
class GroupSpec:
    gk: int
    gn: int

    @classmethod
    def parse(cls, text) -> "GroupSpec":
        """Accept ``"32x4"``, ``"g[32,4]"``, ``"g128"`` (= 128x1) or a pair."""
        if isinstance(text, GroupSpec):
            return text
        if isinstance(text, (tuple, list)):
            return cls(int(text[0]), int(text[1]))
        t = str(text).strip().lower().replace(" ", "")
        if t.startswith("g[") and t.endswith("]"):
            gk, gn = t[2:-1].split(",")
            return cls(int(gk), int(gn))
        if t.startswith("g"):
            return cls(int(t[1:]), 1)
        gk, gn = t.split("x")
        return cls(int(gk), int(gn))

    @property
    def size(self) -> int:
        return self.gk * self.gn

    def check(self, k: int, n: int) -> None:
        if self.gk <= 0 or self.gn <= 0:
            raise ValueError(f"group extents must be positive, got {self}")
        if k % self.gk or n % self.gn:
            raise ValueError(f"group {self.gk}x{self.gn} does not tile a {k}x{n} matrix")

    def __str__(self) -> str:
        return f"{self.gk}x{self.gn}"


@dataclass(frozen=True)
class PackSpec:
    bits: int
    dim: str

    def __post_init__(self):
        qrange(self.bits)
        if self.dim not in PACK_DIMS:
            raise ValueError(f"packing dimension must be 'k' or 'n', got {self.dim!r}")

    @property
    def count(self) -> int:
        return 16 // self.bits

    @property
    def offset(self) -> int:
        return 1 << (self.bits - 1)


@dataclass
class QuantizedWeights:
    values: np.ndarray  # int8 [k, n]
    scales: np.ndarray  # uint16 FP16 patterns [k//gk, n//gn]
    bits: int
    group: GroupSpec

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape)

    def scale_at(self, row: int, col: int) -> int:
        return int(self.scales[row // self.group.gk, col // self.group.gn])

    def expanded_scales(self) -> np.ndarray:
        """Scale bits broadcast to the full ``[k, n]`` weight shape."""
        g = self.group
        return np.repeat(np.repeat(self.scales, g.gk, axis=0), g.gn, axis=1)


@dataclass(frozen=True)
class PackedWord:
    raw: int
    origin: tuple[int, int]
    spec: PackSpec

    def unpack(self) -> list[int]:
        return unpack(self)


@dataclass
class PackedWeights:
    """Packed integer weights plus the metadata needed to compute with them."""

    words: np.ndarray  # uint16; [k, n // count] for dim n, [k // count, n] for dim k
    spec: PackSpec
    shape: tuple[int, int]
    scales: np.ndarray
    group: GroupSpec

    @property
    def bits(self) -> int:
        return self.spec.bits

    def word(self, i: int, j: int) -> PackedWord:
        c = self.spec.count
        origin = (i, j * c) if self.spec.dim == "n" else (i * c, j)
        return PackedWord(int(self.words[i, j]), origin, self.spec)

    def unpack_all(self) -> np.ndarray:
        c, bits, off = self.spec.count, self.spec.bits, self.spec.offset
        lanes = [((self.words.astype(np.int32) >> (i * bits)) & ((1 << bits) - 1)) - off
                 for i in range(c)]
        stacked = np.stack(lanes, axis=-1)  # [..., count]
        k, n = self.shape
        if self.spec.dim == "n":
            return stacked.reshape(k, n).astype(np.int8)
        return np.transpose(stacked, (0, 2, 1)).reshape(k, n).astype(np.int8)

    def to_quantized(self) -> QuantizedWeights:
        return QuantizedWeights(self.unpack_all(), self.scales.copy(), self.bits, self.group)


# ---------------------------------------------------------------------------
# quantization


def _to_fp16_bits(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).astype(np.float16).view(np.uint16)


def rtn_quantize(w, bits: int, group) -> QuantizedWeights:
    """Symmetric round-to-nearest quantization with 2-D groups.

    ``scale = max|w| / (2**(bits-1) - 1)`` per group, stored as FP16; the
    integer is ``clamp(rint(w / scale))`` using the stored FP16 scale.  Groups
    whose scale would fall below the smallest normal half (including all-zero
    groups) use that smallest normal.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or 0 in w.shape:
        raise ValueError(f"weights must be a non-empty 2-D [k, n] array, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights contain NaN or infinity")
    g = GroupSpec.parse(group)
    k, n = w.shape
    g.check(k, n)
    lo, hi = qrange(bits)
    blocks = w.reshape(k // g.gk, g.gk, n // g.gn, g.gn)
    amax = np.abs(blocks).max(axis=(1, 3))
    scale_bits = _to_fp16_bits(amax / hi)
    if np.any((scale_bits & 0x7C00) == 0x7C00):
        raise ValueError("group scale exceeds the FP16 range")
    scale_bits = np.maximum(scale_bits, np.uint16(hf.MIN_NORMAL))
    scales = scale_bits.view(np.float16).astype(np.float64)
    full = np.repeat(np.repeat(scales, g.gk, axis=0), g.gn, axis=1)
    q = np.clip(np.rint(w / full), lo, hi).astype(np.int8)
    return QuantizedWeights(q, scale_bits, bits, g)


def dequantize(q: QuantizedWeights) -> np.ndarray:
    """FP16 weights ``fp16(q * scale)``; the product is exact in float64."""
    scales = q.expanded_scales().view(np.float16).astype(np.float64)
    return (q.values.astype(np.float64) * scales).astype(np.float16)


def dequantize_exact(q: QuantizedWeights) -> np.ndarray:
    """Unrounded ``q * scale`` as float64 (exact: at most 15 significant bits)."""
    scales = q.expanded_scales().view(np.float16).astype(np.float64)
    return q.values.astype(np.float64) * scales


# ---------------------------------------------------------------------------
# packing


def pack(q: QuantizedWeights, spec: PackSpec) -> PackedWeights:
    if spec.bits != q.bits:
        raise ValueError(f"pack spec is INT{spec.bits} but weights are INT{q.bits}")
    vals = np.asarray(q.values, dtype=np.int32)
    lo, hi = qrange(q.bits)
    if vals.min() < lo or vals.max() > hi:
        raise ValueError(f"values outside the INT{q.bits} range [{lo}, {hi}]")
    k, n = vals.shape
    c = spec.count
    extent = n if spec.dim == "n" else k
    if extent % c:
        raise ValueError(f"{spec.dim}-extent {extent} is not a multiple of {c} (no padding)")
    biased = (vals + spec.offset).astype(np.uint32)
    if spec.dim == "n":
        lanes = biased.reshape(k, n // c, c)
    else:
        lanes = biased.reshape(k // c, c, n).transpose(0, 2, 1)
    shifts = (np.arange(c, dtype=np.uint32) * spec.bits)
    words = (lanes << shifts).sum(axis=-1).astype(np.uint16)
    return PackedWeights(words, spec, (k, n), q.scales.copy(), q.group)


def pack_lanes(values, bits: int) -> int:
    """Pack one word from signed lane values (element 0 in the low bits)."""
    lo, hi = qrange(bits)
    if len(values) != 16 // bits:
        raise ValueError(f"INT{bits} word holds {16 // bits} values, got {len(values)}")
    raw = 0
    for i, v in enumerate(values):
        if not lo <= v <= hi:
            raise ValueError(f"{v} outside INT{bits} range [{lo}, {hi}]")
        raw |= (v + (1 << (bits - 1))) << (i * bits)
    return raw


def unpack_raw(raw: int, bits: int) -> list[int]:
    off = 1 << (bits - 1)
    mask = (1 << bits) - 1
    return [((raw >> (i * bits)) & mask) - off for i in range(16 // bits)]


def unpack(p: PackedWord) -> list[int]:
    return unpack_raw(p.raw, p.spec.bits)


def biased_lanes(raw: int, bits: int) -> list[int]:
    """Offset-binary lane fields exactly as stored (``q + 2**(bits-1)``)."""
    mask = (1 << bits) - 1
    return [(raw >> (i * bits)) & mask for i in range(16 // bits)]


# ---------------------------------------------------------------------------
# weight file

MAGIC = b"PACQ"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBBBIIII")


def save_weights(path, pw: PackedWeights) -> None:
    """Write the binary weight file (layout documented in docs/weight_format.md)."""
    k, n = pw.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, pw.bits, PACK_DIMS.index(pw.spec.dim),
                          pw.spec.count, 0, k, n, pw.group.gk, pw.group.gn)
    words = pw.words if pw.spec.dim == "n" else pw.words.T
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(pw.scales, dtype="<u2").tobytes())
        f.write(np.ascontiguousarray(words, dtype="<u2").tobytes())


def load_weights(path) -> PackedWeights:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, bits, dim, count, _, k, n, gk, gn = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    spec = PackSpec(bits, PACK_DIMS[dim])
    if count != spec.count:
        raise ValueError(f"{path}: pack count {count} inconsistent with INT{bits}")
    g = GroupSpec(gk, gn)
    g.check(k, n)
    off = _HEADER.size
    ns = (k // gk) * (n // gn)
    scales = np.frombuffer(data, dtype="<u2", count=ns, offset=off).reshape(k // gk, n // gn)
    off += 2 * ns
    nw = k * n // count
    if len(data) != off + 2 * nw:
        raise ValueError(f"{path}: expected {off + 2 * nw} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<u2", count=nw, offset=off)
    if spec.dim == "n":
        words = flat.reshape(k, n // count)
    else:
        words = flat.reshape(n, k // count).T
    return PackedWeights(words.astype(np.uint16).copy(), spec, (k, n),
                         scales.astype(np.uint16).copy(), g)
