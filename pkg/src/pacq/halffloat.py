"""Bit-exact IEEE-754 binary16 arithmetic on raw 16-bit patterns.

Values travel as plain ``int`` bit patterns (0..0xFFFF).  Every operation
computes the exact real result with Python integers and rounds exactly once,
round-to-nearest-even.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from fractions import Fraction

HalfBits = int

BIAS = 15
MANT_BITS = 10
EXP_MAX = 30
HIDDEN = 1 << MANT_BITS
MAX_FINITE = 65504

POS_ZERO = 0x0000
NEG_ZERO = 0x8000
POS_INF = 0x7C00
NEG_INF = 0xFC00
QNAN = 0x7E00
MIN_NORMAL = 0x0400

# smallest subnormal is 2**-24; every finite half is an integer multiple of it
LSB_EXP = -24


class RoundingMode(enum.Enum):
    RNE = "round-to-nearest-even"


ROUNDING = RoundingMode.RNE


@dataclass
class ArithFlags:
    """Event counters shared by every arithmetic unit in the package."""

    overflow: int = 0
    underflow: int = 0
    inexact: int = 0
    invalid: int = 0
    nan_input: int = 0
    inf_input: int = 0
    subnormal_operand: int = 0
    cancellation: int = 0

    def merge(self, other: "ArithFlags") -> "ArithFlags":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["rounding"] = ROUNDING.value
        return d

    def any_special(self) -> bool:
        return bool(self.overflow or self.invalid or self.nan_input or self.inf_input)


class Fp16OverflowError(OverflowError):
    pass


# ---------------------------------------------------------------------------
# field access


def sign_of(h: HalfBits) -> int:
    return (h >> 15) & 1


def exponent_of(h: HalfBits) -> int:
    return (h >> MANT_BITS) & 0x1F


def mantissa_of(h: HalfBits) -> int:
    return h & 0x3FF


def from_fields(sign: int, exponent: int, mantissa: int) -> HalfBits:
    if not (0 <= exponent <= 31 and 0 <= mantissa < HIDDEN and sign in (0, 1)):
        raise ValueError(f"bad FP16 fields s={sign} e={exponent} m={mantissa}")
    return (sign << 15) | (exponent << MANT_BITS) | mantissa


def is_nan(h: HalfBits) -> bool:
    return exponent_of(h) == 31 and mantissa_of(h) != 0


def is_inf(h: HalfBits) -> bool:
    return (h & 0x7FFF) == POS_INF


def is_finite(h: HalfBits) -> bool:
    return exponent_of(h) != 31


def is_zero(h: HalfBits) -> bool:
    return (h & 0x7FFF) == 0


def is_subnormal(h: HalfBits) -> bool:
    return exponent_of(h) == 0 and mantissa_of(h) != 0


def is_normal_or_zero(h: HalfBits) -> bool:
    e = exponent_of(h)
    return 1 <= e <= EXP_MAX or is_zero(h)


def fmt(h: HalfBits) -> str:
    """Human readable ``s|eeeee|mmmmmmmmmm`` form."""
    return f"{sign_of(h)}|{exponent_of(h):05b}|{mantissa_of(h):010b}"


def significand(h: HalfBits) -> tuple[int, int, int]:
    """Split a finite pattern into ``(sign, sig, exp)`` with value ``sig * 2**exp``."""
    e = exponent_of(h)
    m = mantissa_of(h)
    if e == 31:
        raise ValueError(f"non-finite FP16 pattern {h:#06x}")
    if e == 0:
        return sign_of(h), m, LSB_EXP
    return sign_of(h), HIDDEN | m, e - BIAS - MANT_BITS


# ---------------------------------------------------------------------------
# rounding core


def round_pack(sign: int, sig: int, exp: int, flags: ArithFlags | None = None) -> HalfBits:
    """Round ``(-1)**sign * sig * 2**exp`` (sig >= 0, exact) to the nearest half.

    Overflow produces a signed infinity and bumps ``flags.overflow``.
    """
    if sig == 0:
        return sign << 15
    nbits = sig.bit_length()
    top = nbits - 1 + exp
    if top < 1 - BIAS:
        shift = LSB_EXP - exp
    else:
        shift = nbits - (MANT_BITS + 1)
    inexact = False
    if shift > 0:
        q = sig >> shift
        rem = sig & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
        inexact = rem != 0
        if inexact and flags is not None:
            flags.inexact += 1
    else:
        q = sig << -shift
    qexp = exp + shift
    if q == 0:
        if flags is not None:
            flags.underflow += 1
        return sign << 15
    if q >> (MANT_BITS + 1):
        q >>= 1
        qexp += 1
    if q < HIDDEN:
        if flags is not None and inexact:
            flags.underflow += 1
        return (sign << 15) | q
    biased = qexp + MANT_BITS + BIAS
    if biased > EXP_MAX:
        if flags is not None:
            flags.overflow += 1
        return (sign << 15) | POS_INF
    return (sign << 15) | (biased << MANT_BITS) | (q - HIDDEN)


# ---------------------------------------------------------------------------
# conversions


def fp16_decode(h: HalfBits) -> Fraction:
    """Exact rational value of a finite pattern."""
    s, sig, exp = significand(h)
    v = Fraction(sig) * (Fraction(2) ** exp)
    return -v if s else v


def to_float(h: HalfBits) -> float:
    if is_nan(h):
        return math.nan
    if is_inf(h):
        return -math.inf if sign_of(h) else math.inf
    s, sig, exp = significand(h)
    return math.ldexp(-sig if s else sig, exp) if sig else (-0.0 if s else 0.0)


def fp16_encode(value, flags: ArithFlags | None = None, *, strict: bool = False) -> HalfBits:
    """Nearest half to ``value`` (int, float or Fraction), ties to even.

    Values past the FP16 range become signed infinity (flagged); with
    ``strict=True`` they raise :class:`Fp16OverflowError` instead.
    """
    if isinstance(value, float):
        if math.isnan(value):
            return QNAN
        if math.isinf(value):
            return NEG_INF if value < 0 else POS_INF
        sign = 1 if math.copysign(1.0, value) < 0 else 0
        value = Fraction(value)
    else:
        value = Fraction(value)
        sign = 1 if value < 0 else 0
    mag = abs(value)
    if mag == 0:
        return sign << 15
    p, q = mag.numerator, mag.denominator
    # ~40 fractional bits beyond the half precision keep the sticky bit honest
    shift = max(0, 40 + q.bit_length() - p.bit_length())
    sig, rem = divmod(p << shift, q)
    sig = (sig << 1) | (1 if rem else 0)
    tmp = ArithFlags()
    h = round_pack(sign, sig, -shift - 1, tmp)
    if tmp.overflow and strict:
        raise Fp16OverflowError(f"{float(value)!r} exceeds FP16 range (max {MAX_FINITE})")
    if flags is not None:
        flags.merge(tmp)
    return h


def fp16_from_int(v: int) -> HalfBits:
    """Exact encoding of an integer with ``|v| <= 2048``."""
    v = int(v)
    if abs(v) > 2048:
        raise ValueError(f"|{v}| > 2048 cannot be encoded in FP16 without rounding")
    return round_pack(1 if v < 0 else 0, abs(v), 0)


# ---------------------------------------------------------------------------
# arithmetic


def _special_mul(a: HalfBits, b: HalfBits, flags: ArithFlags | None) -> HalfBits | None:
    sign = sign_of(a) ^ sign_of(b)
    if is_nan(a) or is_nan(b):
        if flags is not None:
            flags.nan_input += 1
        return QNAN
    if is_inf(a) or is_inf(b):
        if flags is not None:
            flags.inf_input += 1
        if is_zero(a) or is_zero(b):
            if flags is not None:
                flags.invalid += 1
            return QNAN
        return (sign << 15) | POS_INF
    return None


def fp16_mul(a: HalfBits, b: HalfBits, flags: ArithFlags | None = None) -> HalfBits:
    """Reference FP16 multiplier.

    Stages: sign XOR, biased exponent add, 11x11-bit significand product,
    normalization and a single round-to-nearest-even step.
    """
    special = _special_mul(a, b, flags)
    if special is not None:
        return special
    sign = sign_of(a) ^ sign_of(b)
    _, sig_a, exp_a = significand(a)
    _, sig_b, exp_b = significand(b)
    prod = sig_a * sig_b
    if prod == 0:
        return sign << 15
    # exp_a + exp_b == (e_a + e_b - BIAS) - BIAS - 2*MANT_BITS for normal inputs
    return round_pack(sign, prod, exp_a + exp_b, flags)


def fp16_add(a: HalfBits, b: HalfBits, flags: ArithFlags | None = None) -> HalfBits:
    """Reference FP16 adder: exact aligned sum, one rounding."""
    if is_nan(a) or is_nan(b):
        if flags is not None:
            flags.nan_input += 1
        return QNAN
    if is_inf(a) or is_inf(b):
        if flags is not None:
            flags.inf_input += 1
        if is_inf(a) and is_inf(b) and sign_of(a) != sign_of(b):
            if flags is not None:
                flags.invalid += 1
            return QNAN
        return a if is_inf(a) else b
    sa, ma, ea = significand(a)
    sb, mb, eb = significand(b)
    base = min(ea, eb)
    total = (-ma if sa else ma) << (ea - base)
    total += (-mb if sb else mb) << (eb - base)
    if total == 0:
        # RNE: exact zero sum is +0 unless both addends are -0
        return NEG_ZERO if (sa and sb and ma == 0 and mb == 0) else POS_ZERO
    return round_pack(1 if total < 0 else 0, abs(total), base, flags)


def fp16_neg(h: HalfBits) -> HalfBits:
    return h ^ 0x8000


def ulp(h: HalfBits) -> Fraction:
    """Spacing of halves at the magnitude of ``h``."""
    e = exponent_of(h)
    return Fraction(2) ** ((max(e, 1)) - BIAS - MANT_BITS)


def finite_patterns():
    """All 63488 finite bit patterns."""
    return (h for h in range(1 << 16) if exponent_of(h) != 31)


def normal_or_zero_patterns():
    """All finite patterns with exponent field 1..30, plus both zeros."""
    out = [POS_ZERO, NEG_ZERO]
    for s in (0, 1):
        for e in range(1, EXP_MAX + 1):
            base = (s << 15) | (e << MANT_BITS)
            out.extend(range(base, base + HIDDEN))
    return out
