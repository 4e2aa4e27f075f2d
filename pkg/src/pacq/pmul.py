"""Parallel FP16 x packed-INT multiplier, dot-product unit and fused offset correction.

A signed weight ``b`` is stored biased (``b + 8`` for INT4, ``b + 2`` for
INT2).  Read as an FP16 pattern with exponent field ``11001`` the biased
field is exactly ``b + 1032`` (INT4) or ``b + 1026`` (INT2), so one
activation can be multiplied by every lane of a packed word with a shared
sign and exponent path and a narrow 11-bit x 4-bit significand product per
lane.  The constant is removed afterwards with
``sum(a*(b+off)) - off*sum(a)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from . import halffloat as hf
from .halffloat import ArithFlags, HalfBits
from .quantpack import PackedWord, biased_lanes, qrange

BIASED_EXP_FIELD = 0b11001  # 25: 2**(25-15) == 1024
OFFSETS = {4: 1032, 2: 1026}
LANES = {4: 4, 2: 8}

# exact wide values are integers in units of 2**WIDE_EXP; products and
# activations of normal-or-zero halves are always multiples of 2**-24
WIDE_EXP = hf.LSB_EXP
# fused-correction results carry an extra scale factor: units of 2**-48
CORR_EXP = 2 * hf.LSB_EXP


class OperandError(ValueError):
    """Activation the parallel multiplier cannot consume (subnormal, NaN, Inf)."""


class AccumulatorPolicy(enum.Enum):
    FP16_SEQUENTIAL = "fp16"
    WIDE_EXACT = "wide"

    @classmethod
    def parse(cls, value) -> "AccumulatorPolicy":
        if isinstance(value, cls):
            return value
        return cls(str(value))


@dataclass(frozen=True)
class DpConfig:
    dp_width: int = 4
    dup_factor: int = 2
    fill_latency: int = 3

    def __post_init__(self):
        if self.dp_width not in (4, 8, 16):
            raise ValueError(f"dp_width must be 4, 8 or 16, got {self.dp_width}")
        if self.dup_factor not in (1, 2, 4):
            raise ValueError(f"dup_factor must be 1, 2 or 4, got {self.dup_factor}")
        if self.fill_latency < 0:
            raise ValueError("fill_latency must be nonnegative")


def offset_for(bits: int) -> int:
    try:
        return OFFSETS[bits]
    except KeyError:
        raise ValueError(f"no biased-weight offset for INT{bits}") from None


def encode_biased_weight(b: int, bits: int) -> HalfBits:
    """FP16 pattern of ``b + offset``: exponent 11001, low mantissa bits ``b + 2**(bits-1)``."""
    lo, hi = qrange(bits)
    if not lo <= b <= hi:
        raise ValueError(f"weight {b} outside INT{bits} range [{lo}, {hi}]")
    return (BIASED_EXP_FIELD << hf.MANT_BITS) | (b - lo)


class ParallelProduct(NamedTuple):
    outputs: tuple          # rounded FP16 lane products
    shared_sign: int
    shared_exponent: int    # e_A + 25 - 15, before any per-lane carry
    significands: tuple     # exact lane products: value = sig * 2**scale_exp
    scale_exp: int
    adder_carries: int      # lanes whose 6-bit add carried into the top 5 bits
    exponent_bumps: int     # lanes whose exponent ended above the shared one


def _check_activation(a: HalfBits, flags: ArithFlags | None) -> None:
    if hf.is_normal_or_zero(a):
        return
    if flags is not None:
        if hf.is_subnormal(a):
            flags.subnormal_operand += 1
        elif hf.is_nan(a):
            flags.nan_input += 1
        else:
            flags.inf_input += 1
    kind = "subnormal" if hf.is_subnormal(a) else "non-finite"
    raise OperandError(f"parallel multiplier needs a normal or zero activation; "
                       f"got {kind} {a:#06x} ({hf.fmt(a)})")


def parallel_fpint_mul(a: HalfBits, w, bits: int | None = None,
                       flags: ArithFlags | None = None) -> ParallelProduct:
    """Multiply one FP16 activation by every lane of a packed weight word.

    ``w`` is a :class:`PackedWord` or a raw 16-bit int (then ``bits`` is
    required).  Each lane output is bit-identical to
    ``fp16_mul(a, encode_biased_weight(b, bits))``.
    """
    if isinstance(w, PackedWord):
        if bits is not None and bits != w.spec.bits:
            raise ValueError(f"word is INT{w.spec.bits}, multiplier mode INT{bits}")
        raw, bits = w.raw, w.spec.bits
    else:
        if bits is None:
            raise ValueError("bits is required for a raw word")
        raw = int(w)
    ys = biased_lanes(raw, bits)
    _check_activation(a, flags)

    sign = a >> 15
    e_a = (a >> 10) & 0x1F
    shared_exp = e_a + BIASED_EXP_FIELD - hf.BIAS
    if e_a == 0:
        # zero bypass: the hidden-bit assumption does not hold for a == 0
        zero = sign << 15
        n = len(ys)
        return ParallelProduct((zero,) * n, sign, shared_exp, (0,) * n, 0, 0, 0)

    sig_a = hf.HIDDEN | (a & 0x3FF)
    hi5 = sig_a >> 6
    lo6 = sig_a & 0x3F
    outs = []
    sigs = []
    carries = bumps = 0
    for y in ys:
        i = sig_a * y                  # 11b x 4b partial product
        s6 = lo6 + (i >> 10)           # 6-bit add: upper bits of i onto A's 6 LSBs
        c = s6 >> 6
        carries += c
        full = ((((hi5 + c) << 6) | (s6 & 0x3F)) << 10) | (i & 0x3FF)
        sigs.append(full)
        e = shared_exp
        if full >> 21:                 # product reached [2, 4): one-bit normalize
            q, rem, half = full >> 11, full & 0x7FF, 0x400
            e += 1
        else:
            q, rem, half = full >> 10, full & 0x3FF, 0x200
        if rem > half or (rem == half and q & 1):
            q += 1
            if q == 0x800:
                q = 0x400
                e += 1
        if rem and flags is not None:
            flags.inexact += 1
        if e != shared_exp:
            bumps += 1
        if e > hf.EXP_MAX:
            if flags is not None:
                flags.overflow += 1
            outs.append((sign << 15) | hf.POS_INF)
        else:
            outs.append((sign << 15) | (e << 10) | (q - hf.HIDDEN))
    return ParallelProduct(tuple(outs), sign, shared_exp, tuple(sigs),
                           e_a - hf.BIAS - hf.MANT_BITS, carries, bumps)


def products_per_cycle(bits: int) -> int:
    """Multiplier throughput: 1 for the FP16 baseline, one product per lane otherwise."""
    if bits == 16:
        return 1
    return LANES[bits]


# ---------------------------------------------------------------------------
# dot-product unit


def wide_units(sig: int, exp: int) -> int:
    """Exact value ``sig * 2**exp`` in accumulator units (exp >= WIDE_EXP)."""
    return sig << (exp - WIDE_EXP)


def activation_units(a: HalfBits) -> int:
    s, sig, exp = hf.significand(a)
    u = sig << (exp - WIDE_EXP)
    return -u if s else u


class DpResult(NamedTuple):
    lanes: list        # per-lane sum(a * (b + off)): wide units or FP16 bits
    sum_a: int         # sum(a): wide units or FP16 bits


def parallel_dp(a_vec: Sequence[HalfBits], words: Sequence, cfg: DpConfig,
                acc=AccumulatorPolicy.WIDE_EXACT, bits: int | None = None,
                acc_in=None, sum_a_in=None, flags: ArithFlags | None = None) -> DpResult:
    """One dot-product issue: ``lanes[j] = sum_k a_k * (b_kj + off)`` plus ``sum(a)``.

    Under ``WIDE_EXACT`` both sums are exact integers in units of ``2**-24``
    fed by the multiplier's unrounded products.  Under ``FP16_SEQUENTIAL``
    the rounded lane products are added left to right with an FP16 round
    after every add.  ``acc_in``/``sum_a_in`` chain partial sums across issues.
    """
    acc = AccumulatorPolicy.parse(acc)
    if len(a_vec) != cfg.dp_width or len(words) != cfg.dp_width:
        raise ValueError(f"DP-{cfg.dp_width} takes {cfg.dp_width} activations and words, "
                         f"got {len(a_vec)} and {len(words)}")
    if bits is None:
        bits = words[0].spec.bits
    nl = LANES[bits]
    wide = acc is AccumulatorPolicy.WIDE_EXACT
    if wide:
        lanes = list(acc_in) if acc_in is not None else [0] * nl
        sum_a = sum_a_in if sum_a_in is not None else 0
    else:
        lanes = list(acc_in) if acc_in is not None else [hf.POS_ZERO] * nl
        sum_a = sum_a_in if sum_a_in is not None else hf.POS_ZERO
    for a, w in zip(a_vec, words):
        p = parallel_fpint_mul(a, w, bits, flags)
        if wide:
            if p.significands[0] or any(p.significands):
                shift = p.scale_exp - WIDE_EXP
                for j, s in enumerate(p.significands):
                    lanes[j] += -(s << shift) if p.shared_sign else (s << shift)
            sum_a += activation_units(a)
        else:
            for j, o in enumerate(p.outputs):
                lanes[j] = hf.fp16_add(lanes[j], o, flags)
            sum_a = hf.fp16_add(sum_a, a, flags)
    return DpResult(lanes, sum_a)


# ---------------------------------------------------------------------------
# fused offset correction


def correction_exact(sum_ab: int, sum_a: int, scale: HalfBits, bits: int) -> int:
    """``scale * (sum_ab - off * sum_a)`` in units of ``2**CORR_EXP``, exact."""
    s, sig, exp = hf.significand(scale)
    diff = sum_ab - offset_for(bits) * sum_a
    v = (diff * sig) << (exp - hf.LSB_EXP)
    return -v if s else v


def round_wide(units: int, exp: int, flags: ArithFlags | None = None) -> HalfBits:
    return hf.round_pack(1 if units < 0 else 0, abs(units), exp, flags)


def fused_correct(sum_ab, sum_a, scale: HalfBits, bits: int,
                  acc=AccumulatorPolicy.WIDE_EXACT, flags: ArithFlags | None = None,
                  min_bits: int = 4) -> HalfBits:
    """Remove the weight offset and apply the group scale.

    Wide-exact inputs give ``round(scale * (sum_ab - off * sum_a))`` with one
    rounding.  FP16 inputs run the three general-core steps (multiply by the
    offset, subtract, scale), each rounded; a result keeping fewer than
    ``min_bits`` significant bits of ``sum_ab`` counts as a cancellation.
    """
    acc = AccumulatorPolicy.parse(acc)
    if acc is AccumulatorPolicy.WIDE_EXACT:
        return round_wide(correction_exact(sum_ab, sum_a, scale, bits), CORR_EXP, flags)
    off = hf.fp16_from_int(offset_for(bits))
    t = hf.fp16_mul(sum_a, off, flags)
    if flags is not None and hf.is_finite(sum_ab) and hf.is_finite(t) and not hf.is_zero(sum_ab):
        gap = abs(hf.fp16_decode(sum_ab) - hf.fp16_decode(t))
        if gap < (1 << min_bits) * hf.ulp(sum_ab):
            flags.cancellation += 1
    d = hf.fp16_add(sum_ab, hf.fp16_neg(t), flags)
    return hf.fp16_mul(d, scale, flags)


# ---------------------------------------------------------------------------
# timing


def dp_cycles(m: int, n: int, k: int, bits: int, cfg: DpConfig = DpConfig()) -> int:
    """Cycles for one DP unit to produce an ``m x n`` output block over depth ``k``.

    ``n`` counts weight columns for the FP16 path and packed words otherwise,
    so a packed issue yields ``m * n * lanes`` outputs.  Each output needs
    ``ceil(k / dp_width)`` adder-tree passes; the tree retires one pass per
    cycle (FP16) or ``min(dup_factor, lanes)`` passes per cycle (packed).
    """
    passes = math.ceil(k / cfg.dp_width)
    if bits == 16:
        total, per_cycle = m * n * passes, 1
    else:
        total = m * n * LANES[bits] * passes
        per_cycle = min(cfg.dup_factor, LANES[bits])
    return cfg.fill_latency + math.ceil(total / per_cycle)


# ---------------------------------------------------------------------------
# exhaustive verification


@dataclass
class LaneVerifyReport:
    bits: int
    cases: int = 0
    mismatches: int = 0
    adder_carries: int = 0
    exponent_bumps: int = 0
    overflow_lanes: int = 0
    examples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.mismatches == 0


def verify_lanes(bits: int, activations=None, max_examples: int = 10) -> LaneVerifyReport:
    """Compare every multiplier lane against the reference FP16 multiplier."""
    lo, hi = qrange(bits)
    nl = LANES[bits]
    values = list(range(lo, hi + 1))
    # pack every weight value; INT2 words repeat the four values across 8 lanes
    words = []
    for start in range(0, len(values), nl):
        lane_vals = [values[(start + i) % len(values)] for i in range(nl)]
        raw = 0
        for i, v in enumerate(lane_vals):
            raw |= (v - lo) << (i * bits)
        words.append((raw, lane_vals))
    refs = {v: encode_biased_weight(v, bits) for v in values}
    mul = hf.fp16_mul
    rep = LaneVerifyReport(bits)
    if activations is None:
        activations = hf.normal_or_zero_patterns()
    for a in activations:
        for raw, lane_vals in words:
            p = parallel_fpint_mul(a, raw, bits)
            rep.adder_carries += p.adder_carries
            rep.exponent_bumps += p.exponent_bumps
            for v, got in zip(lane_vals, p.outputs):
                want = mul(a, refs[v])
                rep.cases += 1
                if got != want:
                    rep.mismatches += 1
                    if len(rep.examples) < max_examples:
                        rep.examples.append((a, v, got, want))
                elif hf.is_inf(got):
                    rep.overflow_lanes += 1
    return rep
