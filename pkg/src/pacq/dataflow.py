"""Warp/octet tile-level simulator for the three GEMM flows.

Counting model (per ``m16n16k16`` warp instruction, default DP-4):

* Octet ``o`` owns output rows ``[4o, 4o+4)`` across all 16 columns.  Each
  octet has two thread groups (TGs) of four threads; TG ``t`` owns rows
  ``4o+2t, 4o+2t+1`` and drives one DP unit.
* An A tile is ``2 x dp_width`` FP16 per TG.  A B tile is ``dp_width x 4``
  containers (FP16 values or packed words), clipped to the instruction.
* RF traffic is counted in 32-bit registers.  A C tile is read from the RF
  only when it already holds a partial sum and written whenever it leaves
  the DP accumulators.
* Each TG's A buffer holds ``HwConfig.a_slots`` tiles (LRU).  Replacing a
  tile that is referenced again later in the same instruction is an
  eviction and stalls that TG for ``eviction_stall_cycles``.
* Compute cycles per B-tile pairing come from :func:`pmul.dp_cycles`; the
  two TGs of an octet and the four octets run in parallel.

Flows:

``dequant``  weight-stationary tile movement over FP16 B tiles (after
             general-core unpack/dequant, charged per element).
``kpack``    B packed along k; one B tile spans ``dp_width * lanes`` k
             values, so each tile needs one strided A fetch per lane and
             runs element-serially through the FP16 datapath.
``npack``    B packed along n, output-stationary tile movement; one A fetch
             feeds every lane through the parallel multiplier.
"""

from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from . import halffloat as hf
from . import pmul
from .halffloat import ArithFlags
from .pmul import AccumulatorPolicy, DpConfig
from .quantpack import PackedWeights, QuantizedWeights, dequantize

WARP_TILE = 16
OCTETS = 4
TGS_PER_OCTET = 2
ROWS_PER_TG = 2
OCTETS_PER_TC = 2


class FlowKind(enum.Enum):
    DEQUANT = "dequant"
    KPACK = "kpack"
    NPACK = "npack"

    @classmethod
    def parse(cls, value) -> "FlowKind":
        if isinstance(value, cls):
            return value
        aliases = {"standard": "dequant", "k": "kpack", "n": "npack", "pacq": "npack"}
        v = str(value).lower()
        return cls(aliases.get(v, v))

    @property
    def pack_dim(self) -> str | None:
        return {"kpack": "k", "npack": "n"}.get(self.value)


@dataclass(frozen=True)
class GemmShape:
    m: int
    n: int
    k: int

    def __post_init__(self):
        for name in ("m", "n", "k"):
            v = getattr(self, name)
            if v <= 0 or v % WARP_TILE:
                raise ValueError(f"{name}={v} must be a positive multiple of {WARP_TILE}")

    @classmethod
    def parse(cls, text) -> "GemmShape":
        """``"16x16x16"`` (MxNxK) or ``"m16n4096k4096"``."""
        if isinstance(text, GemmShape):
            return text
        t = str(text).strip().lower()
        mt = re.fullmatch(r"m(\d+)n(\d+)k(\d+)", t)
        if mt:
            return cls(*map(int, mt.groups()))
        parts = t.split("x")
        if len(parts) != 3:
            raise ValueError(f"cannot parse shape {text!r}; use MxNxK or mXnYkZ")
        return cls(*map(int, parts))

    def __str__(self) -> str:
        return f"m{self.m}n{self.n}k{self.k}"

    @property
    def instructions(self) -> int:
        return (self.m // WARP_TILE) * (self.n // WARP_TILE) * (self.k // WARP_TILE)


@dataclass(frozen=True)
class HwConfig:
    buffer_bits: int = 3072         # per operand buffer; two per tensor core
    reg_bits: int = 32
    dp_units: int = 4               # DP units per tensor core
    a_slots: int = 2                # A tiles per TG buffer (double buffered)
    dp: DpConfig = DpConfig()
    acc: AccumulatorPolicy = AccumulatorPolicy.WIDE_EXACT
    dequant_cycles_per_element: float = 1.0
    eviction_stall_cycles: int = 1
    warp_size: int = 32

    def __post_init__(self):
        if self.reg_bits % 16:
            raise ValueError("register width must be a multiple of 16 bits")
        if self.a_slots < 1:
            raise ValueError("a_slots must be at least 1")

    @property
    def effective_a_slots(self) -> int:
        """A-buffer depth per TG after the capacity check."""
        tile_bits = ROWS_PER_TG * self.dp.dp_width * 16
        groups = OCTETS_PER_TC * TGS_PER_OCTET
        fit = self.buffer_bits // (groups * tile_bits)
        if fit < 1:
            raise ValueError(f"{self.buffer_bits}-bit buffer cannot hold one A tile per TG")
        return min(self.a_slots, fit)


@dataclass
class FlowCounters:
    rf_reads_A: int = 0
    rf_reads_B: int = 0
    rf_reads_C: int = 0
    rf_writes_C: int = 0
    rf_dequant: int = 0          # general-core packed-B reads + FP16 B writes
    fetch_instructions: int = 0
    fetch_instructions_A: int = 0
    fetch_instructions_B: int = 0
    buffer_evictions: int = 0
    buffer_accesses: int = 0
    l1_reads: int = 0
    fp16_mults: int = 0
    pmul_issues: int = 0
    fp16_adds: int = 0
    acc_adds: int = 0
    dequant_ops: int = 0
    correction_ops: int = 0
    dp_cycles: int = 0
    stall_cycles: int = 0
    dequant_cycles: int = 0
    cycles: int = 0

    @property
    def rf_total(self) -> int:
        return (self.rf_reads_A + self.rf_reads_B + self.rf_reads_C + self.rf_writes_C
                + self.rf_dequant)

    @property
    def rf_total_without_c(self) -> int:
        return self.rf_reads_A + self.rf_reads_B + self.rf_dequant

    def __add__(self, other: "FlowCounters") -> "FlowCounters":
        return FlowCounters(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                               for f in fields(self)})

    def scaled(self, times: int) -> "FlowCounters":
        return FlowCounters(**{f.name: getattr(self, f.name) * times for f in fields(self)})

    def as_dict(self) -> dict:
        d = asdict(self)
        d["rf_total"] = self.rf_total
        d["rf_total_without_c"] = self.rf_total_without_c
        return d


# ---------------------------------------------------------------------------
# tile mapping


class OctetTiles(NamedTuple):
    octet: int
    rows: tuple          # (start, stop) output rows
    tg_rows: tuple       # ((start, stop), (start, stop))
    c_tiles: tuple       # 4x4 C tiles as (row0, col0)
    dp_units: tuple      # global DP ids (tensor core * dp_units + local)


class WarpStep(NamedTuple):
    index: int
    m0: int
    n0: int
    k0: int


@dataclass(frozen=True)
class OctetMap:
    octets: tuple
    schedule: tuple

    @property
    def length(self) -> int:
        return len(self.schedule)


def map_octets() -> tuple:
    out = []
    for o in range(OCTETS):
        r0 = 4 * o
        tgs = tuple((r0 + ROWS_PER_TG * t, r0 + ROWS_PER_TG * (t + 1))
                    for t in range(TGS_PER_OCTET))
        tiles = tuple((r0, c) for c in range(0, WARP_TILE, 4))
        tc = o // OCTETS_PER_TC
        local = (o % OCTETS_PER_TC) * TGS_PER_OCTET
        dps = tuple(tc * 4 + local + t for t in range(TGS_PER_OCTET))
        out.append(OctetTiles(o, (r0, r0 + 4), tgs, tiles, dps))
    return tuple(out)


def map_warp(shape) -> OctetMap:
    """Octet assignment for one instruction plus the outer instruction grid.

    The grid runs k outermost and n innermost.
    """
    shape = GemmShape.parse(shape)
    steps = []
    idx = 0
    for k0 in range(0, shape.k, WARP_TILE):
        for m0 in range(0, shape.m, WARP_TILE):
            for n0 in range(0, shape.n, WARP_TILE):
                steps.append(WarpStep(idx, m0, n0, k0))
                idx += 1
    return OctetMap(map_octets(), tuple(steps))


# ---------------------------------------------------------------------------
# per-instruction event model


def _regs(elements: int, bits: int, hw: HwConfig) -> int:
    return math.ceil(elements * bits / hw.reg_bits)


class _ABuffer:
    """LRU A-tile buffer of one thread group with future-use eviction accounting."""

    def __init__(self, slots: int, refs: list):
        self.slots = slots
        self.refs = refs
        self.pos = 0
        self.resident: list = []

    def touch(self, tile) -> tuple[bool, object]:
        """Reference the next tile; returns ``(miss, evicted_tile_with_future_use)``."""
        assert self.refs[self.pos] == tile
        self.pos += 1
        if tile in self.resident:
            self.resident.remove(tile)
            self.resident.append(tile)
            return False, None
        victim = None
        if len(self.resident) >= self.slots:
            old = self.resident.pop(0)
            if old in self.refs[self.pos:]:
                victim = old
        self.resident.append(tile)
        return True, victim


def _instruction_plan(flow: FlowKind, bits: int, hw: HwConfig):
    """Ordered pairings for one octet: ``(a_tiles, b_regs, c_tile, c_regs, dp_cycles, buf_reads)``.

    ``a_tiles`` are per-TG tile keys with their register counts; the same plan
    applies to every octet and both TGs.
    """
    w = hw.dp.dp_width
    plan = []
    if flow is FlowKind.DEQUANT:
        for kt in range(WARP_TILE // w):
            for nt in range(4):
                a = (("A", kt), _regs(ROWS_PER_TG * w, 16, hw))
                b_regs = _regs(w * 4, 16, hw)
                cyc = pmul.dp_cycles(ROWS_PER_TG, 4, w, 16, hw.dp)
                plan.append(([a], b_regs, ("C", nt), _regs(16, 16, hw), cyc))
    elif flow is FlowKind.NPACK:
        lanes = pmul.LANES[bits]
        words_row = WARP_TILE // lanes
        wn = min(4, words_row)
        for nt in range(words_row // wn):
            for kt in range(WARP_TILE // w):
                a = (("A", kt), _regs(ROWS_PER_TG * w, 16, hw))
                b_regs = _regs(w * wn, 16, hw)
                cyc = pmul.dp_cycles(ROWS_PER_TG, wn, w, bits, hw.dp)
                # output stationary: C leaves the accumulators after the last k tile
                last = kt == WARP_TILE // w - 1
                c_regs = _regs(4 * wn * lanes, 16, hw) if last else 0
                plan.append(([a], b_regs, ("C", nt), c_regs, cyc))
    else:
        lanes = pmul.LANES[bits]
        rows = min(w, WARP_TILE // lanes)      # word rows per B tile
        span = rows * lanes
        for nt in range(4):
            for kt in range(WARP_TILE // span):
                a = [(("A", kt, lane), _regs(ROWS_PER_TG * rows, 16, hw)) for lane in range(lanes)]
                b_regs = _regs(rows * 4, 16, hw)
                cyc = pmul.dp_cycles(ROWS_PER_TG, 4, span, 16, hw.dp)
                plan.append((a, b_regs, ("C", nt), _regs(16, 16, hw), cyc))
    return plan


@dataclass
class _InstrResult:
    counters: FlowCounters
    events: list = field(default_factory=list)


def _simulate_instruction(flow: FlowKind, bits: int, hw: HwConfig, first_k: bool,
                          trace: bool = False, tag: str = "w0") -> _InstrResult:
    plan = _instruction_plan(flow, bits, hw)
    slots = hw.effective_a_slots
    c = FlowCounters()
    events = []
    per_octet_cycles = []
    a_refs = [t for step in plan for t, _ in step[0]]
    for oct_ in map_octets():
        bufs = [_ABuffer(slots, a_refs) for _ in range(TGS_PER_OCTET)]
        partial = set()
        cycles = 0
        stalls = [0] * TGS_PER_OCTET
        for a_tiles, b_regs, c_tile, c_regs, cyc in plan:
            c.fetch_instructions += 1
            c.fetch_instructions_B += 1
            c.rf_reads_B += b_regs
            c.buffer_accesses += b_regs
            if trace:
                events.append(f"{tag} o{oct_.octet} - fetchB regs={b_regs}")
            for tile, regs in a_tiles:
                for t, buf in enumerate(bufs):
                    miss, victim = buf.touch(tile)
                    if miss:
                        c.fetch_instructions += 1
                        c.fetch_instructions_A += 1
                        c.rf_reads_A += regs
                        c.buffer_accesses += regs
                        if trace:
                            events.append(f"{tag} o{oct_.octet} t{t} fetchA tile={_key(tile)} regs={regs}")
                    if victim is not None:
                        c.buffer_evictions += 1
                        stalls[t] += hw.eviction_stall_cycles
                        if trace:
                            events.append(f"{tag} o{oct_.octet} t{t} evictA tile={_key(victim)}")
                    # DP reads the A operand out of the buffer; both TGs read B
                    c.buffer_accesses += regs + b_regs
            if c_regs:
                if c_tile in partial or not first_k:
                    c.rf_reads_C += c_regs
                partial.add(c_tile)
                c.rf_writes_C += c_regs
            cycles += cyc
            if trace:
                events.append(f"{tag} o{oct_.octet} - dp tile={_key(c_tile)} cycles={cyc}")
        per_octet_cycles.append((cycles + max(stalls), cycles, max(stalls)))
    # octets run in parallel; the slowest one sets the instruction time
    c.cycles, c.dp_cycles, c.stall_cycles = max(per_octet_cycles)
    _charge_compute(c, flow, bits, hw)
    return _InstrResult(c, events)


def _key(tile) -> str:
    return ":".join(str(x) for x in tile)


def _charge_compute(c: FlowCounters, flow: FlowKind, bits: int, hw: HwConfig) -> None:
    macs = WARP_TILE ** 3
    elems_b = WARP_TILE * WARP_TILE
    c.fp16_adds += macs
    c.l1_reads += _regs(elems_b, 16, hw)                  # A fragment
    if flow is FlowKind.DEQUANT:
        c.fp16_mults += macs
        c.l1_reads += _regs(elems_b, bits, hw)
        if bits != 16:
            c.dequant_ops += elems_b
            c.rf_dequant += _regs(elems_b, bits, hw) + _regs(elems_b, 16, hw)
            dq = math.ceil(elems_b * hw.dequant_cycles_per_element / hw.warp_size)
            c.dequant_cycles += dq
            c.cycles += dq
    else:
        c.l1_reads += _regs(elems_b, bits, hw)
        if flow is FlowKind.NPACK:
            c.pmul_issues += macs // pmul.LANES[bits]
        else:
            c.fp16_mults += macs
        # small accumulator: every A element fetched into a buffer is summed once
        c.acc_adds += c.rf_reads_A * (hw.reg_bits // 16)


@functools.lru_cache(maxsize=256)
def _instruction_counters(flow: FlowKind, bits: int, hw: HwConfig, first_k: bool) -> FlowCounters:
    return _simulate_instruction(flow, bits, hw, first_k).counters


def simulate_counters(shape, flow, bits: int, hw: HwConfig = HwConfig(), group_k: int = 32,
                      trace: list | None = None) -> FlowCounters:
    """Counters for a whole GEMM: per-instruction model summed over the grid.

    Instructions differ only in whether their C tiles already hold partial
    sums (every k-block after the first).  Pass a list as ``trace`` to collect
    the event log; that walks every instruction.
    """
    shape = GemmShape.parse(shape)
    flow = FlowKind.parse(flow)
    _check_bits(flow, bits)
    mn = (shape.m // WARP_TILE) * (shape.n // WARP_TILE)
    kb = shape.k // WARP_TILE
    if trace is not None:
        total = FlowCounters()
        for step in map_warp(shape).schedule:
            r = _simulate_instruction(flow, bits, hw, step.k0 == 0, True, f"w{step.index}")
            trace.extend(r.events)
            total = total + r.counters
    else:
        first = _instruction_counters(flow, bits, hw, True)
        rest = _instruction_counters(flow, bits, hw, False)
        total = first.scaled(mn) + rest.scaled(mn * (kb - 1))
    if flow is not FlowKind.DEQUANT:
        # general core: offset multiply, subtract, scale per output per k-group
        total.correction_ops = 3 * shape.m * shape.n * math.ceil(shape.k / group_k)
    return total


def _check_bits(flow: FlowKind, bits: int) -> None:
    allowed = (16, 4, 2) if flow is FlowKind.DEQUANT else (4, 2)
    if bits not in allowed:
        raise ValueError(f"{flow.value} flow supports weight widths {allowed}, got {bits}")


# ---------------------------------------------------------------------------
# functional GEMM


class SimResult(NamedTuple):
    C: np.ndarray             # uint16 FP16 patterns [m, n]
    counters: FlowCounters
    flags: ArithFlags


def _as_half_bits(A) -> np.ndarray:
    A = np.asarray(A)
    if A.dtype == np.uint16:
        return A
    if A.dtype == np.float16:
        return A.view(np.uint16)
    return A.astype(np.float64).astype(np.float16).view(np.uint16)


def simulate(shape, flow, hw: HwConfig = HwConfig(), A=None, B=None, bits: int | None = None,
             trace: list | None = None, functional: bool = True) -> SimResult:
    """Run one GEMM flow: functional output plus counters.

    ``A`` is ``[m, k]`` (FP16 patterns or floats).  ``B`` is FP16 ``[k, n]``
    for ``dequant`` (or a :class:`PackedWeights`, dequantized on the general
    core) and a :class:`PackedWeights` whose pack dimension matches the flow
    otherwise.
    """
    shape = GemmShape.parse(shape)
    flow = FlowKind.parse(flow)
    flags = ArithFlags()
    group_k = 32
    if isinstance(B, PackedWeights):
        if tuple(B.shape) != (shape.k, shape.n):
            raise ValueError(f"weights are {B.shape}, shape needs ({shape.k}, {shape.n})")
        if flow is not FlowKind.DEQUANT and B.spec.dim != flow.pack_dim:
            raise ValueError(f"{flow.value} flow needs weights packed along "
                             f"{flow.pack_dim}, got {B.spec.dim}")
        if bits is not None and bits != B.bits:
            raise ValueError(f"bits={bits} but weights are INT{B.bits}")
        bits = B.bits
        group_k = B.group.gk
    elif flow is not FlowKind.DEQUANT and B is not None:
        raise ValueError(f"{flow.value} flow needs PackedWeights, got {type(B).__name__}")
    if bits is None:
        bits = 16 if flow is FlowKind.DEQUANT else 4
    counters = simulate_counters(shape, flow, bits, hw, group_k, trace)
    if not functional or A is None or B is None:
        return SimResult(None, counters, flags)
    A = _as_half_bits(A)
    if A.shape != (shape.m, shape.k):
        raise ValueError(f"A is {A.shape}, shape needs ({shape.m}, {shape.k})")
    if flow is FlowKind.DEQUANT:
        if isinstance(B, PackedWeights):
            B = dequantize(B.to_quantized())
        Bh = _as_half_bits(B)
        C = _gemm_fp16(A, Bh, hw, flags)
    elif flow is FlowKind.NPACK:
        C = _gemm_npack(A, B, hw, flags)
    else:
        C = _gemm_kpack(A, B, hw, flags)
    return SimResult(C, counters, flags)


def _gemm_fp16(A, B, hw, flags) -> np.ndarray:
    m, k = A.shape
    n = B.shape[1]
    C = np.zeros((m, n), dtype=np.uint16)
    a_rows = [[int(x) for x in row] for row in A]
    b_cols = [[int(x) for x in B[:, j]] for j in range(n)]
    if hw.acc is AccumulatorPolicy.WIDE_EXACT:
        a_split = [[hf.significand(x) for x in row] for row in a_rows]
        b_split = [[hf.significand(x) for x in col] for col in b_cols]
        for i in range(m):
            for j in range(n):
                tot = 0
                for (sa, ma, ea), (sb, mb, eb) in zip(a_split[i], b_split[j]):
                    p = (ma * mb) << (ea + eb - 2 * hf.LSB_EXP)
                    tot += -p if sa ^ sb else p
                C[i, j] = pmul.round_wide(tot, 2 * hf.LSB_EXP, flags)
        return C
    for i in range(m):
        for j in range(n):
            s = hf.POS_ZERO
            for a, b in zip(a_rows[i], b_cols[j]):
                s = hf.fp16_add(s, hf.fp16_mul(a, b, flags), flags)
            C[i, j] = s
    return C


def _finish(partials_wide, partials_fp16, hw, flags):
    if hw.acc is AccumulatorPolicy.WIDE_EXACT:
        return pmul.round_wide(sum(partials_wide), pmul.CORR_EXP, flags)
    s = hf.POS_ZERO
    for p in partials_fp16:
        s = hf.fp16_add(s, p, flags)
    return s


def _gemm_npack(A, pw: PackedWeights, hw: HwConfig, flags) -> np.ndarray:
    m, k = A.shape
    n = pw.shape[1]
    bits = pw.bits
    lanes = pmul.LANES[bits]
    gk, gn = pw.group.gk, pw.group.gn
    w = hw.dp.dp_width
    acc = hw.acc
    wide = acc is AccumulatorPolicy.WIDE_EXACT
    words = pw.words
    C = np.zeros((m, n), dtype=np.uint16)
    for i in range(m):
        arow = [int(x) for x in A[i]]
        for jw in range(n // lanes):
            col0 = jw * lanes
            acc_fp = [[] for _ in range(lanes)]
            corr_wide = [[] for _ in range(lanes)]
            for g0 in range(0, k, gk):
                lane_sums = None
                sum_a = None
                for c0 in range(g0, g0 + gk, w):
                    c1 = min(c0 + w, g0 + gk)
                    a_chunk = arow[c0:c1]
                    w_chunk = [int(words[r, jw]) for r in range(c0, c1)]
                    pad = w - len(a_chunk)
                    if pad:
                        a_chunk += [hf.POS_ZERO] * pad
                        w_chunk += [0] * pad
                    lane_sums, sum_a = pmul.parallel_dp(a_chunk, w_chunk, hw.dp, acc, bits,
                                                        lane_sums, sum_a, flags)
                for j in range(lanes):
                    scale = int(pw.scales[g0 // gk, (col0 + j) // gn])
                    if wide:
                        corr_wide[j].append(pmul.correction_exact(lane_sums[j], sum_a, scale, bits))
                    else:
                        acc_fp[j].append(pmul.fused_correct(lane_sums[j], sum_a, scale, bits,
                                                            acc, flags))
            for j in range(lanes):
                C[i, col0 + j] = _finish(corr_wide[j], acc_fp[j], hw, flags)
    return C


def _gemm_kpack(A, pw: PackedWeights, hw: HwConfig, flags) -> np.ndarray:
    """Element-serial FP16 datapath over k-packed words (one lane per product)."""
    m, k = A.shape
    n = pw.shape[1]
    bits = pw.bits
    lanes = pmul.LANES[bits]
    gk, gn = pw.group.gk, pw.group.gn
    wide = hw.acc is AccumulatorPolicy.WIDE_EXACT
    words = pw.words
    # biased FP16 weight per (k, n), read lane by lane from the packed words
    wbits = np.zeros((k, n), dtype=np.int64)
    mask = (1 << bits) - 1
    for r in range(k // lanes):
        for lane in range(lanes):
            wbits[r * lanes + lane] = (words[r].astype(np.int64) >> (lane * bits)) & mask
    wbits |= pmul.BIASED_EXP_FIELD << hf.MANT_BITS
    C = np.zeros((m, n), dtype=np.uint16)
    for i in range(m):
        arow = [int(x) for x in A[i]]
        for x in arow:
            pmul._check_activation(x, flags)
        a_units = [pmul.activation_units(x) for x in arow]
        for j in range(n):
            col = [int(x) for x in wbits[:, j]]
            parts_w, parts_f = [], []
            for g0 in range(0, k, gk):
                scale = int(pw.scales[g0 // gk, j // gn])
                if wide:
                    sab = 0
                    for kk in range(g0, g0 + gk):
                        # a * (1024 + y) exactly, in 2**-24 units
                        sab += a_units[kk] * ((col[kk] & 0x3FF) | hf.HIDDEN)
                    sa = sum(a_units[g0:g0 + gk])
                    parts_w.append(pmul.correction_exact(sab, sa, scale, bits))
                else:
                    sab = hf.POS_ZERO
                    sa = hf.POS_ZERO
                    for kk in range(g0, g0 + gk):
                        sab = hf.fp16_add(sab, hf.fp16_mul(arow[kk], col[kk], flags), flags)
                        sa = hf.fp16_add(sa, arow[kk], flags)
                    parts_f.append(pmul.fused_correct(sab, sa, scale, bits,
                                                      AccumulatorPolicy.FP16_SEQUENTIAL, flags))
            C[i, j] = _finish(parts_w, parts_f, hw, flags)
    return C


# ---------------------------------------------------------------------------
# reference and comparison


def reference_gemm(A, q: QuantizedWeights, exact_weights: bool = True) -> np.ndarray:
    """Exact ``A @ W`` rounded once to FP16.

    ``exact_weights`` uses ``q * scale`` unrounded; otherwise the FP16
    dequantized weights.
    """
    from fractions import Fraction

    A = _as_half_bits(A)
    if exact_weights:
        sc = q.expanded_scales()
        W = [[Fraction(int(q.values[r, c])) * hf.fp16_decode(int(sc[r, c]))
              for c in range(q.shape[1])] for r in range(q.shape[0])]
    else:
        D = dequantize(q).view(np.uint16)
        W = [[hf.fp16_decode(int(D[r, c])) for c in range(D.shape[1])] for r in range(D.shape[0])]
    m, k = A.shape
    n = q.shape[1]
    Af = [[hf.fp16_decode(int(x)) for x in row] for row in A]
    C = np.zeros((m, n), dtype=np.uint16)
    for i in range(m):
        for j in range(n):
            C[i, j] = hf.fp16_encode(sum(Af[i][kk] * W[kk][j] for kk in range(k)))
    return C


FLOWS = (FlowKind.DEQUANT, FlowKind.KPACK, FlowKind.NPACK)


def compare_flows(shape, hw: HwConfig = HwConfig(), bits: int = 4, group_k: int = 32,
                  dequant_bits: int | None = None) -> dict:
    """Counters of all three flows and their ratios to ``dequant``.

    The dequant flow reads the same ``bits``-wide packed weights from L1
    unless ``dequant_bits`` overrides it (16 = plain W16A16).
    """
    shape = GemmShape.parse(shape)
    db = bits if dequant_bits is None else dequant_bits
    results = {
        FlowKind.DEQUANT.value: simulate_counters(shape, FlowKind.DEQUANT, db, hw, group_k),
        FlowKind.KPACK.value: simulate_counters(shape, FlowKind.KPACK, bits, hw, group_k),
        FlowKind.NPACK.value: simulate_counters(shape, FlowKind.NPACK, bits, hw, group_k),
    }
    base = results[FlowKind.DEQUANT.value].as_dict()
    ratios = {}
    for name, cnt in results.items():
        d = cnt.as_dict()
        ratios[name] = {key: (d[key] / base[key] if base[key] else (1.0 if d[key] == 0 else math.inf))
                        for key in d}
    k, n = results["kpack"], results["npack"]
    return {
        "shape": str(shape),
        "bits": bits,
        "counters": results,
        "ratios": ratios,
        "rf_reduction_npack_vs_kpack": 1 - n.rf_total / k.rf_total,
        "rf_reduction_npack_vs_kpack_without_c": 1 - n.rf_total_without_c / k.rf_total_without_c,
        "speedup_npack_vs_kpack": k.cycles / n.cycles,
        "speedup_npack_vs_dequant": results["dequant"].cycles / n.cycles,
    }


def headline_metrics(shape="m16n16k16", hw: HwConfig = HwConfig()) -> dict:
    """RF reduction (best case) and mean speedup of npack over kpack across INT4/INT2."""
    per = {b: compare_flows(shape, hw, b) for b in (4, 2)}
    red = {b: r["rf_reduction_npack_vs_kpack"] for b, r in per.items()}
    red_nc = {b: r["rf_reduction_npack_vs_kpack_without_c"] for b, r in per.items()}
    sp = [per[b]["speedup_npack_vs_kpack"] for b in (4, 2)]
    return {
        "rf_reduction": red,
        "rf_reduction_without_c": red_nc,
        "rf_reduction_best": max(red.values()),
        "rf_reduction_best_without_c": max(red_nc.values()),
        "speedup": {4: sp[0], 2: sp[1]},
        "speedup_arith_mean": sum(sp) / 2,
        "speedup_geo_mean": math.sqrt(sp[0] * sp[1]),
    }


def with_dp(hw: HwConfig, **kwargs) -> HwConfig:
    return replace(hw, dp=replace(hw.dp, **kwargs))
