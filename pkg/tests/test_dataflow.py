import numpy as np
import pytest

from pacq import dataflow as df
from pacq import halffloat as hf
from pacq import quantpack as qp
from pacq.dataflow import FlowKind, GemmShape, HwConfig
from pacq.pmul import AccumulatorPolicy
from oracles import activations, exact_gemm, half_value, nearest_half


def test_shape_parsing():
    assert GemmShape.parse("16x32x48") == GemmShape(16, 32, 48)
    assert GemmShape.parse("m16n4096k4096") == GemmShape(16, 4096, 4096)
    for bad in ("16x16", "15x16x16", "0x16x16"):
        with pytest.raises(ValueError):
            GemmShape.parse(bad)


def test_octet_partition():
    octs = df.map_octets()
    assert len(octs) == 4
    cells = set()
    for o in octs:
        assert len(o.dp_units) == 2 and len(o.c_tiles) == 4
        for r0, c0 in o.c_tiles:
            for r in range(r0, r0 + 4):
                for c in range(c0, c0 + 4):
                    assert (r, c) not in cells
                    cells.add((r, c))
    assert cells == {(r, c) for r in range(16) for c in range(16)}
    assert sorted(d for o in octs for d in o.dp_units) == list(range(8))


def test_schedule():
    assert df.map_warp("m16n16k16").length == 1
    sched = df.map_warp("m16n32k16").schedule
    assert len(sched) == 2 and [s.n0 for s in sched] == [0, 16]
    sched = df.map_warp("m32n32k32").schedule
    # n innermost, then m, then k
    assert [(s.k0, s.m0, s.n0) for s in sched[:4]] == [(0, 0, 0), (0, 0, 16), (0, 16, 0), (0, 16, 16)]
    assert sched[4].k0 == 16


def test_dequant_closed_form():
    c = df.simulate_counters("m16n16k16", "dequant", 16)
    # per octet: A 4 kt x 2 TG x 4 regs, B 4 kt x 4 nt x 8 regs, C 4 tiles x 4 visits x 8 regs
    assert c.rf_reads_A == 4 * 32
    assert c.rf_reads_B == 4 * 128
    assert c.rf_writes_C == 4 * 128
    assert c.rf_reads_C == 4 * 96
    assert c.fetch_instructions_A == 4 * 8 and c.fetch_instructions_B == 4 * 16
    assert c.buffer_evictions == 0
    assert c.cycles == 16 * 11
    assert c.rf_dequant == 0


def test_packing_density_law():
    fp = df.simulate_counters("m16n64k32", "dequant", 16)
    n4 = df.simulate_counters("m16n64k32", "npack", 4)
    n2 = df.simulate_counters("m16n64k32", "npack", 2)
    assert n4.rf_reads_B * 4 == fp.rf_reads_B
    assert n2.rf_reads_B * 8 == fp.rf_reads_B


@pytest.mark.parametrize("shape", ["m16n16k16", "m32n16k64", "m16n48k32"])
def test_fetch_law_and_evictions(shape):
    for bits, ratio in ((4, 4), (2, 8)):
        k = df.simulate_counters(shape, "kpack", bits)
        n = df.simulate_counters(shape, "npack", bits)
        assert k.fetch_instructions_A == ratio * n.fetch_instructions_A
        assert n.buffer_evictions == 0
        assert k.buffer_evictions > 0


def test_counters_monotone_and_deterministic():
    a = df.simulate_counters("m32n32k32", "kpack", 4)
    b = df.simulate_counters("m32n32k32", "kpack", 4)
    assert a == b
    assert all(v >= 0 for v in a.as_dict().values())
    small = df.simulate_counters("m32n32k16", "kpack", 4).as_dict()
    assert all(a.as_dict()[key] >= small[key] for key in small)


def test_trace_matches_counters():
    events = []
    c = df.simulate_counters("m16n32k32", "kpack", 4, trace=events)
    assert c == df.simulate_counters("m16n32k32", "kpack", 4)
    assert sum(" fetchA " in e for e in events) == c.fetch_instructions_A
    assert sum(" fetchB " in e for e in events) == c.fetch_instructions_B
    assert sum(" evictA " in e for e in events) == c.buffer_evictions
    assert events[0].startswith("w0 o0 ")


def test_headline_numbers():
    h = df.headline_metrics()
    assert 0.493 <= h["rf_reduction_best"] <= 0.593
    assert 1.791 <= h["speedup_arith_mean"] <= 2.189


def test_compare_flows_self_ratio():
    r = df.compare_flows("m16n16k16", bits=4)
    assert all(v == 1.0 for v in r["ratios"]["dequant"].values())


def test_large_shape_runs():
    c = df.simulate_counters("m16n4096k4096", "npack", 4)
    inst = GemmShape.parse("m16n4096k4096").instructions
    assert c.cycles == 76 * inst


def test_effective_slots():
    assert HwConfig().effective_a_slots == 2
    assert df.with_dp(HwConfig(), dp_width=16).effective_a_slots == 1
    with pytest.raises(ValueError):
        HwConfig(buffer_bits=256).effective_a_slots


def _operands(seed, m, n, k, bits, group, dim):
    rng = np.random.default_rng(seed)
    A = activations(rng, (m, k))
    W = rng.standard_normal((k, n))
    q = qp.rtn_quantize(W, bits, group)
    return A, q, qp.pack(q, qp.PackSpec(bits, dim))


@pytest.mark.parametrize("flow,dim", [("npack", "n"), ("kpack", "k")])
@pytest.mark.parametrize("bits", [4, 2])
def test_functional_wide_matches_exact_oracle(flow, dim, bits):
    A, q, pw = _operands(11, 16, 32, 48, bits, "16x4", dim)
    res = df.simulate("16x32x48", flow, HwConfig(), A, pw)
    want = exact_gemm(A.view(np.uint16), qp.dequantize_exact(q))
    assert np.array_equal(res.C, want)
    assert np.array_equal(res.C, df.reference_gemm(A, q))


def test_functional_dequant_matches_fp16_oracles():
    A, q, pw = _operands(12, 16, 16, 32, 4, "16x4", "n")
    B = qp.dequantize(q)
    wide = df.simulate("16x16x32", "dequant", HwConfig(), A, B)
    assert np.array_equal(wide.C, exact_gemm(A.view(np.uint16), B.astype(np.float64)))
    seq = df.simulate("16x16x32", "dequant", HwConfig(acc=AccumulatorPolicy.FP16_SEQUENTIAL), A, B)
    Ab, Bb = A.view(np.uint16), B.view(np.uint16)
    for i in range(4):
        for j in range(4):
            s = 0
            for kk in range(32):
                p = nearest_half(half_value(int(Ab[i, kk])) * half_value(int(Bb[kk, j])))
                s = nearest_half(half_value(s) + half_value(p)) if not (
                    half_value(s) + half_value(p) == 0) else 0
            assert half_value(int(seq.C[i, j])) == half_value(s)
    also = df.simulate("16x16x32", "dequant", HwConfig(), A, pw)
    assert np.array_equal(also.C, wide.C)


def test_fp16_policy_packed_flows_agree():
    A, q, pn = _operands(13, 16, 16, 32, 4, "16x4", "n")
    pk = qp.pack(q, qp.PackSpec(4, "k"))
    hw = HwConfig(acc=AccumulatorPolicy.FP16_SEQUENTIAL)
    a = df.simulate("16x16x32", "npack", hw, A, pn)
    b = df.simulate("16x16x32", "kpack", hw, A, pk)
    assert np.array_equal(a.C, b.C)
    assert a.flags.cancellation > 0


def test_pack_dim_mismatch():
    A, q, pn = _operands(14, 16, 16, 16, 4, "16x4", "n")
    with pytest.raises(ValueError):
        df.simulate("16x16x16", "kpack", HwConfig(), A, pn)
    with pytest.raises(ValueError):
        df.simulate("16x16x16", "npack", HwConfig(), A, np.zeros((16, 16), np.float16))
    with pytest.raises(ValueError):
        df.simulate("16x16x32", "npack", HwConfig(), A, pn)


def test_identity_scale_integer_results():
    # integer activations and weights with scale 1 give exact integer outputs
    rng = np.random.default_rng(2)
    A = rng.integers(-3, 4, (16, 16)).astype(np.float16)
    vals = rng.integers(-8, 8, (16, 16)).astype(np.int8)
    scales = np.full((1, 4), hf.fp16_encode(1.0), np.uint16)
    q = qp.QuantizedWeights(vals, scales, 4, qp.GroupSpec(16, 4))
    pw = qp.pack(q, qp.PackSpec(4, "n"))
    res = df.simulate("16x16x16", "npack", HwConfig(), A, pw)
    assert np.array_equal(res.C.view(np.float16).astype(np.float64),
                          A.astype(np.float64) @ vals.astype(np.float64))


def test_dp_width_variants_functional():
    A, q, pw = _operands(15, 16, 16, 32, 4, "32x4", "n")
    want = df.reference_gemm(A, q)
    for w in (4, 8, 16):
        hw = df.with_dp(HwConfig(), dp_width=w)
        assert np.array_equal(df.simulate("16x16x32", "npack", hw, A, pw).C, want)
