"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""

import time

import numpy as np

from pacq import costmodel as cm
from pacq import dataflow as df
from pacq import halffloat as hf
from pacq import pmul
from pacq import quantpack as qp
from pacq.pmul import DpConfig
from oracles import activations, exact_gemm, half_value, nearest_half


def test_01_exhaustive_multiplier_equivalence(acceptance):
    t0 = time.perf_counter()
    r4 = pmul.verify_lanes(4)
    r2 = pmul.verify_lanes(2)
    dt = time.perf_counter() - t0
    ok = (r4.mismatches == 0 and r2.mismatches == 0 and r4.cases == 61442 * 16
          and r2.cases == 61442 * 4 * 2 and dt < 60)
    acceptance(1, ok, f"INT4 {r4.cases} cases / {r4.mismatches} mismatches, INT2 {r2.cases} "
                      f"lane checks / {r2.mismatches} mismatches, carries {r4.adder_carries}+"
                      f"{r2.adder_carries}, {dt:.1f}s (< 60s)")
    assert ok


def test_02_published_cycle_counts(acceptance):
    got = [pmul.dp_cycles(2, 4, 4, b, DpConfig()) for b in (16, 4, 2)]
    ok = got == [11, 19, 35]
    acceptance(2, ok, f"dp_cycles m2n4k4 FP16/INT4/INT2 = {got} (want [11, 19, 35])")
    assert ok


def test_03_lane_throughput_ratios(acceptance):
    r4 = pmul.products_per_cycle(4) / pmul.products_per_cycle(16)
    r2 = pmul.products_per_cycle(2) / pmul.products_per_cycle(16)
    ok = r4 == 4 and r2 == 8
    acceptance(3, ok, f"products/cycle ratio INT4 {r4:g}, INT2 {r2:g} (want 4, 8)")
    assert ok


def test_04_rf_access_reduction(acceptance):
    h = df.headline_metrics("m16n16k16")
    best = h["rf_reduction_best"]
    ok = abs(best - 0.543) <= 0.05
    acceptance(4, ok, f"RF reduction npack vs kpack with C: INT4 {h['rf_reduction'][4]:.1%}, "
                      f"INT2 {h['rf_reduction'][2]:.1%}, best {best:.1%} (54.3% +- 5pp); "
                      f"without C: INT4 {h['rf_reduction_without_c'][4]:.1%}, "
                      f"INT2 {h['rf_reduction_without_c'][2]:.1%}")
    assert ok


def test_05_speedup(acceptance):
    h = df.headline_metrics("m16n16k16")
    mean = h["speedup_arith_mean"]
    ok = abs(mean / 1.99 - 1) <= 0.10
    acceptance(5, ok, f"kpack/npack cycles INT4 {h['speedup'][4]:.3f}, INT2 {h['speedup'][2]:.3f}; "
                      f"arithmetic mean {mean:.3f}, geometric mean {h['speedup_geo_mean']:.3f} "
                      f"(1.99 +- 10%)")
    assert ok
    assert abs(h["speedup_geo_mean"] / 1.99 - 1) <= 0.10


def test_06_fetch_instruction_law(acceptance):
    details, ok = [], True
    for shape in ("m16n16k16", "m32n64k64"):
        for bits, ratio in ((4, 4), (2, 8)):
            k = df.simulate_counters(shape, "kpack", bits)
            n = df.simulate_counters(shape, "npack", bits)
            good = (k.fetch_instructions_A == ratio * n.fetch_instructions_A
                    and n.buffer_evictions == 0 and k.buffer_evictions > 0)
            ok &= good
            details.append(f"{shape} INT{bits} A-fetch {k.fetch_instructions_A}/"
                           f"{n.fetch_instructions_A}, evictions {k.buffer_evictions}/"
                           f"{n.buffer_evictions}")
    acceptance(6, ok, "; ".join(details))
    assert ok


def test_07_functional_gemm_equivalence(acceptance):
    rng = np.random.default_rng(20240607)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(100):
        m, n, k = (int(x) * 16 for x in rng.integers(1, 5, 3))
        bits = int(rng.choice([4, 2]))
        gk = int(rng.choice([g for g in (16, 32, 64) if k % g == 0]))
        gn = int(rng.choice([1, 4, 16]))
        A = activations(rng, (m, k))
        W = rng.standard_normal((k, n)) * rng.uniform(0.01, 4)
        q = qp.rtn_quantize(W, bits, (gk, gn))
        pw = qp.pack(q, qp.PackSpec(bits, "n"))
        C = df.simulate(df.GemmShape(m, n, k), "npack", df.HwConfig(), A, pw).C
        want = exact_gemm(A.view(np.uint16), qp.dequantize_exact(q))
        bad += int(not np.array_equal(C, want))
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 300
    acceptance(7, ok, f"100 seeded npack wide-exact GEMMs up to 64^3: {bad} mismatching, "
                      f"{dt:.1f}s (< 300s)")
    assert ok


def test_08_eq1_identity(acceptance):
    rng = np.random.default_rng(8)
    cfg = DpConfig()
    bad = 0
    for i in range(10_000):
        k = (4, 16, 64)[i % 3]
        bits = (4, 2)[i % 2]
        lo, hi = qp.qrange(bits)
        a = activations(rng, k).view(np.uint16)
        b = rng.integers(lo, hi + 1, k)
        scale = int(np.float16(rng.uniform(1e-3, 2)).view(np.uint16))
        lanes = pmul.LANES[bits]
        words = [qp.pack_lanes([int(x)] * lanes, bits) for x in b]
        acc = sa = None
        for c in range(0, k, 4):
            acc, sa = pmul.parallel_dp([int(x) for x in a[c:c + 4]], words[c:c + 4], cfg, "wide",
                                       bits, acc, sa)
        want = nearest_half(sum(half_value(int(x)) * int(y) for x, y in zip(a, b))
                            * half_value(scale))
        got = [pmul.fused_correct(acc[j], sa, scale, bits) for j in range(lanes)]
        bad += int(any(g != want for g in got))
    ok = bad == 0
    acceptance(8, ok, f"fused correction vs exact sum(A*B)*scale rounded once: {bad} / 10000 "
                      f"instances mismatching (k in 4/16/64, INT4/INT2, all lanes)")
    assert ok


def test_09_edp_ordering(acceptance):
    t0 = time.perf_counter()
    rows = cm.sensitivity_sweep("m16n4096k4096", 4, spread=0.5, corners=True)
    dt = time.perf_counter() - t0
    default = rows[0]
    all_hold = all(r["ordering_holds"] for r in rows)
    red = default["reduction_vs_dequant"]
    ok = all_hold and 0.50 <= red <= 0.95 and dt < 600
    acceptance(9, ok, f"m16n4096k4096 INT4 EDP reduction vs dequant {red:.1%} (in [50%, 95%]); "
                      f"ordering npack < kpack < dequant holds at {sum(r['ordering_holds'] for r in rows)}"
                      f"/{len(rows)} +-50% points; {dt:.1f}s")
    assert ok


def test_10_ablations(acceptance):
    cyc = []
    for dup in (1, 2, 4):
        hw = df.with_dp(df.HwConfig(), dup_factor=dup)
        cyc.append(df.simulate_counters("m16n16k16", "npack", 4, hw).cycles)
    gain12, gain24 = cyc[0] - cyc[1], cyc[1] - cyc[2]
    dup_ok = gain12 > gain24 > 0
    ratios = []
    for w in (4, 8, 16):
        hw = df.with_dp(df.HwConfig(), dp_width=w)
        ratios.append(df.simulate_counters("m16n16k16", "npack", 4, hw).cycles
                      / df.simulate_counters("m16n16k16", "dequant", 4, hw).cycles)
    dp_ok = all(abs(r / ratios[0] - 1) <= 0.15 for r in ratios)
    ok = dup_ok and dp_ok
    acceptance(10, ok, f"dup 1/2/4 npack cycles {cyc} (gains {gain12} > {gain24}); "
                       f"npack/dequant cycle ratio over DP-4/8/16 "
                       f"{', '.join(f'{r:.3f}' for r in ratios)} (within +-15% of DP-4)")
    assert ok


def test_11_quantizer_properties(acceptance):
    raws = np.arange(1 << 16, dtype=np.uint32)
    rt_ok = True
    for bits in (4, 2):
        c = 16 // bits
        lanes = np.stack([((raws >> (i * bits)) & ((1 << bits) - 1)).astype(np.int32)
                          - (1 << (bits - 1)) for i in range(c)], axis=-1)
        one = np.full((1, 1), hf.fp16_encode(1.0), np.uint16)
        for dim, vals in (("n", lanes), ("k", lanes.T.copy())):
            q = qp.QuantizedWeights(vals.astype(np.int8), one, bits, qp.GroupSpec(*vals.shape))
            pw = qp.pack(q, qp.PackSpec(bits, dim))
            rt_ok &= np.array_equal(pw.words.ravel(), raws.astype(np.uint16))
            rt_ok &= np.array_equal(pw.unpack_all(), vals)
    rng = np.random.default_rng(11)
    err_ok = True
    for trial in range(20):
        W = rng.standard_normal((128, 64)) * 10.0 ** rng.uniform(-3, 2)
        for bits in (4, 2):
            q = qp.rtn_quantize(W, bits, "32x4")
            s = q.expanded_scales().view(np.float16).astype(np.float64)
            d = qp.dequantize(q)
            ulp = np.array([float(hf.ulp(int(x))) for x in d.view(np.uint16).ravel()]).reshape(d.shape)
            err_ok &= bool(np.all(np.abs(d.astype(np.float64) - W) <= s / 2 + ulp))
    W = rng.standard_normal((128, 128))
    shapes = (qp.rtn_quantize(W, 4, "g[32,4]").scales.shape, qp.rtn_quantize(W, 4, "g128").scales.shape)
    shape_ok = shapes == ((4, 32), (1, 128))
    ok = bool(rt_ok and err_ok and shape_ok)
    acceptance(11, ok, f"pack/unpack all 2^16 words x INT4/INT2 x k/n round-trip {rt_ok}; "
                       f"RTN error <= scale/2 + ulp {err_ok}; scale shapes g[32,4] {shapes[0]}, "
                       f"g128 {shapes[1]}")
    assert ok
