"""Command-line driver: ``pacq {verify-mul,quantize,gemm,simulate,sweep}``."""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import costmodel, dataflow, pmul, quantpack
from .costmodel import CostParams
from .dataflow import FlowKind, GemmShape, HwConfig
from .pmul import AccumulatorPolicy, DpConfig

SCHEMA_VERSION = 1
log = logging.getLogger("pacq")

COUNTER_COLUMNS = [
    "rf_reads_A", "rf_reads_B", "rf_reads_C", "rf_writes_C", "rf_dequant", "rf_total",
    "rf_total_without_c", "fetch_instructions", "fetch_instructions_A", "fetch_instructions_B",
    "buffer_evictions", "buffer_accesses", "l1_reads", "fp16_mults", "pmul_issues", "fp16_adds",
    "acc_adds", "dequant_ops", "correction_ops", "dp_cycles", "stall_cycles", "dequant_cycles",
    "cycles",
]
REPORT_COLUMNS = (["shape", "bits", "flow"] + COUNTER_COLUMNS
                  + [f"energy_{c}" for c in costmodel.CATEGORIES]
                  + ["energy_total", "edp", "edp_vs_dequant", "edp_vs_kpack",
                     "tpw_per_operation", "tpw_per_unit"])
SWEEP_COLUMNS = ["point", "axis", "value"] + REPORT_COLUMNS + ["cycle_ratio_vs_dequant"]

COLUMN_HELP = """\
CSV columns (simulate, sweep):
  shape, bits, flow        workload and flow (dequant, kpack, npack)
  rf_*                     32-bit register-file accesses; rf_dequant is the
                           general-core unpack/dequant traffic; rf_total sums
                           all, rf_total_without_c leaves out C reads/writes
  fetch_instructions*      tile loads issued by octets (total, A, B)
  buffer_evictions         A tiles replaced while still needed
  buffer_accesses          tensor-core operand buffer reads and writes
  l1_reads                 registers loaded from L1/shared memory
  fp16_mults, pmul_issues  FP16 multiplies; parallel FP-INT multiplier issues
  fp16_adds, acc_adds      adder-tree adds; sum(A) accumulator adds
  dequant_ops, correction_ops  general-core instructions
  dp_cycles, stall_cycles, dequant_cycles, cycles  timing
  energy_<category>, energy_total  pJ under the cost parameters
  edp, edp_vs_dequant, edp_vs_kpack  energy x cycles and its ratios
  tpw_per_operation, tpw_per_unit  MACs per pJ (all energy / compute units)
  point, axis, value, cycle_ratio_vs_dequant  sweep bookkeeping (sweep only)
"""

EXPERIMENT_KEYS = ("shape", "flow", "bits", "group", "dup", "dp", "acc", "cost", "seed",
                   "out", "format")


# ---------------------------------------------------------------------------
# helpers


def _hw(args) -> HwConfig:
    return HwConfig(dp=DpConfig(dp_width=args.dp, dup_factor=args.dup),
                    acc=AccumulatorPolicy.parse(args.acc))


def _params(args) -> CostParams:
    return costmodel.load_params(args.cost) if args.cost else costmodel.DEFAULT_PARAMS


def _group(args, k: int) -> quantpack.GroupSpec:
    if args.group:
        return quantpack.GroupSpec.parse(args.group)
    return quantpack.GroupSpec(min(32, k), 4)


def random_activations(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    """FP16 activations uniform in [-2, 2], subnormal draws flushed to signed zero."""
    a = rng.uniform(-2.0, 2.0, size=(m, k)).astype(np.float16)
    bits = a.view(np.uint16)
    sub = (bits & 0x7C00) == 0
    bits[sub] &= 0x8000
    return a


def _ordinal(bits: np.ndarray) -> np.ndarray:
    b = bits.astype(np.int64)
    mag = b & 0x7FFF
    return np.where(b & 0x8000, -mag, mag)


def ulp_distance(c: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Distance in representable FP16 steps between equal-shape bit arrays."""
    return np.abs(_ordinal(c) - _ordinal(ref))


def _emit(args, name: str, rows: list[dict], columns: list[str], payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    text_json = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    text_csv = buf.getvalue()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text_json)
        (out / f"{name}.csv").write_text(text_csv)
        log.info("wrote %s/%s.{csv,json}", out, name)
    sys.stdout.write(text_csv if args.format == "csv" else text_json)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if hasattr(o, "as_dict"):
        return o.as_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _report_rows(shape: GemmShape, bits: int, hw: HwConfig, params: CostParams) -> list[dict]:
    counters = {f.value: dataflow.simulate_counters(shape, f, bits, hw) for f in FlowKind}
    reps = costmodel.flow_reports(shape, bits, hw, params, counters=counters)
    rows = []
    for name, c in counters.items():
        rep = reps[name]
        row = {"shape": str(shape), "bits": bits, "flow": name, **c.as_dict()}
        row.update({f"energy_{k}": rep.energy[k] for k in costmodel.CATEGORIES})
        row["energy_total"] = rep.total_energy
        row["edp"] = rep.edp
        row["edp_vs_dequant"] = rep.ratios["dequant"]["edp"]
        row["edp_vs_kpack"] = rep.ratios["kpack"]["edp"]
        tpw = costmodel.throughput_per_watt(c, params)
        row["tpw_per_operation"] = tpw["per_operation"]
        row["tpw_per_unit"] = tpw["per_unit"]
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_verify_mul(args) -> int:
    status = 0
    rows = []
    for bits in args.bits_list:
        t0 = time.perf_counter()
        rep = pmul.verify_lanes(bits)
        dt = time.perf_counter() - t0
        verdict = "PASS" if rep.mismatches == 0 else "FAIL"
        print(f"INT{bits}: {verdict} cases={rep.cases} mismatches={rep.mismatches} "
              f"carry_events={rep.adder_carries} exponent_bumps={rep.exponent_bumps} "
              f"time={dt:.1f}s", file=sys.stderr)
        for ex in rep.examples:
            print(f"  mismatch: {ex}", file=sys.stderr)
        if rep.mismatches:
            status = 1
        rows.append({"bits": bits, "cases": rep.cases, "mismatches": rep.mismatches,
                     "carry_events": rep.adder_carries, "exponent_bumps": rep.exponent_bumps,
                     "verdict": verdict})
    _emit(args, "verify_mul", rows,
          ["bits", "cases", "mismatches", "carry_events", "exponent_bumps", "verdict"],
          {"results": rows})
    return status


def _read_matrix(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    return np.loadtxt(p, delimiter="," if p.suffix == ".csv" else None, ndmin=2)


def cmd_quantize(args) -> int:
    W = _read_matrix(args.input)
    if W.ndim != 2:
        raise ValueError(f"{args.input}: expected a 2-D matrix, got shape {W.shape}")
    q = quantpack.rtn_quantize(W, args.bits, _group(args, W.shape[0]))
    pw = quantpack.pack(q, quantpack.PackSpec(args.bits, args.dim))
    quantpack.save_weights(args.output, pw)
    err = np.abs(quantpack.dequantize_exact(q) - W)
    scales = q.expanded_scales().view(np.float16).astype(np.float64)
    g = q.group
    per_group = err.reshape(W.shape[0] // g.gk, g.gk, W.shape[1] // g.gn, g.gn).max(axis=(1, 3))
    print(f"wrote {args.output}: INT{args.bits} packed along {args.dim}, group {g}, "
          f"{q.scales.size} scales {q.scales.shape}", file=sys.stderr)
    stats = {
        "groups": int(q.scales.size),
        "scale_shape": list(q.scales.shape),
        "max_abs_error": float(err.max()),
        "mean_abs_error": float(err.mean()),
        "max_error_over_scale": float((err / scales).max()),
        "worst_group_error_mean": float(per_group.mean()),
    }
    _emit(args, "quantize", [stats], list(stats), {"stats": stats})
    return 0


def cmd_gemm(args) -> int:
    shape = GemmShape.parse(args.shape)
    flow = FlowKind.parse(args.flow)
    rng = np.random.default_rng(args.seed)
    A = random_activations(rng, shape.m, shape.k)
    if args.weights:
        pw = quantpack.load_weights(args.weights)
        if flow is not FlowKind.DEQUANT and pw.spec.dim != flow.pack_dim:
            raise ValueError(f"{args.weights} is packed along {pw.spec.dim}; "
                             f"{flow.value} needs {flow.pack_dim}")
    else:
        bits = 4 if args.bits == 16 else args.bits
        W = rng.standard_normal((shape.k, shape.n))
        q = quantpack.rtn_quantize(W, bits, _group(args, shape.k))
        pw = quantpack.pack(q, quantpack.PackSpec(bits, flow.pack_dim or "n"))
    hw = _hw(args)
    res = dataflow.simulate(shape, flow, hw, A, pw)
    q = pw.to_quantized()
    ref = dataflow.reference_gemm(A, q, exact_weights=flow is not FlowKind.DEQUANT)
    dist = ulp_distance(res.C, ref)
    wide = hw.acc is AccumulatorPolicy.WIDE_EXACT
    if wide:
        verdict = "PASS" if int(dist.max()) == 0 else "FAIL"
    else:
        verdict = "MEASURED"
    result = {"shape": str(shape), "flow": flow.value, "bits": pw.bits, "acc": hw.acc.value,
              "seed": args.seed, "verdict": verdict, "max_ulp": int(dist.max()),
              "mismatches": int((dist > 0).sum()), "flags": res.flags.as_dict()}
    print(f"{flow.value} {shape} INT{pw.bits} acc={hw.acc.value}: {verdict} "
          f"max_ulp={result['max_ulp']} mismatches={result['mismatches']}", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "C.npy", res.C.view(np.float16))
    _emit(args, "gemm", [result], ["shape", "flow", "bits", "acc", "seed", "verdict",
                                   "max_ulp", "mismatches"], {"result": result})
    return 1 if verdict == "FAIL" else 0


def cmd_simulate(args) -> int:
    shape = GemmShape.parse(args.shape)
    if args.bits not in (4, 2):
        raise ValueError("simulate compares packed flows; --bits must be 4 or 2")
    params = _params(args)
    hw = _hw(args)
    rows = _report_rows(shape, args.bits, hw, params)
    if args.trace:
        events: list[str] = []
        dataflow.simulate_counters(shape, args.flow, args.bits, hw, trace=events)
        Path(args.trace).write_text("\n".join(events) + "\n")
    _emit(args, "simulate", rows, REPORT_COLUMNS,
          {"config": {"shape": str(shape), "bits": args.bits, "dp": args.dp, "dup": args.dup,
                      "cost": params.as_dict()},
           "rows": rows})
    return 0


def _parse_axis_values(axis: str, raw: list[str]) -> list:
    if not raw:
        raise ValueError(f"sweep over {axis} needs at least one value")
    if axis == "shape":
        return [GemmShape.parse(v) for v in raw]
    return [int(v) for v in raw]


def cmd_sweep(args) -> int:
    values = _parse_axis_values(args.axis, args.values)
    params = _params(args)
    rows = []
    point = 0
    for v in values:
        shape = GemmShape.parse(args.shape)
        bits = args.bits
        dp_width, dup = args.dp, args.dup
        if args.axis == "dup_factor":
            dup = v
        elif args.axis == "dp_width":
            dp_width = v
        elif args.axis == "shape":
            shape = v
        else:
            bits = v
        hw = HwConfig(dp=DpConfig(dp_width=dp_width, dup_factor=dup),
                      acc=AccumulatorPolicy.parse(args.acc))
        rep = _report_rows(shape, bits, hw, params)
        base = next(r["cycles"] for r in rep if r["flow"] == "dequant")
        for r in rep:
            r.update(point=point, axis=args.axis, value=str(v),
                     cycle_ratio_vs_dequant=r["cycles"] / base)
            rows.append(r)
            point += 1
    _emit(args, "sweep", rows, SWEEP_COLUMNS, {"axis": args.axis, "rows": rows})
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _config_defaults(path) -> dict:
    cp = configparser.ConfigParser()
    cp.read_string(Path(path).read_text())
    if not cp.has_section("experiment"):
        raise ValueError(f"{path}: missing [experiment] section")
    out = {}
    for key, raw in cp.items("experiment"):
        if key not in EXPERIMENT_KEYS:
            raise ValueError(f"{path}: unknown key {key!r}; expected {EXPERIMENT_KEYS}")
        out[key] = int(raw) if key in ("bits", "dup", "dp", "seed") else raw
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [experiment] section mirroring flags")
    common.add_argument("--shape", default="16x16x16", help="GEMM shape MxNxK (default 16x16x16)")
    common.add_argument("--flow", default="npack", choices=[f.value for f in FlowKind])
    common.add_argument("--bits", type=int, default=4, choices=(16, 4, 2))
    common.add_argument("--group", default=None,
                        help="quantization group GKxGN or g128 (default 32x4, gk clipped to k)")
    common.add_argument("--dup", type=int, default=2, choices=(1, 2, 4),
                        help="adder-tree duplication factor")
    common.add_argument("--dp", type=int, default=4, choices=(4, 8, 16), help="DP unit width")
    common.add_argument("--acc", default="wide", choices=("fp16", "wide"),
                        help="accumulation policy")
    common.add_argument("--cost", help="INI file with a [cost] section (pJ per event)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    common.add_argument("--out", help="directory for CSV/JSON (and C.npy) outputs")
    common.add_argument("--format", default="json", choices=("csv", "json"),
                        help="stdout format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pacq", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=COLUMN_HELP)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify-mul", parents=[common],
                       help="exhaustive parallel-multiplier equivalence check")
    s.set_defaults(func=cmd_verify_mul)

    s = sub.add_parser("quantize", parents=[common], help="RTN-quantize and pack a weight matrix")
    s.add_argument("input", help="weights [k, n] as .npy, .csv or whitespace text")
    s.add_argument("output", help="packed weight file")
    s.add_argument("--dim", default="n", choices=("n", "k"), help="packing dimension")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("gemm", parents=[common], help="functional GEMM against the exact oracle")
    s.add_argument("--weights", help="packed weight file (default: random seeded weights)")
    s.set_defaults(func=cmd_gemm)

    s = sub.add_parser("simulate", parents=[common], epilog=COLUMN_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       help="counters, energy and EDP for all three flows")
    s.add_argument("--trace", help="write the event log of --flow to this file")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], epilog=COLUMN_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       help="one row per flow per axis value")
    s.add_argument("--axis", required=True, choices=("dup_factor", "dp_width", "shape", "bits"))
    s.add_argument("values", nargs="*", help="axis values, e.g. 1 2 4")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            defaults = _config_defaults(known.config)
            for action in parser._subparsers._group_actions[0].choices.values():
                action.set_defaults(**defaults)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if args.command == "verify-mul":
            args.bits_list = [args.bits] if args.bits in (4, 2) else [4, 2]
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"pacq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
