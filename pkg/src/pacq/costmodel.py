"""Linear event-cost energy model, EDP and throughput/Watt over flow counters.

Every energy figure is ``sum(count * cost)``; the shipped defaults are
ILLUSTRATIVE relative magnitudes, not measured joules.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .dataflow import FlowCounters, FlowKind, GemmShape, HwConfig, simulate_counters

SECTION = "cost"


@dataclass(frozen=True)
class CostParams:
    """Energy per event in pJ (``static_per_cycle`` in pJ per cycle)."""

    rf_access: float = 5.0
    buffer_access: float = 0.5
    fp16_mul: float = 1.0
    pmul_issue: float = 1.3         # one parallel FP-INT issue yields 4-8 products
    fp16_add: float = 0.4
    general_op: float = 3.0         # general-core unpack/dequant/correction instruction
    l1_access: float = 10.0
    static_per_cycle: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ValueError(f"cost {f.name}={v} must be nonnegative")

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def scaled(self, name: str, factor: float) -> "CostParams":
        return replace(self, **{name: getattr(self, name) * factor})

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_PARAMS = CostParams()


def load_params(path) -> CostParams:
    """Read ``[cost]`` keys (pJ) from an INI file; missing keys keep defaults."""
    cp = configparser.ConfigParser()
    text = Path(path).read_text()
    cp.read_string(text)
    if not cp.has_section(SECTION):
        raise ValueError(f"{path}: missing [{SECTION}] section")
    known = set(CostParams.names())
    values = {}
    for key, raw in cp.items(SECTION):
        if key not in known:
            raise ValueError(f"{path}: unknown cost key {key!r}; expected one of {sorted(known)}")
        try:
            values[key] = float(raw)
        except ValueError:
            raise ValueError(f"{path}: {key} = {raw!r} is not a number") from None
    return CostParams(**values)


def dump_params(params: CostParams) -> str:
    lines = [f"[{SECTION}]", "# energy per event in pJ; static_per_cycle in pJ/cycle"]
    lines += [f"{k} = {v}" for k, v in params.as_dict().items()]
    return "\n".join(lines) + "\n"


CATEGORIES = ("rf", "buffer", "l1", "multiply", "add", "general_core", "static")


def energy(c: FlowCounters, params: CostParams = DEFAULT_PARAMS) -> dict:
    """Per-category energy (pJ) plus ``total``; categories sum to the total."""
    out = {
        "rf": c.rf_total * params.rf_access,
        "buffer": c.buffer_accesses * params.buffer_access,
        "l1": c.l1_reads * params.l1_access,
        "multiply": c.fp16_mults * params.fp16_mul + c.pmul_issues * params.pmul_issue,
        "add": (c.fp16_adds + c.acc_adds) * params.fp16_add,
        "general_core": (c.dequant_ops + c.correction_ops) * params.general_op,
        "static": c.cycles * params.static_per_cycle,
    }
    out["total"] = sum(out[k] for k in CATEGORIES)
    return out


@dataclass
class EdpReport:
    flow: str
    energy: dict
    cycles: int
    edp: float
    ratios: dict          # baseline flow name -> {"energy", "cycles", "edp"}

    @property
    def total_energy(self) -> float:
        return self.energy["total"]


def edp(flow: str, breakdown: dict, cycles: int) -> EdpReport:
    return EdpReport(flow, breakdown, cycles, breakdown["total"] * cycles, {})


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


def attach_ratios(reports: dict, baselines=("dequant", "kpack")) -> dict:
    for rep in reports.values():
        for base in baselines:
            if base not in reports:
                continue
            b = reports[base]
            rep.ratios[base] = {
                "energy": _ratio(rep.total_energy, b.total_energy),
                "cycles": _ratio(rep.cycles, b.cycles),
                "edp": _ratio(rep.edp, b.edp),
            }
    return reports


def throughput_per_watt(c: FlowCounters, params: CostParams = DEFAULT_PARAMS,
                        macs: int | None = None) -> dict:
    """Two normalizations of throughput per Watt (MACs per pJ).

    ``per_operation`` divides by all energy (throughput / average power).
    ``per_unit`` divides by the compute units' energy only (multipliers,
    adders, static), leaving out data movement and the general core.
    """
    e = energy(c, params)
    if macs is None:
        macs = c.fp16_adds
    unit = e["multiply"] + e["add"] + e["static"]
    return {
        "throughput_per_cycle": _ratio(macs, c.cycles),
        "per_operation": _ratio(macs, e["total"]),
        "per_unit": _ratio(macs, unit),
    }


def flow_reports(shape, bits: int = 4, hw: HwConfig = HwConfig(),
                 params: CostParams = DEFAULT_PARAMS, group_k: int = 32,
                 counters: dict | None = None) -> dict:
    """EdpReport per flow, with ratios against ``dequant`` and ``kpack``."""
    shape = GemmShape.parse(shape)
    if counters is None:
        counters = {f.value: simulate_counters(shape, f, bits, hw, group_k) for f in FlowKind}
    reports = {name: edp(name, energy(c, params), c.cycles) for name, c in counters.items()}
    return attach_ratios(reports)


def edp_ordering_holds(reports: dict) -> bool:
    return reports["npack"].edp < reports["kpack"].edp < reports["dequant"].edp


def sensitivity_sweep(shape="m16n4096k4096", bits: int = 4, hw: HwConfig = HwConfig(),
                      params: CostParams = DEFAULT_PARAMS, spread: float = 0.5,
                      corners: bool = True, group_k: int = 32) -> list[dict]:
    """EDP ordering under per-entry perturbations of ``params``.

    Points: each entry scaled by ``1 +- spread`` alone, then (with
    ``corners``) every combination of all entries at ``1 +- spread``.
    Counters are computed once; energy is linear in the params.
    """
    shape = GemmShape.parse(shape)
    counters = {f.value: simulate_counters(shape, f, bits, hw, group_k) for f in FlowKind}
    names = CostParams.names()
    points = [("default", params)]
    for n in names:
        for sgn, fac in (("-", 1 - spread), ("+", 1 + spread)):
            points.append((f"{n}{sgn}", params.scaled(n, fac)))
    if corners:
        for signs in itertools.product((1 - spread, 1 + spread), repeat=len(names)):
            p = params
            for n, fac in zip(names, signs):
                p = p.scaled(n, fac)
            label = "corner:" + "".join("+" if f > 1 else "-" for f in signs)
            points.append((label, p))
    rows = []
    for label, p in points:
        reps = flow_reports(shape, bits, hw, p, group_k, counters)
        rows.append({
            "point": label,
            "edp_dequant": reps["dequant"].edp,
            "edp_kpack": reps["kpack"].edp,
            "edp_npack": reps["npack"].edp,
            "reduction_vs_dequant": 1 - reps["npack"].ratios["dequant"]["edp"],
            "ordering_holds": edp_ordering_holds(reps),
        })
    return rows
