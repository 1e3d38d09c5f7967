"""Render plans, estimates, and simulation results as md / csv / json."""

from __future__ import annotations

import csv
import io
import json
from typing import Optional

from . import __version__
from .dse import (
    NetworkPlan,
    ResourceEstimate,
    ThroughputEstimate,
    estimate_resources,
    estimate_throughput,
    plan_to_dict,
)
from .simulator import SimReport

__all__ = [
    "plan_report",
    "sim_report",
    "sweep_csv",
]

QUANT_NOTE = "shift-requant-stand-in"


def _plan_rows(plan: NetworkPlan, res: ResourceEstimate) -> list[dict]:
    rows = []
    for lp, rr in zip(plan.layers, res.rows):
        impl = lp.impl
        rows.append({
            "index": lp.index,
            "name": lp.name,
            "kind": lp.spec.kind.value,
            "in": "x".join(map(str, lp.in_shape)),
            "out": "x".join(map(str, lp.out_shape)),
            "target": str(impl.target_rate),
            "achieved": str(impl.achieved_in_rate),
            "P": impl.pixel_parallelism,
            "j": impl.j,
            "h": impl.h,
            "C": impl.configurations,
            "units": impl.unit_count,
            "variants": lp.active_variants,
            "mult": rr.multipliers,
            "adders": rr.adders,
            "weights": rr.weight_words,
            "exact": "yes" if impl.exact else "no",
        })
    return rows


def _md_table(rows: list[dict], columns: list[str]) -> str:
    head = "| " + " | ".join(columns) + " |"
    sep = "|" + "|".join("---" for _ in columns) + "|"
    body = [
        "| " + " | ".join(str(r[c]) for c in columns) + " |"
        for r in rows
    ]
    return "\n".join([head, sep] + body)


_PLAN_COLS = ["index", "name", "kind", "in", "out", "target", "achieved",
              "P", "j", "h", "C", "units", "variants", "mult", "adders",
              "weights", "exact"]


def plan_report(plan: NetworkPlan, fmt: str = "md",
                f_clk_mhz: Optional[float] = None) -> str:
    """Per-layer plan table with totals and optional projected throughput."""
    res = estimate_resources(plan)
    rows = _plan_rows(plan, res)

    if fmt == "json":
        doc = plan_to_dict(plan)
        doc["totals"] = {
            "multipliers": res.multipliers,
            "adders": res.adders,
            "weight_words": res.weight_words,
        }
        if f_clk_mhz is not None:
            thr = estimate_throughput(plan, f_clk_mhz)
            doc["throughput"] = {
                "f_clk_mhz": thr.f_clk_mhz,
                "cycles_per_frame": thr.cycles_per_frame,
                "fps": round(thr.fps, 2),
                "latency_cycles_lower_bound": thr.latency_cycles_lower_bound,
            }
        return json.dumps(doc, indent=2)

    if fmt == "csv":
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=_PLAN_COLS)
        wr.writeheader()
        wr.writerows(rows)
        return buf.getvalue()

    if fmt != "md":
        raise ValueError(f"unknown format {fmt!r}")

    exact_count = sum(1 for lp in plan.layers if lp.impl.exact)
    lines = [
        f"# Plan: {plan.model_name}",
        "",
        f"- strategy: {plan.strategy}",
        f"- input rate: {plan.input_rate} features/cycle",
        f"- weight seed: {hex(plan.seed)}",
        f"- tool version: {__version__}",
        f"- quantization: {QUANT_NOTE}",
        f"- exact layers: {exact_count}/{len(plan.layers)}",
        "",
        _md_table(rows, _PLAN_COLS),
        "",
        f"Totals: {res.multipliers} multipliers, {res.adders} adders, "
        f"{res.weight_words} weight words.",
    ]
    if f_clk_mhz is not None:
        thr = estimate_throughput(plan, f_clk_mhz)
        lines += [
            "",
            f"At {thr.f_clk_mhz:g} MHz: {thr.cycles_per_frame} cycles/frame, "
            f"{thr.fps:.2f} FPS, fill+frame latency >= "
            f"{thr.latency_cycles_lower_bound} cycles.",
        ]
    return "\n".join(lines) + "\n"


_SIM_COLS = ["index", "name", "kind", "strategy", "units", "utilization",
             "busy", "stalls", "fifo_high_water"]


def sim_report(rep: SimReport, fmt: str = "md") -> str:
    rows = [
        {
            "index": ls.index,
            "name": ls.name,
            "kind": ls.kind.value,
            "strategy": ls.strategy,
            "units": ls.unit_count,
            "utilization": f"{ls.utilization * 100:.1f}%",
            "busy": f"{ls.busy_fraction * 100:.1f}%",
            "stalls": ls.stall_cycles,
            "fifo_high_water": ls.fifo_high_water,
        }
        for ls in rep.layers
    ]

    if fmt == "json":
        doc = {
            "model": rep.model_name,
            "strategy": rep.strategy,
            "frames": rep.frames,
            "input_rate": rep.input_rate,
            "sigma": rep.sigma,
            "seed": rep.seed,
            "tool_version": __version__,
            "quantization": rep.quantization,
            "cycles_total": rep.cycles_total,
            "measured_cycles_per_frame": rep.measured_cycles_per_frame,
            "predicted_cycles_per_frame": rep.predicted_cycles_per_frame,
            "functional_pass": rep.functional_pass,
            "first_mismatch": rep.first_mismatch,
            "summary": rep.summary_line(),
            "layers": [
                {
                    "index": ls.index,
                    "name": ls.name,
                    "kind": ls.kind.value,
                    "strategy": ls.strategy,
                    "unit_count": ls.unit_count,
                    "utilization": round(ls.utilization, 6),
                    "unit_utilization": ls.unit_utilization,
                    "busy_fraction": round(ls.busy_fraction, 6),
                    "stall_cycles": ls.stall_cycles,
                    "window_cycles": ls.window_cycles,
                    "fifo_high_water": ls.fifo_high_water,
                    "completions": ls.completions,
                }
                for ls in rep.layers
            ],
        }
        return json.dumps(doc, indent=2)

    if fmt == "csv":
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=_SIM_COLS)
        wr.writeheader()
        wr.writerows(rows)
        return buf.getvalue()

    if fmt != "md":
        raise ValueError(f"unknown format {fmt!r}")

    mm = ""
    if rep.first_mismatch is not None:
        li, fr, idx, got, want = rep.first_mismatch
        mm = (f"\nFirst mismatch: layer {li} frame {fr} feature {idx}: "
              f"got {got}, expected {want}.")
    lines = [
        f"# Simulation: {rep.model_name}",
        "",
        f"- {rep.summary_line()}",
        f"- strategy: {rep.strategy}, frames: {rep.frames}, "
        f"input rate: {rep.input_rate}, pacing derate: {rep.sigma}",
        f"- seed: {hex(rep.seed)}, tool version: {__version__}, "
        f"quantization: {rep.quantization}",
        f"- total cycles: {rep.cycles_total}" + mm,
        "",
        _md_table(rows, _SIM_COLS),
    ]
    return "\n".join(lines) + "\n"


def sweep_csv(entries: list[tuple[str, NetworkPlan, ThroughputEstimate,
                                  ResourceEstimate]]) -> str:
    """One row per swept rate: pacing, projected FPS, resource totals."""
    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow(["rate", "cycles_per_frame", "fps", "multipliers", "adders",
                 "weight_words", "exact_layers", "layers"])
    for label, plan, thr, res in entries:
        wr.writerow([
            label, thr.cycles_per_frame, f"{thr.fps:.2f}", res.multipliers,
            res.adders, res.weight_words,
            sum(1 for lp in plan.layers if lp.impl.exact), len(plan.layers),
        ])
    return buf.getvalue()
