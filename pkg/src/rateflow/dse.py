"""Design-space exploration: (j, h) selection, planning, and estimates.

Every layer is implemented by units that consume j features per lane per
h cycles, so the achieved input rate is P*j/h. Proposed selection
constrains j to divisors of the fan-in and h to divisors of the per-unit
output count, picks the smallest rate >= the target, and breaks ties
toward the largest h (fewest units). The legacy selection reproduces the
ceil-based configuration count of earlier continuous-flow generators for
comparison; its rounding is what the proposed constraints remove.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import prod
from pathlib import Path
from typing import Optional

from . import __version__
from .kpu_schedule import KpuVariantSchedule, derive_variants
from .model_ir import LayerKind, LayerSpec, ModelGraph, Padding
from .rates import LayerRates, Rate, RateProfile

__all__ = [
    "DseError",
    "LegacyUnsupportedError",
    "PlanError",
    "CandidateSet",
    "LayerImpl",
    "LayerPlan",
    "NetworkPlan",
    "ResourceEstimate",
    "ThroughputEstimate",
    "candidate_set",
    "select_impl",
    "select_impl_legacy",
    "plan_network",
    "estimate_resources",
    "estimate_throughput",
    "plan_to_dict",
    "plan_from_dict",
    "load_plan",
]

PROPOSED = "proposed"
LEGACY = "legacy"


class DseError(ValueError):
    pass


class LegacyUnsupportedError(DseError):
    """The legacy scheme has no implementation for this layer/rate."""


class PlanError(DseError):
    """Plan is inconsistent with the model or the unit constraints."""


@lru_cache(maxsize=4096)
def _divisors(n: int) -> tuple[int, ...]:
    small, large = [], []
    d = 1
    while d * d <= n:
        if n % d == 0:
            small.append(d)
            if d != n // d:
                large.append(n // d)
        d += 1
    return tuple(small + large[::-1])


def _h_base(kind: LayerKind, d_out: int, channel_multiplier: int) -> int:
    """Divisor base for h: output channels, except depthwise-style layers
    where the per-input-channel output count takes that role (1 for pools)."""
    if kind.is_pool:
        return 1
    if kind is LayerKind.DEPTHWISE_CONV:
        return channel_multiplier
    return d_out


@dataclass
class CandidateSet:
    """All admissible (j, h) pairs for one layer at one target rate."""

    d_in: int
    h_base: int
    target: Rate
    pixel_parallelism: int
    per_lane_target: Rate
    pairs: list[tuple[int, int]]  # ascending j/h, then descending h

    def best_rate(self) -> Rate:
        j, h = self.pairs[0]
        return Rate(j, h)


def _escalation(d_in: int, target: Rate) -> tuple[int, Rate]:
    """(P, per-lane target). P > 1 only when one lane cannot carry the rate."""
    if target.num == 0:
        raise DseError("target rate must be positive")
    if target <= d_in:
        return 1, target
    p = -(-target.num // (target.den * d_in))  # ceil(target / d_in)
    return p, Rate(target.num, target.den * p)


def candidate_set(d_in: int, d_out: int, target: Rate,
                  kind: LayerKind = LayerKind.POINTWISE_CONV,
                  channel_multiplier: int = 1) -> CandidateSet:
    """Enumerate {(j, h) : j | d_in, h | h_base, j/h >= target}.

    Targets above d_in escalate to P parallel pixels and the residual
    per-lane target; the pair list is then for one lane. Never empty:
    (d_in, 1) always qualifies for the per-lane target.
    """
    base = _h_base(kind, d_out, channel_multiplier)
    p, lane_target = _escalation(d_in, target)
    tn, td = lane_target.num, lane_target.den
    pairs = [
        (j, h)
        for j in _divisors(d_in)
        for h in _divisors(base)
        if j * td >= h * tn
    ]
    pairs.sort(key=lambda jh: (Fraction(jh[0], jh[1]), -jh[1]))
    return CandidateSet(
        d_in=d_in, h_base=base, target=target,
        pixel_parallelism=p, per_lane_target=lane_target, pairs=pairs,
    )


@dataclass
class LayerImpl:
    """One hardware implementation choice for one layer.

    For conv-style layers a unit is a MAC group of ``kpus_per_unit`` (= j)
    KPUs; ``unit_count`` counts units per variant bank. FCU-style layers
    have ``unit_count`` FCUs in total (already including the P banks) and
    no KPUs. Legacy conv-style impls count bare KPUs (one per unit) and
    carry the reported interleave factor.
    """

    kind: LayerKind
    d_in: int
    d_out: int
    channel_multiplier: int
    strategy: str
    pixel_parallelism: int
    j: int
    h: int
    configurations: int
    unit_count: int
    kpus_per_unit: int
    achieved_in_rate: Rate
    target_rate: Rate
    exact: bool
    interleave_factor: int = 1
    chunk_pad: int = 0  # padded feature slots per pixel (legacy j rounding)

    @property
    def cycles_per_pixel_group(self) -> int:
        """Cycles a unit spends on one group of P input pixels."""
        return self.configurations


def select_impl(d_in: int, d_out: int, target: Rate,
                kind: LayerKind = LayerKind.POINTWISE_CONV,
                channel_multiplier: int = 1) -> LayerImpl:
    """Pick the divisor-constrained (j, h) with the least overshoot.

    Smallest achievable j/h >= target wins; among equal rates the largest
    h wins (fewest unit instances). Targets above the fan-in escalate to
    P = ceil(target / d_in) pixel lanes and are solved per lane.
    """
    base = _h_base(kind, d_out, channel_multiplier)
    p, lane_target = _escalation(d_in, target)
    tn, td = lane_target.num, lane_target.den
    base_divs = _divisors(base)

    best: Optional[tuple[Fraction, int, int]] = None
    for j in _divisors(d_in):
        h_lim = j * td // tn  # largest h with j/h >= lane target
        if h_lim < 1:
            continue
        h = base_divs[bisect_right(base_divs, h_lim) - 1]
        rate = Fraction(j, h)
        if best is None or rate < best[0] or (rate == best[0] and h > best[2]):
            best = (rate, j, h)
    assert best is not None  # (d_in, 1) always qualifies
    _, j, h = best

    cfg = h * d_in // j
    achieved = Rate(p * j, h)
    if kind is LayerKind.CONV:
        units, kpus = d_out // h, j
    elif kind is LayerKind.DEPTHWISE_CONV:
        units, kpus = channel_multiplier // h, j
    elif kind.is_pool:
        units, kpus = 1, j
    else:
        units, kpus = p * (d_out // h), 0
    return LayerImpl(
        kind=kind, d_in=d_in, d_out=d_out,
        channel_multiplier=channel_multiplier, strategy=PROPOSED,
        pixel_parallelism=p, j=j, h=h, configurations=cfg,
        unit_count=units, kpus_per_unit=kpus,
        achieved_in_rate=achieved, target_rate=target,
        exact=(achieved == target),
    )


def select_impl_legacy(d_in: int, d_out: int, target: Rate,
                       kind: LayerKind = LayerKind.POINTWISE_CONV,
                       channel_multiplier: int = 1) -> LayerImpl:
    """Ceil-based reference selection of earlier continuous-flow designs.

    Conv-style: C = min(ceil(d_in / target), d_in * d_out_eff), interleave
    I = ceil(C / d_in). FCU-style: target decomposes as j/h_max in lowest
    terms, h is the largest divisor of d_out not above h_max. Rates above
    the fan-in (or with j above it) are not supported by the scheme.
    """
    if target.num == 0:
        raise DseError("target rate must be positive")
    if target > d_in:
        raise LegacyUnsupportedError(
            f"legacy selection cannot exceed one pixel per cycle "
            f"(target {target} > fan-in {d_in})"
        )
    if kind.conv_style:
        # total distinct kernel configurations caps C
        if kind is LayerKind.CONV:
            d_eff = d_in * d_out
        elif kind is LayerKind.DEPTHWISE_CONV:
            d_eff = d_in * channel_multiplier
        else:
            d_eff = d_in
        cfg = min(-(-d_in * target.den // target.num), d_eff)
        interleave = -(-cfg // d_in)
        kpu_count = -(-d_eff // cfg)
        achieved = Rate(d_in, cfg)
        return LayerImpl(
            kind=kind, d_in=d_in, d_out=d_out,
            channel_multiplier=channel_multiplier, strategy=LEGACY,
            pixel_parallelism=1, j=achieved.num, h=achieved.den,
            configurations=cfg, unit_count=kpu_count, kpus_per_unit=1,
            achieved_in_rate=achieved, target_rate=target,
            exact=(achieved == target), interleave_factor=interleave,
        )

    j, h_max = target.num, target.den
    if j > d_in:
        raise LegacyUnsupportedError(
            f"legacy decomposition needs {j} features per cycle, "
            f"fan-in is {d_in}"
        )
    divs = _divisors(d_out)
    h = divs[bisect_right(divs, h_max) - 1]
    chunks = -(-d_in // j)
    cfg = h * chunks
    achieved = Rate(j, h)
    return LayerImpl(
        kind=kind, d_in=d_in, d_out=d_out,
        channel_multiplier=channel_multiplier, strategy=LEGACY,
        pixel_parallelism=1, j=j, h=h, configurations=cfg,
        unit_count=d_out // h, kpus_per_unit=0,
        achieved_in_rate=achieved, target_rate=target,
        exact=(achieved == target), chunk_pad=chunks * j - d_in,
    )


# ---------------------------------------------------------------------------
# Whole-network planning
# ---------------------------------------------------------------------------


@dataclass
class LayerPlan:
    index: int
    name: str
    spec: LayerSpec
    impl: LayerImpl
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    schedules: tuple[KpuVariantSchedule, ...] = ()

    @property
    def active_variants(self) -> int:
        if not self.schedules:
            return 1
        return sum(not s.elided for s in self.schedules)


@dataclass
class NetworkPlan:
    model_name: str
    strategy: str
    input_rate: Rate
    layers: list[LayerPlan]
    profile: RateProfile
    seed: int = 0

    def impls(self) -> list[LayerImpl]:
        return [lp.impl for lp in self.layers]


def _select(strategy: str, d_in: int, d_out: int, target: Rate,
            kind: LayerKind, mult: int) -> LayerImpl:
    if strategy == PROPOSED:
        return select_impl(d_in, d_out, target, kind, mult)
    if strategy == LEGACY:
        return select_impl_legacy(d_in, d_out, target, kind, mult)
    raise DseError(f"unknown strategy {strategy!r}")


def plan_network(graph: ModelGraph, input_rate: Rate,
                 strategy: str = PROPOSED) -> NetworkPlan:
    """Chain rate targets through the model and pick every layer's impl.

    Each layer's target is the served output rate of its predecessor
    (feature conservation); overshoot from divisor rounding never inflates
    downstream targets because an overshooting unit idles instead of
    producing faster.
    """
    if input_rate.num == 0:
        raise PlanError("input rate must be positive")
    graph.validate()
    shapes = graph.shapes()

    plans: list[LayerPlan] = []
    rows: list[LayerRates] = []
    served = input_rate.as_fraction()
    for idx, layer in enumerate(graph.layers):
        in_h, in_w, d_in = shapes[idx]
        out_h, out_w, d_out = shapes[idx + 1]
        target = Rate.from_fraction(served)
        impl = _select(strategy, d_in, d_out, target, layer.kind,
                       layer.channel_multiplier)
        p = impl.pixel_parallelism

        schedules: tuple[KpuVariantSchedule, ...] = ()
        if layer.kind.conv_style:
            if p > 1 and in_w % p:
                raise PlanError(
                    f"layer {idx} ({layer.name}): map width {in_w} is not a "
                    f"multiple of the pixel parallelism {p}; lane wiring "
                    f"would change row to row (pad the row length)"
                )
            schedules = derive_variants(
                in_h, in_w, layer.kernel_h, layer.kernel_w,
                layer.stride, layer.padding, p,
            )
        elif p > 1 and (in_h * in_w) % p:
            raise PlanError(
                f"layer {idx} ({layer.name}): {in_h * in_w} pixels per frame "
                f"cannot form whole groups of {p}"
            )

        out_rate = served * Fraction(out_h * out_w, in_h * in_w) \
            * Fraction(d_out, d_in)
        rows.append(LayerRates(Rate.from_fraction(served),
                               Rate.from_fraction(out_rate), p))
        plans.append(LayerPlan(
            index=idx, name=layer.name, spec=layer, impl=impl,
            in_shape=(in_h, in_w, d_in), out_shape=(out_h, out_w, d_out),
            schedules=schedules,
        ))
        served = out_rate

    profile = RateProfile(input_rate=input_rate, layers=rows)
    return NetworkPlan(
        model_name=graph.name, strategy=strategy, input_rate=input_rate,
        layers=plans, profile=profile, seed=graph.weight_seed,
    )


# ---------------------------------------------------------------------------
# Resource and throughput models
# ---------------------------------------------------------------------------


@dataclass
class ResourceRow:
    index: int
    name: str
    kind: LayerKind
    multipliers: int
    adders: int
    weight_words: int
    variants: int


@dataclass
class ResourceEstimate:
    rows: list[ResourceRow]

    @property
    def multipliers(self) -> int:
        return sum(r.multipliers for r in self.rows)

    @property
    def adders(self) -> int:
        return sum(r.adders for r in self.rows)

    @property
    def weight_words(self) -> int:
        return sum(r.weight_words for r in self.rows)


def _layer_resources(lp: LayerPlan) -> tuple[int, int, int]:
    """(multipliers, unit outputs, weight words) for one planned layer."""
    spec, impl = lp.spec, lp.impl
    kind = spec.kind
    kk = spec.kernel_h * spec.kernel_w
    words = int(prod(spec.weight_shape())) if kind.is_weighted else 0
    v = lp.active_variants

    if kind.is_pool:
        return 0, 0, 0
    if impl.strategy == LEGACY:
        if kind.conv_style:
            return kk * impl.unit_count, impl.unit_count, words
        return impl.j * impl.unit_count, impl.unit_count, words
    if kind is LayerKind.CONV:
        mult = v * kk * impl.j * impl.unit_count
        return mult, v * impl.unit_count, words
    if kind is LayerKind.DEPTHWISE_CONV:
        mult = v * kk * impl.j * impl.unit_count
        # every KPU emits its own result: no cross-channel adder tree
        return mult, v * impl.j * impl.unit_count, words
    return impl.j * impl.unit_count, impl.unit_count, words


def estimate_resources(plan: NetworkPlan) -> ResourceEstimate:
    """Multiplier (~DSP), adder, and weight-storage counts per layer.

    Adders follow the compressor-tree input heuristic: products minus unit
    outputs. Absolute LUT/FF/BRAM figures are out of scope; only the
    multiplier scaling across rates is meant to be compared.
    """
    rows = []
    for lp in plan.layers:
        mult, outputs, words = _layer_resources(lp)
        rows.append(ResourceRow(
            index=lp.index, name=lp.name, kind=lp.spec.kind,
            multipliers=mult, adders=max(mult - outputs, 0),
            weight_words=words, variants=lp.active_variants,
        ))
    return ResourceEstimate(rows=rows)


@dataclass
class ThroughputEstimate:
    cycles_per_frame: int
    f_clk_mhz: float
    fps: float
    latency_cycles_lower_bound: int


def estimate_throughput(plan: NetworkPlan, f_clk_mhz: float) -> ThroughputEstimate:
    """Frame period from the input rate; fill-time latency lower bound."""
    h, w, c = plan.layers[0].in_shape
    rate = plan.input_rate
    cpf = -(-h * w * c * rate.den // rate.num)

    fill = 0
    for lp, row in zip(plan.layers, plan.profile.layers):
        r = row.input_rate
        if lp.spec.kind.conv_style:
            in_h, in_w, d_in = lp.in_shape
            rows_needed = lp.spec.kernel_h - 1
            fill += -(-rows_needed * in_w * d_in * r.den // r.num)
        fill += lp.impl.configurations
    return ThroughputEstimate(
        cycles_per_frame=int(cpf),
        f_clk_mhz=f_clk_mhz,
        fps=f_clk_mhz * 1e6 / int(cpf),
        latency_cycles_lower_bound=int(cpf) + fill,
    )


# ---------------------------------------------------------------------------
# Plan files
# ---------------------------------------------------------------------------


def plan_to_dict(plan: NetworkPlan) -> dict:
    res = estimate_resources(plan)
    layers = []
    for lp, row in zip(plan.layers, res.rows):
        impl = lp.impl
        variants = [
            {
                "variant_id": s.variant_id,
                "elided": s.elided,
                "window_count": s.window_count,
                "taps": [
                    {"row": t.tap_row, "col": t.tap_col,
                     "lane": t.lane, "delay": t.delay}
                    for t in s.taps
                ],
            }
            for s in lp.schedules
        ]
        layers.append({
            "index": lp.index,
            "name": lp.name,
            "kind": lp.spec.kind.value,
            "d_in": impl.d_in,
            "d_out": impl.d_out,
            "P": impl.pixel_parallelism,
            "j": impl.j,
            "h": impl.h,
            "C": impl.configurations,
            "unit_count": impl.unit_count,
            "multipliers": row.multipliers,
            "achieved_rate": str(impl.achieved_in_rate),
            "target_rate": str(impl.target_rate),
            "exact": impl.exact,
            "strategy": impl.strategy,
            "interleave_factor": impl.interleave_factor,
            "kpu_variants": variants,
        })
    return {
        "model": plan.model_name,
        "strategy": plan.strategy,
        "input_rate": str(plan.input_rate),
        "seed": plan.seed,
        "tool_version": __version__,
        "quantization": "shift-requant-stand-in",
        "layers": layers,
    }


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise PlanError(msg)


def plan_from_dict(graph: ModelGraph, doc: dict) -> NetworkPlan:
    """Rebuild a plan against ``graph``, validating the unit constraints.

    Hand-edited plans are re-checked: j must divide the fan-in and h must
    divide the per-unit output base so that every unit carries the same
    load; C must equal h*d_in/j for the proposed scheme. Schedules are
    re-derived from the geometry.
    """
    graph.validate()
    shapes = graph.shapes()
    entries = doc.get("layers")
    _check(isinstance(entries, list) and len(entries) == len(graph.layers),
           f"plan has {len(entries or [])} layers, model has {len(graph.layers)}")

    input_rate = Rate.parse(str(doc.get("input_rate", "1")))
    strategy = str(doc.get("strategy", PROPOSED))

    plans: list[LayerPlan] = []
    rows: list[LayerRates] = []
    for idx, (layer, entry) in enumerate(zip(graph.layers, entries)):
        in_h, in_w, d_in = shapes[idx]
        out_h, out_w, d_out = shapes[idx + 1]
        where = f"plan layer {idx} ({layer.name})"
        j, h = int(entry["j"]), int(entry["h"])
        p = int(entry.get("P", 1))
        cfg = int(entry["C"])
        lstrategy = str(entry.get("strategy", strategy))
        _check(d_in == int(entry["d_in"]) and d_out == int(entry["d_out"]),
               f"{where}: channel counts disagree with the model")
        _check(j >= 1 and h >= 1 and p >= 1 and cfg >= 1,
               f"{where}: j, h, P, C must be positive")
        base = _h_base(layer.kind, d_out, layer.channel_multiplier)
        if lstrategy == PROPOSED:
            _check(d_in % j == 0,
                   f"{where}: j={j} does not divide in_channels={d_in}; "
                   f"input chunks must tile the fan-in evenly")
            _check(base % h == 0,
                   f"{where}: h={h} does not divide out_channels={base}; "
                   f"every unit must carry the same number of outputs")
            _check(cfg == h * d_in // j,
                   f"{where}: C={cfg} inconsistent, expected h*d_in/j = "
                   f"{h * d_in // j}")
        achieved = Rate.parse(str(entry.get("achieved_rate", f"{p * j}/{h}")))
        target = Rate.parse(str(entry.get("target_rate", str(achieved))))

        # pixel-group alignment is a runtime property; the strict simulation
        # entry re-checks it, and unchecked runs surface it as a deadlock
        schedules = ()
        if layer.kind.conv_style:
            schedules = derive_variants(
                in_h, in_w, layer.kernel_h, layer.kernel_w,
                layer.stride, layer.padding, p,
            )
        if layer.kind is LayerKind.CONV:
            units, kpus = d_out // h, j
        elif layer.kind is LayerKind.DEPTHWISE_CONV:
            units, kpus = layer.channel_multiplier // max(h, 1), j
        elif layer.kind.is_pool:
            units, kpus = 1, j
        else:
            units, kpus = p * (d_out // h), 0
        impl = LayerImpl(
            kind=layer.kind, d_in=d_in, d_out=d_out,
            channel_multiplier=layer.channel_multiplier, strategy=lstrategy,
            pixel_parallelism=p, j=j, h=h, configurations=cfg,
            unit_count=int(entry.get("unit_count", units)), kpus_per_unit=kpus,
            achieved_in_rate=achieved, target_rate=target,
            exact=(achieved == target),
            interleave_factor=int(entry.get("interleave_factor", 1)),
            chunk_pad=(-(-d_in // j)) * j - d_in,
        )
        served_out = target.as_fraction() * Fraction(out_h * out_w, in_h * in_w) \
            * Fraction(d_out, d_in)
        rows.append(LayerRates(target, Rate.from_fraction(served_out), p))
        plans.append(LayerPlan(
            index=idx, name=layer.name, spec=layer, impl=impl,
            in_shape=(in_h, in_w, d_in), out_shape=(out_h, out_w, d_out),
            schedules=schedules,
        ))

    return NetworkPlan(
        model_name=str(doc.get("model", graph.name)), strategy=strategy,
        input_rate=input_rate, layers=plans,
        profile=RateProfile(input_rate=input_rate, layers=rows),
        seed=int(doc.get("seed", graph.weight_seed)),
    )


def load_plan(graph: ModelGraph, path: str | Path) -> NetworkPlan:
    doc = json.loads(Path(path).read_text())
    return plan_from_dict(graph, doc)
