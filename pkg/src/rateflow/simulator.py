"""Cycle-level simulation of a planned continuous-flow pipeline.

Every layer becomes an engine that consumes its input feature stream in
j-feature chunks, spends its per-slot cycle budget, and emits finished
windows (or FCU pixel batches) in raster order. The driver paces the input
stream feature-by-feature at the sustainable rate, so steady-state stalls
and utilization come out of the token flow itself rather than a formula.
Functional values are checked bit-exactly against the frame-at-once
reference, which is computed by independent code.

What a cycle means here: arrivals land first (the driver for layer 0,
upstream emissions from the previous cycle for the rest), then every
engine takes one micro-step. An engine micro-step is one configuration
cycle: it either executes (operands present) or stalls. Emission happens
in a burst when a slot's last cycle executes; the settling behaviour of
the queues makes bursts invisible to steady-state utilization for
divisibility-clean plans.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import rng
from .dse import LEGACY, PROPOSED, LayerPlan, NetworkPlan, PlanError
from .golden import golden_forward
from .kpu_schedule import ScheduleError
from .model_ir import LayerKind, ModelGraph, Tensor8

__all__ = [
    "SimError",
    "DeadlockError",
    "LayerSimStats",
    "SimReport",
    "simulate",
]


class SimError(RuntimeError):
    pass


class DeadlockError(SimError):
    """No token moved for longer than the watchdog allows."""


class StreamBuf:
    """Append-only int8 feature stream with depth tracking.

    ``count`` is the logical length; storage is capped at ``capacity`` and
    reads outside the stored range return zeros (only ever hit by padded
    taps and by diagnostics, never by live operands of a valid plan).
    """

    __slots__ = ("data", "capacity", "count", "consumed", "high_water")

    def __init__(self, capacity: int):
        self.data = np.zeros(capacity, dtype=np.int8)
        self.capacity = capacity
        self.count = 0
        self.consumed = 0
        self.high_water = 0

    def append(self, values: np.ndarray) -> int:
        n = int(values.size)
        if n == 0:
            return 0
        base = self.count
        end = min(base + n, self.capacity)
        if end > base:
            self.data[base:end] = values[: end - base]
        self.count = base + n
        depth = self.count - self.consumed
        if depth > self.high_water:
            self.high_water = depth
        return n

    def read_pixels(self, pixel_idx: np.ndarray, d: int) -> np.ndarray:
        """Gather whole pixels as int64, zeros outside the stored range."""
        flat = pixel_idx[..., None] * d + np.arange(d, dtype=np.int64)
        limit = min(self.count, self.capacity)
        ok = (flat >= 0) & (flat < limit)
        out = np.zeros(flat.shape, dtype=np.int64)
        if ok.any():
            out[ok] = self.data[flat[ok]]
        return out

    def mark_consumed(self, upto: int) -> None:
        if upto > self.consumed:
            self.consumed = min(upto, self.count)


def _requant(acc: np.ndarray, shift: int, relu: bool) -> np.ndarray:
    out = acc >> shift
    np.clip(out, -128, 127, out=out)
    if relu:
        np.maximum(out, 0, out=out)
    return out.astype(np.int8)


@dataclass
class LayerSimStats:
    index: int
    name: str
    kind: LayerKind
    strategy: str
    unit_count: int
    utilization: float            # min across units, steady-state window
    unit_utilization: list[float]
    busy_fraction: float
    stall_cycles: int
    window_cycles: int
    fifo_high_water: int          # input stream depth, features
    completions: list[int]        # global cycle of each frame completion


@dataclass
class SimReport:
    model_name: str
    strategy: str
    frames: int
    input_rate: str
    sigma: str                    # driver derate, "1" when none
    cycles_total: int
    measured_cycles_per_frame: Optional[int]
    predicted_cycles_per_frame: int
    functional_pass: bool
    first_mismatch: Optional[tuple[int, int, int, int, int]]  # layer, frame, index, got, want
    layers: list[LayerSimStats]
    seed: int
    quantization: str = "shift-requant-stand-in"

    @property
    def min_utilization(self) -> float:
        return min(l.utilization for l in self.layers)

    def summary_line(self) -> str:
        verdict = "PASS" if self.functional_pass else "FAIL"
        cpf = ("%d" % self.measured_cycles_per_frame
               if self.measured_cycles_per_frame is not None else "n/a")
        return (f"{verdict}, utilization {self.min_utilization * 100:.1f}%, "
                f"{cpf} cycles/frame (predicted "
                f"{self.predicted_cycles_per_frame})")


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------


def _micro_schedule(lp: LayerPlan) -> tuple[int, np.ndarray, np.ndarray]:
    """(slot_cycles, per-cycle need offsets, per-cycle x per-unit validity).

    Need offsets are relative to the slot's first input feature; executing
    micro-cycle c requires the input stream to hold slot_base + need[c]
    features. Validity marks cycles whose operand chunk is fully real and
    whose output phase maps to a real channel; divisor-clean plans are
    all-valid, rounding (legacy, or hand-edited j/h) is not.
    """
    impl = lp.impl
    d_in = impl.d_in
    p = impl.pixel_parallelism

    if impl.strategy == LEGACY and impl.kind.conv_style:
        c_pace = impl.configurations
        cyc = np.arange(1, c_pace + 1, dtype=np.int64)
        need = -(-cyc * d_in // c_pace)  # smooth d_in/C consumption
        valid = np.ones((c_pace, 1), dtype=bool)
        return c_pace, need, valid

    j, h = impl.j, impl.h
    chunks = -(-d_in // j)
    sched_len = chunks * h
    c_pace = max(impl.configurations, sched_len)
    if impl.kind is LayerKind.DEPTHWISE_CONV:
        base = impl.channel_multiplier
    elif impl.kind.is_pool:
        base = 1
    else:
        base = impl.d_out
    units = -(-base // h)

    c = np.arange(c_pace, dtype=np.int64)
    k = np.minimum(c // h, chunks - 1)
    phase = c % h
    need = (p - 1) * d_in + np.minimum((k + 1) * j, d_in)
    need[sched_len:] = p * d_in

    chunk_ok = ((k + 1) * j <= d_in) & (c < sched_len)
    u = np.arange(units, dtype=np.int64)
    phase_ok = (u[None, :] * h + phase[:, None]) < base
    return c_pace, need, chunk_ok[:, None] & phase_ok


class _Engine:
    """Shared pacing, accounting, and completion logic for one layer."""

    def __init__(self, lp: LayerPlan, in_buf: StreamBuf, out_buf: StreamBuf,
                 frames: int, trace: Optional[Callable] = None):
        self.lp = lp
        self.impl = lp.impl
        self.in_buf = in_buf
        self.out_buf = out_buf
        self.frames = frames
        self.trace = trace

        self.d_in = lp.impl.d_in
        self.d_out = lp.impl.d_out
        self.p = lp.impl.pixel_parallelism
        in_h, in_w, _ = lp.in_shape
        out_h, out_w, _ = lp.out_shape
        self.in_w = in_w
        self.in_pixels = in_h * in_w
        self.out_features_per_frame = out_h * out_w * self.d_out
        self.slots_per_frame = -(-self.in_pixels // self.p)
        self.slots_total = frames * self.slots_per_frame

        self.c_pace, self.rel_need, self.valid_table = _micro_schedule(lp)
        self.units = self.valid_table.shape[1]

        self.slot = 0
        self.cycle_in_slot = 0
        self.busy = 0
        self.valid = np.zeros(self.units, dtype=np.int64)
        self.completions: list[int] = []
        self._snapshots: list[tuple[int, np.ndarray]] = []
        self.done = False
        # retire operands no window can still reach (depth diagnostics)
        self._lookback = self._lookback_pixels()

    def _lookback_pixels(self) -> int:
        return self.p

    def current_need(self) -> int:
        return self.slot * self.p * self.d_in + int(self.rel_need[self.cycle_in_slot])

    def step(self, t: int) -> bool:
        if self.done:
            return False
        if self.in_buf.count < self.current_need():
            return False
        self.busy += 1
        self.valid += self.valid_table[self.cycle_in_slot]
        self.cycle_in_slot += 1
        emitted = False
        if self.cycle_in_slot == self.c_pace:
            self.cycle_in_slot = 0
            self._emit(self.slot, t)
            self.slot += 1
            emitted = True
            self.in_buf.mark_consumed(
                max(0, (self.slot - self._lookback) * self.p) * self.d_in
            )
            if self.slot >= self.slots_total:
                self.done = True
        return emitted

    def _emit(self, slot: int, t: int) -> None:
        raise NotImplementedError

    def _record_output(self, values: np.ndarray, t: int) -> None:
        self.out_buf.append(values)
        boundary = (len(self.completions) + 1) * self.out_features_per_frame
        while self.out_buf.count >= boundary and len(self.completions) < self.frames:
            self.completions.append(t)
            self._snapshots.append((self.busy, self.valid.copy()))
            if self.trace:
                self.trace(t, self.lp.name, "frame_complete",
                           len(self.completions) - 1)
            boundary = (len(self.completions) + 1) * self.out_features_per_frame

    def stats(self) -> LayerSimStats:
        if len(self._snapshots) >= 2:
            t0, t1 = self.completions[0], self.completions[-1]
            b0, v0 = self._snapshots[0]
            b1, v1 = self._snapshots[-1]
            window = t1 - t0
        elif self._snapshots:
            t1 = self.completions[0]
            b0, v0 = 0, np.zeros(self.units, dtype=np.int64)
            b1, v1 = self._snapshots[0]
            window = t1 + 1
        else:
            window, b0, b1 = 0, 0, self.busy
            v0 = np.zeros(self.units, dtype=np.int64)
            v1 = self.valid
        if window <= 0:
            window = max(self.busy, 1)
        per_unit = ((v1 - v0) / window).tolist()
        busy_frac = (b1 - b0) / window
        return LayerSimStats(
            index=self.lp.index, name=self.lp.name, kind=self.lp.spec.kind,
            strategy=self.impl.strategy, unit_count=self.impl.unit_count,
            utilization=min(per_unit) if per_unit else busy_frac,
            unit_utilization=[round(u, 6) for u in per_unit],
            busy_fraction=busy_frac,
            stall_cycles=int(window - (b1 - b0)),
            window_cycles=int(window),
            fifo_high_water=self.in_buf.high_water,
            completions=list(self.completions),
        )


class _ConvEngine(_Engine):
    """Sliding-window layers: conv, depthwise conv, and both pools."""

    def __init__(self, lp: LayerPlan, in_buf: StreamBuf, out_buf: StreamBuf,
                 frames: int, trace=None):
        spec = lp.spec
        self.kh, self.kw = spec.kernel_h, spec.kernel_w
        self.kk = self.kh * self.kw
        self.stride = spec.stride
        super().__init__(lp, in_buf, out_buf, frames, trace)
        in_h, in_w, _ = lp.in_shape
        pt, pl = spec.pad_offsets(in_h, in_w)

        slots, rows, cols = [], [], []
        for sched in lp.schedules:
            if sched.elided:
                continue
            slots.append(sched.slots)
            rows.append(sched.out_rows)
            cols.append(sched.out_cols)
        slots = np.concatenate(slots) if slots else np.zeros(0, np.int64)
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        order = np.lexsort((cols, rows, slots))
        self.em_slots = slots[order]
        out_w = lp.out_shape[1]
        raster = rows[order] * out_w + cols[order]
        if raster.size and np.any(np.diff(raster) <= 0):
            raise ScheduleError(
                f"layer {lp.index}: emission order differs from the output "
                f"raster; schedule derivation is inconsistent"
            )

        # per-window operand gather: real tap pixel indices and padding mask
        r0 = rows[order] * self.stride - pt
        c0 = cols[order] * self.stride - pl
        kr = np.arange(self.kh)
        kc = np.arange(self.kw)
        tap_r = r0[:, None, None] + kr[None, :, None]
        tap_c = c0[:, None, None] + kc[None, None, :]
        pad = (tap_r < 0) | (tap_r >= in_h) | (tap_c < 0) | (tap_c >= in_w)
        pix = np.clip(tap_r, 0, in_h - 1) * in_w + np.clip(tap_c, 0, in_w - 1)
        self.gather_pix = pix.reshape(-1, self.kk)
        self.pad_mask = pad.reshape(-1, self.kk)
        self.valid_taps = (~self.pad_mask).sum(axis=1)

        w = spec.weights
        self.w_conv = None
        self.w_dw = None
        if spec.kind is LayerKind.CONV:
            self.w_conv = w.reshape(self.d_out, self.kk, self.d_in).astype(np.int64)
        elif spec.kind is LayerKind.DEPTHWISE_CONV:
            # (in, mult, kh, kw) -> (in, mult, kk)
            self.w_dw = w.reshape(self.d_in, spec.channel_multiplier, self.kk
                                  ).astype(np.int64)

    def _lookback_pixels(self) -> int:
        return (self.kh - 1) * self.in_w + self.kw - 1 + self.p

    def _emit(self, slot: int, t: int) -> None:
        f, s_loc = divmod(slot, self.slots_per_frame)
        lo = np.searchsorted(self.em_slots, s_loc, side="left")
        hi = np.searchsorted(self.em_slots, s_loc, side="right")
        if lo == hi:
            return
        idx = np.arange(lo, hi)
        pix = self.gather_pix[idx] + f * self.in_pixels
        win = self.in_buf.read_pixels(pix, self.d_in)  # (n, kk, d_in)
        mask = self.pad_mask[idx]
        spec = self.lp.spec
        kind = spec.kind

        if kind is LayerKind.MAX_POOL:
            vals = np.where(mask[..., None], np.int64(-128), win)
            acc = vals.max(axis=1)
            if spec.relu:
                out = _requant(acc, spec.requant_shift, True)
            else:
                out = acc.astype(np.int8)
        elif kind is LayerKind.AVG_POOL:
            vals = np.where(mask[..., None], np.int64(0), win)
            total = vals.sum(axis=1)
            pop = self.valid_taps[idx][:, None]
            q = np.sign(total) * (np.abs(total) // pop)  # truncate toward zero
            out = _requant(q, spec.requant_shift, spec.relu)
        else:
            win = np.where(mask[..., None], np.int64(0), win)
            if kind is LayerKind.CONV:
                acc = np.einsum("nkc,okc->no", win, self.w_conv)
            else:
                acc = np.einsum("nkc,cmk->ncm", win, self.w_dw
                                ).reshape(win.shape[0], -1)
            out = _requant(acc, spec.requant_shift, spec.relu)

        if self.trace:
            self.trace(t, self.lp.name, "emit", int(out.size))
        self._record_output(out.ravel(), t)


class _FcuEngine(_Engine):
    """Pointwise conv and fully connected: P pixel banks, no window state."""

    def __init__(self, lp: LayerPlan, in_buf: StreamBuf, out_buf: StreamBuf,
                 frames: int, trace=None):
        super().__init__(lp, in_buf, out_buf, frames, trace)
        self.w = lp.spec.weights.astype(np.int64)  # (d_out, d_in)
        self.total_pixels = frames * self.in_pixels

    def _emit(self, slot: int, t: int) -> None:
        pix = slot * self.p + np.arange(self.p, dtype=np.int64)
        pix = pix[pix < self.total_pixels]  # ragged tail only when unchecked
        if pix.size == 0:
            return
        x = self.in_buf.read_pixels(pix, self.d_in)  # (p, d_in)
        acc = x @ self.w.T
        out = _requant(acc, self.lp.spec.requant_shift, self.lp.spec.relu)
        if self.trace:
            self.trace(t, self.lp.name, "emit", int(out.size))
        self._record_output(out.ravel(), t)


# ---------------------------------------------------------------------------
# Driver and top-level loop
# ---------------------------------------------------------------------------


class _Driver:
    """Feeds the first stream at floor-paced cumulative rate."""

    def __init__(self, source: np.ndarray, rate: Fraction, buf: StreamBuf):
        self.source = source
        self.num = rate.numerator
        self.den = rate.denominator
        self.buf = buf
        self.sent = 0

    def step(self, t: int) -> bool:
        target = min(self.num * (t + 1) // self.den, self.source.size)
        if target <= self.sent:
            return self.sent < self.source.size
        self.buf.append(self.source[self.sent:target])
        self.sent = target
        return True


def _validate_plan(graph: ModelGraph, plan: NetworkPlan) -> None:
    shapes = graph.shapes()
    if len(plan.layers) != len(graph.layers):
        raise PlanError(
            f"plan has {len(plan.layers)} layers, model has {len(graph.layers)}"
        )
    for lp, layer, shape in zip(plan.layers, graph.layers, shapes):
        impl = lp.impl
        where = f"layer {lp.index} ({lp.name})"
        d_in = shape[2]
        if impl.d_in != d_in or impl.d_out != layer.out_channels:
            raise PlanError(f"{where}: channel counts disagree with the model")
        if impl.strategy == PROPOSED:
            if d_in % impl.j:
                raise PlanError(
                    f"{where}: j={impl.j} does not divide in_channels={d_in}; "
                    f"input chunks must tile the fan-in evenly"
                )
            if layer.kind is LayerKind.DEPTHWISE_CONV:
                base = layer.channel_multiplier
            elif layer.kind.is_pool:
                base = 1
            else:
                base = layer.out_channels
            if base % impl.h:
                raise PlanError(
                    f"{where}: h={impl.h} does not divide out_channels={base}; "
                    f"every unit must carry the same number of outputs"
                )
            if impl.configurations != impl.h * d_in // impl.j:
                raise PlanError(
                    f"{where}: C={impl.configurations} inconsistent, expected "
                    f"h*d_in/j = {impl.h * d_in // impl.j}"
                )
        if layer.kind.conv_style and impl.pixel_parallelism > 1 \
                and shape[1] % impl.pixel_parallelism:
            raise PlanError(
                f"{where}: map width {shape[1]} not a multiple of "
                f"P={impl.pixel_parallelism} (pad the row length)"
            )
        if not layer.kind.conv_style and impl.pixel_parallelism > 1 \
                and (shape[0] * shape[1]) % impl.pixel_parallelism:
            raise PlanError(
                f"{where}: {shape[0] * shape[1]} pixels per frame cannot form "
                f"whole groups of {impl.pixel_parallelism}"
            )


def _default_images(graph: ModelGraph, frames: int, seed: int) -> list[Tensor8]:
    h, w, c = graph.input_h, graph.input_w, graph.input_channels
    out = []
    for f in range(frames):
        flat = rng.int8_block(rng.layer_seed(seed ^ 0xF00D, f), h * w * c)
        out.append(Tensor8(flat.reshape(h, w, c)))
    return out


def simulate(graph: ModelGraph, plan: NetworkPlan, frames: int = 2,
             images: Optional[list[Tensor8]] = None, seed: Optional[int] = None,
             strict: bool = True, trace_path: Optional[str | Path] = None) -> SimReport:
    """Run the planned pipeline for ``frames`` back-to-back input frames.

    strict re-checks the plan's divisor constraints before running; pass
    False to observe what rounding or hand-edited parameters do to the
    utilization and pacing instead of refusing them. Functional outputs
    are compared bit-exactly against the frame-at-once reference for every
    layer and frame.
    """
    if frames < 1:
        raise SimError("need at least one frame")
    graph.validate()
    if strict:
        _validate_plan(graph, plan)

    seed = graph.weight_seed if seed is None else seed
    if images is None:
        images = _default_images(graph, frames, seed)
    if len(images) != frames:
        raise SimError(f"need {frames} images, got {len(images)}")
    h, w, c = graph.input_h, graph.input_w, graph.input_channels
    for img in images:
        if img.data.shape != (h, w, c):
            raise SimError(f"image shape {img.data.shape} != {(h, w, c)}")

    # sustainable pacing: slowest layer capacity over its served rate
    sigma = Fraction(1)
    micro = [_micro_schedule(lp)[0] for lp in plan.layers]
    for lp, c_pace, row in zip(plan.layers, micro, plan.profile.layers):
        cap = Fraction(lp.impl.pixel_parallelism * lp.impl.d_in, c_pace)
        ratio = cap / row.input_rate.as_fraction()
        if ratio < sigma:
            sigma = ratio
    eff_rate = plan.input_rate.as_fraction() * sigma

    # plumbing
    frame_features = h * w * c
    source = np.concatenate([img.raster() for img in images])
    bufs = [StreamBuf(frames * frame_features)]
    for lp in plan.layers:
        oh, ow, oc = lp.out_shape
        bufs.append(StreamBuf(frames * oh * ow * oc))

    trace_rows: list[tuple] = []
    trace_fn = None
    if trace_path is not None:
        trace_fn = lambda t, name, ev, val: trace_rows.append((t, name, ev, val))

    engines: list[_Engine] = []
    for i, lp in enumerate(plan.layers):
        cls = _ConvEngine if lp.spec.kind.conv_style else _FcuEngine
        engines.append(cls(lp, bufs[i], bufs[i + 1], frames, trace_fn))

    driver = _Driver(source, eff_rate, bufs[0])
    predicted_cpf = -(-frame_features * eff_rate.denominator
                      // eff_rate.numerator)
    gap_limit = ((len(engines) + 2) * int(predicted_cpf)
                 + 2 * sum(micro) + 1024)

    t = 0
    last_progress = 0
    hard_stop = 1 << 40
    while not engines[-1].done:
        progress = driver.step(t)
        for eng in reversed(engines):
            if eng.step(t):
                progress = True
        if progress:
            last_progress = t
        elif t - last_progress > gap_limit:
            stuck = [
                f"{e.lp.name}: slot {e.slot}/{e.slots_total} cycle "
                f"{e.cycle_in_slot}, needs {e.current_need()} features, "
                f"input has {e.in_buf.count}"
                for e in engines if not e.done
            ]
            shown = "; ".join(stuck[:4])
            if len(stuck) > 4:
                shown += f"; ... {len(stuck) - 4} more"
            raise DeadlockError(
                "no token movement for %d cycles; stuck engines: %s"
                % (t - last_progress, shown)
            )
        t += 1
        if t > hard_stop:
            raise SimError("cycle budget exhausted")

    cycles_total = t

    # bit-exact functional check against the frame-at-once reference
    functional_pass = True
    first_mismatch = None
    for f, img in enumerate(images):
        expect = golden_forward(graph, img)
        for li, ref in enumerate(expect):
            flat = ref.raster()
            got = bufs[li + 1].data[f * flat.size:(f + 1) * flat.size]
            if not np.array_equal(got, flat):
                bad = int(np.nonzero(got != flat)[0][0])
                first_mismatch = (li, f, bad, int(got[bad]), int(flat[bad]))
                functional_pass = False
                break
        if not functional_pass:
            break

    comp = engines[-1].completions
    measured = comp[-1] - comp[-2] if len(comp) >= 2 else None

    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cycle", "layer", "event", "value"])
            wr.writerows(trace_rows)

    return SimReport(
        model_name=plan.model_name,
        strategy=plan.strategy,
        frames=frames,
        input_rate=str(plan.input_rate),
        sigma=str(sigma),
        cycles_total=cycles_total,
        measured_cycles_per_frame=measured,
        predicted_cycles_per_frame=int(predicted_cpf),
        functional_pass=functional_pass,
        first_mismatch=first_mismatch,
        layers=[e.stats() for e in engines],
        seed=seed,
    )
