"""Sliding-window schedules for multi-pixel kernel processing units.

With P pixels arriving per cycle, pixel raster index n lands on lane
n mod P at pixel-cycle floor(n / P). Each window is anchored at its
geometric bottom-right cell, linearized over the (possibly padded)
raster: n_a = row_br * map_w + col_br. Windows are grouped into P
variants by n_a mod P; within a variant the (lane, delay) wiring of every
tap is a constant, because the anchor-to-tap raster distance depends only
on the tap position:

    delta(kr, kc) = (kernel_h - 1 - kr) * map_w + (kernel_w - 1 - kc)

For unpadded windows the anchor is simply the window's last-arriving real
pixel and the emission slot is its pixel-cycle. Windows clipped by
bottom/right ZeroSame padding keep the linearized anchor for lane/delay
purposes, but padded positions cost no stream time: such a window emits in
the pixel-cycle of the last real pixel at or before its anchor (several
clipped windows can share one slot, the frame-tail burst a blanking
interval would carry). Padded taps are zeroed by the padding-select
schedules (per kernel column for horizontal padding, per kernel row for
vertical; a tap is padded iff its row or column is).

A variant with no stride-valid windows is elided: it would only ever
produce outputs the stride filter discards.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model_ir import Padding, conv_geometry

__all__ = [
    "TapAssignment",
    "KpuVariantSchedule",
    "CoverageReport",
    "ScheduleError",
    "derive_variants",
    "window_coverage",
    "max_delay_bound",
]


class ScheduleError(ValueError):
    """The requested geometry admits no consistent fixed tap wiring."""


@dataclass(frozen=True)
class TapAssignment:
    """One kernel tap wired to a lane at a fixed pixel-cycle delay."""

    tap_row: int
    tap_col: int
    lane: int
    delay: int


@dataclass
class KpuVariantSchedule:
    """Window schedule for one KPU variant (one anchor-lane class)."""

    variant_id: int
    pixel_parallelism: int
    map_h: int
    map_w: int
    kernel_h: int
    kernel_w: int
    stride: int
    padding: Padding
    pad_top: int
    pad_left: int
    taps: tuple[TapAssignment, ...]
    elided: bool
    # per window, ascending anchor order (== canonical output raster order)
    slots: np.ndarray      # emission pixel-cycle (last real pixel's slot)
    out_rows: np.ndarray
    out_cols: np.ndarray

    @property
    def window_count(self) -> int:
        return int(self.slots.size)

    @property
    def valid_output_cycles(self) -> list[int]:
        """Pixel-cycles (one frame) at which this variant emits a window."""
        return self.slots.tolist()

    def _src_rows(self, kr: int) -> np.ndarray:
        return self.out_rows * self.stride - self.pad_top + kr

    def _src_cols(self, kc: int) -> np.ndarray:
        return self.out_cols * self.stride - self.pad_left + kc

    @property
    def padding_select(self) -> dict[int, np.ndarray]:
        """Per kernel column: emission cycles with that column out of bounds."""
        out: dict[int, np.ndarray] = {}
        for kc in range(self.kernel_w):
            cols = self._src_cols(kc)
            mask = (cols < 0) | (cols >= self.map_w)
            out[kc] = self.slots[mask]
        return out

    @property
    def padding_select_rows(self) -> dict[int, np.ndarray]:
        """Per kernel row: emission cycles with that row out of bounds."""
        out: dict[int, np.ndarray] = {}
        for kr in range(self.kernel_h):
            rows = self._src_rows(kr)
            mask = (rows < 0) | (rows >= self.map_h)
            out[kr] = self.slots[mask]
        return out

    def pad_mask(self, index: int) -> np.ndarray:
        """Boolean (kernel_h, kernel_w) mask of padded taps for window #index."""
        r0 = int(self.out_rows[index]) * self.stride - self.pad_top
        c0 = int(self.out_cols[index]) * self.stride - self.pad_left
        rows = r0 + np.arange(self.kernel_h)
        cols = c0 + np.arange(self.kernel_w)
        bad_r = (rows < 0) | (rows >= self.map_h)
        bad_c = (cols < 0) | (cols >= self.map_w)
        return bad_r[:, None] | bad_c[None, :]


def max_delay_bound(map_w: int, kernel_h: int, kernel_w: int, p: int) -> int:
    """Upper bound on any tap delay in pixel-cycles."""
    return -(-((kernel_h - 1) * map_w + (kernel_w - 1)) // p) + 1


@lru_cache(maxsize=512)
def derive_variants(map_h: int, map_w: int, kernel_h: int, kernel_w: int,
                    stride: int = 1, padding: Padding = Padding.NONE,
                    pixel_parallelism: int = 1) -> tuple[KpuVariantSchedule, ...]:
    """Derive the P variant schedules for one layer geometry.

    Exactly P schedules are returned, indexed by anchor lane; those without
    stride-valid windows are marked elided. The per-window wiring is
    verified against the variant's fixed tap pattern and a ScheduleError is
    raised on any inconsistency (none is known to be reachable; the planner
    additionally rejects map_w % P != 0, where the wiring would not survive
    row/frame boundaries in a continuous stream).
    """
    p = pixel_parallelism
    if p < 1:
        raise ScheduleError("pixel parallelism must be >= 1")
    out_h, out_w, pad_top, pad_left = conv_geometry(
        map_h, map_w, kernel_h, kernel_w, stride, padding
    )

    oi, oj = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    oi = oi.ravel()
    oj = oj.ravel()
    anchor_r = oi * stride - pad_top + kernel_h - 1
    anchor_c = oj * stride - pad_left + kernel_w - 1
    n_anchor = anchor_r * map_w + anchor_c
    if n_anchor.size and n_anchor.min() < 0:
        raise ScheduleError("window anchor precedes the stream start")

    kr, kc = np.meshgrid(np.arange(kernel_h), np.arange(kernel_w), indexing="ij")
    delta = ((kernel_h - 1 - kr) * map_w + (kernel_w - 1 - kc)).ravel()

    schedules = []
    for m in range(p):
        mask = (n_anchor % p) == m
        common = dict(
            variant_id=m, pixel_parallelism=p, map_h=map_h, map_w=map_w,
            kernel_h=kernel_h, kernel_w=kernel_w, stride=stride,
            padding=padding, pad_top=pad_top, pad_left=pad_left,
        )
        if not mask.any():
            schedules.append(KpuVariantSchedule(
                taps=(), elided=True,
                slots=np.zeros(0, dtype=np.int64),
                out_rows=np.zeros(0, dtype=np.int64),
                out_cols=np.zeros(0, dtype=np.int64),
                **common,
            ))
            continue

        anchors = n_anchor[mask]
        order = np.argsort(anchors, kind="stable")
        anchors = anchors[order]
        # emission slot: pixel-cycle of the last real pixel at or before the
        # anchor (padded positions take no stream time, so clipped windows
        # emit with the frame tail instead of waiting for absent pixels)
        a_r = anchor_r[mask][order]
        a_c = anchor_c[mask][order]
        rank = np.minimum(a_r, map_h) * map_w \
            + np.where(a_r < map_h, np.minimum(a_c + 1, map_w), 0)
        slots = (rank - 1) // p
        n0 = int(anchors[0])  # earliest window fixes the pattern

        taps = []
        for t in range(delta.size):
            n_tap = n0 - int(delta[t])
            taps.append(TapAssignment(
                tap_row=int(kr.ravel()[t]), tap_col=int(kc.ravel()[t]),
                lane=n_tap % p, delay=n0 // p - n_tap // p,
            ))

        # guard: the fixed pattern must reproduce every window's real taps
        # (delays are relative to the anchor's own pixel-cycle)
        n_taps = anchors[:, None] - delta[None, :]
        lanes_ok = (n_taps % p) == np.array([t.lane for t in taps])[None, :]
        delays_ok = ((anchors // p)[:, None] - n_taps // p) == np.array(
            [t.delay for t in taps])[None, :]
        if not (lanes_ok.all() and delays_ok.all()):
            hint = ""
            if map_w % p:
                hint = (" (map width is not a multiple of the pixel "
                        "parallelism; pad the row length)")
            raise ScheduleError(
                f"variant {m}: tap pattern varies between windows{hint}"
            )
        if any(t.delay < 0 for t in taps):
            raise ScheduleError(f"variant {m}: negative tap delay")

        schedules.append(KpuVariantSchedule(
            taps=tuple(taps), elided=False,
            slots=slots.astype(np.int64),
            out_rows=oi[mask][order].astype(np.int64),
            out_cols=oj[mask][order].astype(np.int64),
            **common,
        ))
    return tuple(schedules)


@dataclass
class CoverageReport:
    total_windows: int
    per_variant: dict[int, int]
    elided_variants: list[int]
    ok: bool
    problems: list[str]


def window_coverage(schedules: tuple[KpuVariantSchedule, ...], map_h: int,
                    map_w: int, kernel_h: int, kernel_w: int, stride: int,
                    padding: Padding, pixel_parallelism: int) -> CoverageReport:
    """Check that the variants partition the stride-valid window set.

    Windows are re-enumerated from the geometry; every one must be claimed
    by exactly one non-elided variant, and elided variants must claim none.
    """
    out_h, out_w, _, _ = conv_geometry(
        map_h, map_w, kernel_h, kernel_w, stride, padding
    )
    expected = {(i, j) for i in range(out_h) for j in range(out_w)}

    problems: list[str] = []
    claimed: dict[tuple[int, int], int] = {}
    per_variant: dict[int, int] = {}
    for sched in schedules:
        per_variant[sched.variant_id] = sched.window_count
        if sched.elided and sched.window_count:
            problems.append(f"variant {sched.variant_id} elided but claims windows")
        for i, j in zip(sched.out_rows.tolist(), sched.out_cols.tolist()):
            key = (i, j)
            if key in claimed:
                problems.append(
                    f"window {key} claimed by variants "
                    f"{claimed[key]} and {sched.variant_id}"
                )
            claimed[key] = sched.variant_id

    missing = expected - set(claimed)
    extra = set(claimed) - expected
    if missing:
        problems.append(f"{len(missing)} windows unclaimed, e.g. {sorted(missing)[:3]}")
    if extra:
        problems.append(f"{len(extra)} claims outside the output grid")

    return CoverageReport(
        total_windows=len(expected),
        per_variant=per_variant,
        elided_variants=[s.variant_id for s in schedules if s.elided],
        ok=not problems,
        problems=problems,
    )
