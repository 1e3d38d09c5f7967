"""Window schedules: lane/delay wiring, emission slots, variant partition.

The oracle enumerates windows one at a time and derives each window's
slot by literally counting real pixels at or before its anchor in scan
order, and each tap's lane/delay from the raster distance; the library
computes these vectorized over anchor classes, so every comparison here
crosses an implementation boundary.
"""

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rateflow.kpu_schedule import (
    ScheduleError,
    derive_variants,
    max_delay_bound,
    window_coverage,
)
from rateflow.model_ir import Padding


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def _geometry_ref(h, w, kh, kw, s, padding):
    if padding is Padding.ZERO_SAME:
        out_h, out_w = (h + s - 1) // s, (w + s - 1) // s
        pt = max((out_h - 1) * s + kh - h, 0) // 2
        pl = max((out_w - 1) * s + kw - w, 0) // 2
        return out_h, out_w, pt, pl
    return (h - kh) // s + 1, (w - kw) // s + 1, 0, 0


@dataclass
class RefWindow:
    out_row: int
    out_col: int
    anchor_n: int      # linearized over the map width
    variant: int
    slot: int
    taps: dict         # (kr, kc) -> (lane, delay)
    padded: dict       # (kr, kc) -> bool


def ref_windows(h, w, kh, kw, s, padding, p):
    """Every window of the geometry, in output raster order."""
    out_h, out_w, pt, pl = _geometry_ref(h, w, kh, kw, s, padding)
    wins = []
    for oi in range(out_h):
        for oj in range(out_w):
            a_r = oi * s - pt + kh - 1
            a_c = oj * s - pl + kw - 1
            n_a = a_r * w + a_c
            # real pixels at or before the anchor position in scan order
            rank = sum(
                1
                for r in range(h)
                for c in range(w)
                if r < a_r or (r == a_r and c <= a_c)
            )
            taps, padded = {}, {}
            for kr in range(kh):
                for kc in range(kw):
                    n_tap = n_a - ((kh - 1 - kr) * w + (kw - 1 - kc))
                    taps[kr, kc] = (n_tap % p, n_a // p - n_tap // p)
                    src_r = oi * s - pt + kr
                    src_c = oj * s - pl + kc
                    padded[kr, kc] = not (0 <= src_r < h and 0 <= src_c < w)
            wins.append(RefWindow(
                out_row=oi, out_col=oj, anchor_n=n_a, variant=n_a % p,
                slot=(rank - 1) // p, taps=taps, padded=padded,
            ))
    return wins


def assert_matches_oracle(h, w, kh, kw, s, padding, p):
    scheds = derive_variants(h, w, kh, kw, s, padding, p)
    assert len(scheds) == p
    wins = ref_windows(h, w, kh, kw, s, padding, p)

    bound = max_delay_bound(w, kh, kw, p)
    for m, sched in enumerate(scheds):
        mine = sorted((x for x in wins if x.variant == m),
                      key=lambda x: x.anchor_n)
        assert sched.variant_id == m
        assert sched.elided == (not mine)
        assert sched.window_count == len(mine)
        assert sched.slots.tolist() == [x.slot for x in mine]
        assert sched.out_rows.tolist() == [x.out_row for x in mine]
        assert sched.out_cols.tolist() == [x.out_col for x in mine]

        if mine:
            # one fixed wiring must reproduce every window in the class
            pattern = mine[0].taps
            for x in mine:
                assert x.taps == pattern
            got = {(t.tap_row, t.tap_col): (t.lane, t.delay)
                   for t in sched.taps}
            assert got == pattern
            assert all(0 <= d <= bound for _, d in got.values())

        # per-column / per-row zero-select cycles
        for kc in range(kw):
            ref = [x.slot for x in mine
                   if not (0 <= x.out_col * s - _geometry_ref(
                       h, w, kh, kw, s, padding)[3] + kc < w)]
            assert sched.padding_select[kc].tolist() == ref
        for kr in range(kh):
            ref = [x.slot for x in mine
                   if not (0 <= x.out_row * s - _geometry_ref(
                       h, w, kh, kw, s, padding)[2] + kr < h)]
            assert sched.padding_select_rows[kr].tolist() == ref

        for idx, x in enumerate(mine):
            mask = sched.pad_mask(idx)
            for kr in range(kh):
                for kc in range(kw):
                    assert bool(mask[kr, kc]) == x.padded[kr, kc]
    return scheds


# ---------------------------------------------------------------------------
# frozen examples
# ---------------------------------------------------------------------------


def test_two_lane_interleave_frozen():
    s0, s1 = derive_variants(5, 5, 3, 3, 1, Padding.NONE, 2)
    assert s0.window_count == 5 and s1.window_count == 4
    assert s0.slots.tolist() == [6, 7, 9, 11, 12]
    wired = {(t.tap_row, t.tap_col): (t.lane, t.delay) for t in s0.taps}
    assert wired[2, 2] == (0, 0)
    assert wired[0, 0] == (0, 6)
    assert wired[0, 1] == (1, 6)
    assert not s0.elided and not s1.elided


def test_stride_two_elides_odd_lane():
    scheds = derive_variants(5, 5, 3, 3, 2, Padding.NONE, 2)
    assert [s.window_count for s in scheds] == [4, 0]
    assert scheds[1].elided
    assert scheds[1].taps == ()
    rep = window_coverage(scheds, 5, 5, 3, 3, 2, Padding.NONE, 2)
    assert rep.ok and rep.elided_variants == [1]
    assert rep.total_windows == 4


def test_single_lane_slots_are_anchors():
    (s,) = derive_variants(6, 6, 3, 3, 1, Padding.NONE, 1)
    assert s.window_count == 16
    # no padding: the anchor is the last arriving pixel itself
    assert s.slots.tolist() == [
        (r + 2) * 6 + (c + 2) for r in range(4) for c in range(4)
    ]
    assert all(np.diff(s.slots) > 0)


def test_same_padding_frame_tail_burst():
    (s,) = derive_variants(4, 4, 3, 3, 1, Padding.ZERO_SAME, 1)
    assert s.window_count == 16
    # clipped windows ride the last pixel cycle instead of waiting
    assert int((s.slots == 15).sum()) == 6
    assert int(s.slots.max()) == 15
    assert sorted(s.padding_select[0].tolist())[:4] == [5, 9, 13, 15]
    assert s.pad_mask(0).tolist() == [
        [True, True, True], [True, False, False], [True, False, False]
    ]


def test_delay_bound_frozen():
    assert max_delay_bound(5, 3, 3, 2) == 7
    assert max_delay_bound(8, 1, 1, 1) == 1
    assert max_delay_bound(16, 5, 5, 4) == 18


def test_rejects_nonpositive_parallelism():
    with pytest.raises(ScheduleError, match="parallelism"):
        derive_variants(4, 4, 3, 3, 1, Padding.NONE, 0)


def test_schedules_are_cached():
    a = derive_variants(7, 7, 3, 3, 1, Padding.ZERO_SAME, 1)
    b = derive_variants(7, 7, 3, 3, 1, Padding.ZERO_SAME, 1)
    assert a is b


# ---------------------------------------------------------------------------
# oracle sweeps
# ---------------------------------------------------------------------------


LATTICE = [
    (h, w, k, k, s, pad, p)
    for h in (4, 5, 7)
    for w in (4, 6, 8)
    for k in (1, 2, 3)
    for s in (1, 2, 3)
    for pad in (Padding.NONE, Padding.ZERO_SAME)
    for p in (1, 2, 4)
    if w % p == 0 and (pad is Padding.ZERO_SAME or (h >= k and w >= k))
]


@pytest.mark.parametrize("case", LATTICE,
                         ids=lambda c: f"{c[0]}x{c[1]}k{c[2]}s{c[4]}"
                                       f"{c[5].value}p{c[6]}")
def test_lattice_matches_oracle(case):
    h, w, kh, kw, s, pad, p = case
    scheds = assert_matches_oracle(h, w, kh, kw, s, pad, p)
    rep = window_coverage(scheds, h, w, kh, kw, s, pad, p)
    assert rep.ok, rep.problems
    assert sum(rep.per_variant.values()) == rep.total_windows


def test_rect_kernel_matches_oracle():
    assert_matches_oracle(6, 8, 2, 4, 1, Padding.ZERO_SAME, 2)
    assert_matches_oracle(5, 6, 3, 1, 2, Padding.NONE, 2)


@given(
    h=st.integers(1, 16), w=st.integers(1, 16),
    kh=st.integers(1, 5), kw=st.integers(1, 5),
    s=st.integers(1, 3),
    pad=st.sampled_from([Padding.NONE, Padding.ZERO_SAME]),
    p=st.sampled_from([1, 2, 4]),
)
@settings(max_examples=150, deadline=None)
def test_partition_property(h, w, kh, kw, s, pad, p):
    if w % p or (pad is Padding.NONE and (h < kh or w < kw)):
        return
    scheds = derive_variants(h, w, kh, kw, s, pad, p)
    rep = window_coverage(scheds, h, w, kh, kw, s, pad, p)
    assert rep.ok, rep.problems

    group_cap = -(-h * w // p)
    for sched in scheds:
        if sched.window_count:
            assert int(sched.slots.min()) >= 0
            assert int(sched.slots.max()) <= group_cap - 1
            assert all(np.diff(sched.slots) >= 0)
            if pad is Padding.NONE:
                assert all(np.diff(sched.slots) > 0)
