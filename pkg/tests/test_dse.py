"""Implementation selection, planning, and the plan file contract.

The selection oracle enumerates every admissible (j, h) pair and applies
the ordering rule directly with Fraction arithmetic; the library picks
per-j via sorted divisor bisection, so agreement is a real cross-check.
"""

import json
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from rateflow.dse import (
    DseError,
    LegacyUnsupportedError,
    PlanError,
    candidate_set,
    estimate_resources,
    estimate_throughput,
    load_plan,
    plan_from_dict,
    plan_network,
    plan_to_dict,
    select_impl,
    select_impl_legacy,
)
from rateflow.model_ir import LayerKind, Padding
from rateflow.rates import Rate
from conftest import conv, dw, fc, make_graph, pool, pw


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def divisors_ref(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def oracle_select(d_in, h_base, target: Fraction):
    """(P, j, h) by exhaustive enumeration of the admissible pairs."""
    p = 1
    if target > d_in:
        p = -(-target.numerator // (target.denominator * d_in))
    lane = target / p
    pairs = [(Fraction(j, h), -h, j, h)
             for j in divisors_ref(d_in)
             for h in divisors_ref(h_base)
             if Fraction(j, h) >= lane]
    assert pairs, "the (d_in, 1) pair always qualifies"
    _, _, j, h = min(pairs)
    return p, j, h


@pytest.mark.parametrize("d_in,d_out", [(12, 18), (16, 24), (7, 13), (30, 30)])
def test_select_matches_oracle_small(d_in, d_out):
    for tn in range(1, 25):
        for td in range(1, 9):
            t = Fraction(tn, td)
            op, oj, oh = oracle_select(d_in, d_out, t)
            impl = select_impl(d_in, d_out, Rate(tn, td))
            assert (impl.pixel_parallelism, impl.j, impl.h) == (op, oj, oh), \
                f"target {t}"
            assert impl.achieved_in_rate == Rate(op * oj, oh)
            assert impl.achieved_in_rate >= Rate(tn, td)
            assert impl.configurations == oh * d_in // oj


@given(st.integers(1, 64), st.integers(1, 64),
       st.integers(1, 96), st.integers(1, 12))
@settings(max_examples=300, deadline=None)
def test_select_matches_oracle_random(d_in, d_out, tn, td):
    op, oj, oh = oracle_select(d_in, d_out, Fraction(tn, td))
    impl = select_impl(d_in, d_out, Rate(tn, td))
    assert (impl.pixel_parallelism, impl.j, impl.h) == (op, oj, oh)


def test_select_frozen_example():
    impl = select_impl(32, 64, Rate(3, 32))
    assert (impl.j, impl.h) == (8, 64)
    assert impl.configurations == 256
    assert impl.achieved_in_rate == Rate(1, 8)
    assert not impl.exact
    assert impl.unit_count == 1  # pointwise: 64/64 per lane


def test_candidate_set_frozen():
    cs = candidate_set(32, 64, Rate(3, 32))
    assert cs.pairs[:4] == [(8, 64), (4, 32), (2, 16), (1, 8)]
    assert len(cs.pairs) == 36
    assert cs.best_rate() == Rate(1, 8)
    assert cs.pixel_parallelism == 1
    assert cs.per_lane_target == Rate(3, 32)


def test_escalation_to_pixel_parallel():
    impl = select_impl(16, 32, Rate(128), kind=LayerKind.CONV)
    assert impl.pixel_parallelism == 8
    assert (impl.j, impl.h) == (16, 1)
    assert impl.configurations == 1
    assert impl.achieved_in_rate == Rate(128)
    assert impl.exact


def test_escalation_partial_lane():
    # 1.5x the fan-in: two lanes, 3/4 fan-in each, still forced to whole pixels
    impl = select_impl(8, 8, Rate(12))
    assert impl.pixel_parallelism == 2
    assert impl.achieved_in_rate == Rate(16)
    assert not impl.exact


def test_fcu_tie_break_prefers_larger_h():
    impl = select_impl(4, 2, Rate(2))
    assert (impl.j, impl.h) == (4, 2)
    assert impl.configurations == 2
    assert impl.unit_count == 1
    assert impl.exact


def test_depthwise_h_base_is_multiplier():
    impl = select_impl(16, 32, Rate(8), kind=LayerKind.DEPTHWISE_CONV,
                       channel_multiplier=2)
    assert impl.h in (1, 2)  # divisors of the multiplier, not of 32
    op, oj, oh = oracle_select(16, 2, Fraction(8))
    assert (impl.j, impl.h) == (oj, oh)


def test_pool_h_base_is_one():
    impl = select_impl(12, 12, Rate(3), kind=LayerKind.MAX_POOL)
    assert impl.h == 1
    assert impl.unit_count == 1
    assert impl.kpus_per_unit == impl.j


def test_zero_target_rejected():
    with pytest.raises(DseError):
        select_impl(8, 8, Rate(0))
    with pytest.raises(DseError):
        select_impl_legacy(8, 8, Rate(0))


# ---------------------------------------------------------------------------
# legacy scheme
# ---------------------------------------------------------------------------


def test_legacy_conv_exact_case():
    impl = select_impl_legacy(64, 64, Rate(1, 2), kind=LayerKind.CONV)
    assert impl.configurations == 128
    assert impl.interleave_factor == 2
    assert impl.unit_count == 32          # ceil(64*64 / 128)
    assert impl.achieved_in_rate == Rate(1, 2)
    assert impl.exact


def test_legacy_conv_rounding_case():
    impl = select_impl_legacy(14, 24, Rate(3, 4), kind=LayerKind.CONV)
    assert impl.configurations == 19      # ceil(14*4/3)
    assert impl.achieved_in_rate == Rate(14, 19)
    assert impl.achieved_in_rate < Rate(3, 4)
    assert not impl.exact


def test_legacy_rounding_textbook():
    # the shape of the rounding loss: d_in=10 at 3/4 lands on 10/14
    impl = select_impl_legacy(10, 8, Rate(3, 4), kind=LayerKind.CONV)
    assert impl.configurations == 14
    assert impl.achieved_in_rate == Rate(5, 7)


def test_legacy_fcu_decomposition():
    impl = select_impl_legacy(128, 32, Rate(3, 10))
    assert (impl.j, impl.h) == (3, 8)
    assert impl.configurations == 344     # 8 * ceil(128/3)
    assert impl.chunk_pad == 1
    assert impl.unit_count == 4
    assert impl.achieved_in_rate == Rate(3, 8)


def test_legacy_refuses_multi_pixel():
    with pytest.raises(LegacyUnsupportedError):
        select_impl_legacy(8, 8, Rate(9))
    with pytest.raises(LegacyUnsupportedError):
        select_impl_legacy(4, 8, Rate(7, 2))  # j=7 > fan-in 4


def test_legacy_conv_config_capped_by_kernels():
    # very slow rate: C cannot exceed the distinct kernel count
    impl = select_impl_legacy(4, 2, Rate(1, 100), kind=LayerKind.CONV)
    assert impl.configurations == 8       # d_in * d_out
    assert impl.unit_count == 1


# ---------------------------------------------------------------------------
# network planning
# ---------------------------------------------------------------------------


def _mini():
    return make_graph(4, 4, 4, [
        conv(4, 8, name="stem"),
        pool(8, name="mp"),
        pw(8, 4, name="squeeze"),
        fc(4, 10, name="head"),
    ])


def test_plan_chains_served_rates():
    plan = plan_network(_mini(), Rate(4))
    targets = [lp.impl.target_rate for lp in plan.layers]
    assert targets == [Rate(4), Rate(8), Rate(2), Rate(1)]
    assert all(lp.impl.exact for lp in plan.layers)
    assert plan.layers[0].schedules and not plan.layers[2].schedules
    assert plan.profile.layers[-1].output_rate == Rate(5, 2)


def test_plan_overshoot_does_not_inflate_downstream():
    # 3 does not divide anything here; downstream targets follow the served
    # rate, not the faster achieved rate
    plan = plan_network(_mini(), Rate(3))
    l0 = plan.layers[0].impl
    assert l0.achieved_in_rate > l0.target_rate
    assert plan.layers[1].impl.target_rate == Rate(6)  # 3 * (8/4)


def test_plan_rejects_odd_width_for_p2():
    g = make_graph(3, 3, 2, [conv(2, 4, k=3)])
    with pytest.raises(PlanError, match="pad the row length"):
        plan_network(g, Rate(4))  # escalates to P=2 on a 3-wide map


def test_plan_rejects_ragged_pixel_groups():
    g = make_graph(3, 3, 2, [pw(2, 4)])
    with pytest.raises(PlanError, match="whole groups"):
        plan_network(g, Rate(4))  # 9 pixels, P=2


def test_plan_accepts_even_width_p2():
    g = make_graph(4, 4, 2, [conv(2, 4, k=3)])
    plan = plan_network(g, Rate(4))
    assert plan.layers[0].impl.pixel_parallelism == 2
    assert len(plan.layers[0].schedules) == 2


def test_plan_legacy_strategy():
    plan = plan_network(_mini(), Rate(1, 2), strategy="legacy")
    assert all(lp.impl.strategy == "legacy" for lp in plan.layers)


def test_plan_unknown_strategy():
    with pytest.raises(DseError, match="strategy"):
        plan_network(_mini(), Rate(1), strategy="turbo")


# ---------------------------------------------------------------------------
# resources and throughput
# ---------------------------------------------------------------------------


def test_resources_frozen_mini():
    plan = plan_network(_mini(), Rate(4))
    res = estimate_resources(plan)
    by_name = {r.name: r for r in res.rows}
    # stem: 1 variant * 3x3 taps * j=4 * (8/h=8 units)
    assert by_name["stem"].multipliers == 9 * 4 * 8
    assert by_name["mp"].multipliers == 0 and by_name["mp"].weight_words == 0
    assert by_name["squeeze"].multipliers == plan.layers[2].impl.j \
        * plan.layers[2].impl.unit_count
    assert by_name["head"].weight_words == 4 * 10
    assert res.multipliers == sum(r.multipliers for r in res.rows)


def test_adders_never_negative():
    plan = plan_network(_mini(), Rate(1, 4))
    assert all(r.adders >= 0 for r in estimate_resources(plan).rows)


def test_throughput_formula():
    plan = plan_network(_mini(), Rate(3, 2))
    est = estimate_throughput(plan, 100.0)
    assert est.cycles_per_frame == -(-4 * 4 * 4 * 2 // 3)
    assert est.fps == pytest.approx(100e6 / est.cycles_per_frame)
    assert est.latency_cycles_lower_bound > est.cycles_per_frame


def test_throughput_monotone_in_rate():
    g = _mini()
    cpf = [estimate_throughput(plan_network(g, r), 100.0).cycles_per_frame
           for r in (Rate(1, 4), Rate(1), Rate(4))]
    assert cpf[0] > cpf[1] > cpf[2]


# ---------------------------------------------------------------------------
# plan files
# ---------------------------------------------------------------------------


def test_plan_roundtrip(tmp_path):
    g = _mini()
    plan = plan_network(g, Rate(4))
    doc = plan_to_dict(plan)
    assert doc["tool_version"]
    assert doc["quantization"] == "shift-requant-stand-in"

    path = tmp_path / "p.json"
    path.write_text(json.dumps(doc))
    back = load_plan(g, path)
    for a, b in zip(plan.layers, back.layers):
        assert (a.impl.j, a.impl.h, a.impl.configurations,
                a.impl.pixel_parallelism) == \
               (b.impl.j, b.impl.h, b.impl.configurations,
                b.impl.pixel_parallelism)
        assert a.impl.achieved_in_rate == b.impl.achieved_in_rate
        assert len(a.schedules) == len(b.schedules)
    assert back.input_rate == plan.input_rate


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d["layers"][2].update(j=7), "does not divide in_channels"),
    (lambda d: d["layers"][2].update(h=3), "does not divide out_channels"),
    (lambda d: d["layers"][2].update(C=5), "inconsistent"),
    (lambda d: d["layers"].pop(), "plan has 3 layers"),
    (lambda d: d["layers"][0].update(d_in=5), "channel counts"),
    (lambda d: d["layers"][0].update(j=0), "must be positive"),
])
def test_plan_refusals_cite_the_rule(mutate, match):
    g = _mini()
    doc = plan_to_dict(plan_network(g, Rate(4)))
    mutate(doc)
    with pytest.raises(PlanError, match=match):
        plan_from_dict(g, doc)


def test_plan_legacy_entries_skip_divisor_rules():
    g = _mini()
    plan = plan_network(g, Rate(3, 4), strategy="legacy")
    stem = plan.layers[0].impl
    assert stem.d_out % stem.h != 0  # would trip the proposed h rule
    back = plan_from_dict(g, plan_to_dict(plan))
    assert back.layers[0].impl.h == stem.h
