"""Shared model builders for the test suite."""

import numpy as np
import pytest

from rateflow.model_ir import LayerKind, LayerSpec, ModelGraph, Padding


def make_graph(in_h, in_w, in_c, layer_specs, seed=0x5EED, name="t"):
    """Assemble, weight-fill, and validate a graph from loose LayerSpecs."""
    g = ModelGraph(input_h=in_h, input_w=in_w, input_channels=in_c,
                   layers=list(layer_specs), weight_seed=seed, name=name)
    g.materialize_weights()
    g.validate()
    return g


def conv(cin, cout, k=3, stride=1, padding=Padding.ZERO_SAME, shift=6,
         relu=True, name=""):
    return LayerSpec(kind=LayerKind.CONV, in_channels=cin, out_channels=cout,
                     kernel_h=k, kernel_w=k, stride=stride, padding=padding,
                     requant_shift=shift, relu=relu, name=name or f"conv{cin}x{cout}")


def dw(cin, mult=1, k=3, stride=1, padding=Padding.ZERO_SAME, shift=5,
       relu=True, name=""):
    return LayerSpec(kind=LayerKind.DEPTHWISE_CONV, in_channels=cin,
                     out_channels=cin * mult, channel_multiplier=mult,
                     kernel_h=k, kernel_w=k, stride=stride, padding=padding,
                     requant_shift=shift, relu=relu, name=name or f"dw{cin}")


def pw(cin, cout, shift=5, relu=True, name=""):
    return LayerSpec(kind=LayerKind.POINTWISE_CONV, in_channels=cin,
                     out_channels=cout, requant_shift=shift, relu=relu,
                     name=name or f"pw{cin}x{cout}")


def fc(cin, cout, shift=5, name=""):
    return LayerSpec(kind=LayerKind.FULLY_CONNECTED, in_channels=cin,
                     out_channels=cout, requant_shift=shift,
                     name=name or f"fc{cin}x{cout}")


def pool(cin, kind=LayerKind.MAX_POOL, k=2, stride=2, padding=Padding.NONE,
         shift=0, name=""):
    return LayerSpec(kind=kind, in_channels=cin, out_channels=cin,
                     kernel_h=k, kernel_w=k, stride=stride, padding=padding,
                     requant_shift=shift, name=name or kind.value)


@pytest.fixture
def rng_images():
    def make(h, w, c, n=1, seed=123):
        r = np.random.default_rng(seed)
        return [r.integers(-128, 128, size=(h, w, c), dtype=np.int16
                           ).astype(np.int8) for _ in range(n)]
    return make
