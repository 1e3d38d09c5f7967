"""Bundled network topology generators.

Emits model documents (the JSON schema consumed by load_model) for the two
MobileNet classifier families with hard-coded architecture dimensions.
Weights are left to the seeded generator; residual adds are omitted (the
layer chain is linear) since they carry no multipliers and do not change
data rates.
"""

from __future__ import annotations

import math

__all__ = ["mobilenet_v1", "mobilenet_v2", "GENERATORS"]


def _shift_for(kh: int, kw: int, cin: int) -> int:
    # keeps random-weight activations in range; exact value is uncritical
    return max(0, int(math.log2(kh * kw * cin)) + 5)


def _conv(out_c, kernel, stride, cin, name, relu=True):
    return {
        "kind": "conv", "out_channels": out_c, "kernel": kernel,
        "stride": stride, "padding": "same",
        "requant_shift": _shift_for(kernel, kernel, cin), "relu": relu,
        "name": name,
    }


def _dw(kernel, stride, cin, name):
    return {
        "kind": "depthwise_conv", "kernel": kernel, "stride": stride,
        "padding": "same", "channel_multiplier": 1,
        "requant_shift": _shift_for(kernel, kernel, 1), "relu": True,
        "name": name,
    }


def _pw(out_c, cin, name, relu=True):
    return {
        "kind": "pointwise_conv", "out_channels": out_c,
        "requant_shift": _shift_for(1, 1, cin), "relu": relu, "name": name,
    }


def _fc(out_c, cin, name):
    return {
        "kind": "fully_connected", "out_channels": out_c,
        "requant_shift": _shift_for(1, 1, cin), "relu": False, "name": name,
    }


def _tail(layers, spatial, channels, classes):
    """Global average pool + classifier."""
    layers.append({
        "kind": "avg_pool", "kernel": spatial, "stride": 1, "padding": "none",
        "requant_shift": 0, "name": "global_pool",
    })
    layers.append(_fc(classes, channels, "classifier"))


def mobilenet_v1(input_size: int = 224, classes: int = 1000, seed: int | None = None) -> dict:
    """Depthwise-separable classifier stack (13 dw/pw pairs)."""
    if input_size % 32:
        raise ValueError("input_size must be a multiple of 32")
    layers = [_conv(32, 3, 2, 3, "stem")]
    c = 32
    spatial = input_size // 2
    # (pointwise out channels, depthwise stride)
    plan = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
            (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2),
            (1024, 1)]
    for i, (out_c, s) in enumerate(plan):
        layers.append(_dw(3, s, c, f"dw_{i}"))
        spatial = -(-spatial // s)
        layers.append(_pw(out_c, c, f"pw_{i}"))
        c = out_c
    _tail(layers, spatial, c, classes)
    doc = {"input": [input_size, input_size, 3], "layers": layers}
    if seed is not None:
        doc["seed"] = seed
    return doc


def mobilenet_v2(input_size: int = 224, classes: int = 1000, seed: int | None = None) -> dict:
    """Inverted-residual classifier stack (linearized, no skip adds)."""
    if input_size % 32:
        raise ValueError("input_size must be a multiple of 32")
    layers = [_conv(32, 3, 2, 3, "stem")]
    c = 32
    spatial = input_size // 2
    # (expansion t, out channels, repeats n, first stride s)
    blocks = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
              (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    for bi, (t, out_c, n, s) in enumerate(blocks):
        for ri in range(n):
            stride = s if ri == 0 else 1
            tag = f"b{bi}_{ri}"
            if t != 1:
                layers.append(_pw(c * t, c, f"{tag}_expand"))
            mid = c * t
            layers.append(_dw(3, stride, mid, f"{tag}_dw"))
            spatial = -(-spatial // stride)
            layers.append(_pw(out_c, mid, f"{tag}_project", relu=False))
            c = out_c
    layers.append(_pw(1280, c, "head"))
    c = 1280
    _tail(layers, spatial, c, classes)
    doc = {"input": [input_size, input_size, 3], "layers": layers}
    if seed is not None:
        doc["seed"] = seed
    return doc


GENERATORS = {"mobilenet_v1": mobilenet_v1, "mobilenet_v2": mobilenet_v2}
