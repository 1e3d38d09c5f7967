"""Golden int8 reference executor.

Bit-exact semantics the hardware simulator is checked against: 8x8-bit
products accumulated in 32 bits, arithmetic right-shift requantization,
saturation to [-128, 127]. Padding cells contribute zeros to convolutions
and are excluded from pool reductions (avg divides by the in-bounds
population, truncating toward zero).
"""

from __future__ import annotations

import numpy as np

from .model_ir import LayerKind, LayerSpec, ModelGraph, ModelError, Padding, Tensor8

__all__ = ["golden_forward", "golden_layer"]

_I8_MIN, _I8_MAX = -128, 127


def _requant(acc: np.ndarray, layer: LayerSpec) -> np.ndarray:
    out = acc >> layer.requant_shift  # arithmetic shift: floor toward -inf
    out = np.clip(out, _I8_MIN, _I8_MAX)
    if layer.relu:
        out = np.maximum(out, 0)
    return out.astype(np.int8)


def _windows(x: np.ndarray, layer: LayerSpec, fill: int) -> tuple[np.ndarray, np.ndarray]:
    """All stride-valid windows plus an in-bounds mask.

    Returns (win, valid): win is (out_h, out_w, kh, kw, C) with padding
    cells holding ``fill``; valid is (out_h, out_w, kh, kw) boolean.
    """
    in_h, in_w, _ = x.shape
    kh, kw, s = layer.kernel_h, layer.kernel_w, layer.stride
    pt, pl = layer.pad_offsets(in_h, in_w)
    out_h, out_w = layer.out_spatial(in_h, in_w)
    pb = max((out_h - 1) * s + kh - in_h - pt, 0)
    pr = max((out_w - 1) * s + kw - in_w - pl, 0)

    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=fill)
    mask = np.zeros(xp.shape[:2], dtype=bool)
    mask[pt:pt + in_h, pl:pl + in_w] = True

    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::s, ::s][:out_h, :out_w]            # (oh, ow, C, kh, kw)
    win = np.moveaxis(win, 2, -1)                  # (oh, ow, kh, kw, C)
    valid = np.lib.stride_tricks.sliding_window_view(mask, (kh, kw))
    valid = valid[::s, ::s][:out_h, :out_w]        # (oh, ow, kh, kw)
    return win, valid


def golden_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """Run one layer on an int8 HWC array; returns int8 HWC."""
    x = np.asarray(x, dtype=np.int8)
    kind = layer.kind

    if kind.fcu_style:
        acc = x.astype(np.int64) @ layer.weights.T.astype(np.int64)
        return _requant(acc, layer)

    if kind is LayerKind.CONV:
        win, _ = _windows(x, layer, fill=0)
        # weights: (out, kh, kw, in)
        acc = np.einsum(
            "hwklc,oklc->hwo",
            win.astype(np.int64), layer.weights.astype(np.int64),
        )
        return _requant(acc, layer)

    if kind is LayerKind.DEPTHWISE_CONV:
        win, _ = _windows(x, layer, fill=0)
        # weights: (in, mult, kh, kw); out channel of (c, m) is c*mult + m
        acc = np.einsum(
            "hwklc,cmkl->hwcm",
            win.astype(np.int64), layer.weights.astype(np.int64),
        )
        oh, ow = acc.shape[:2]
        return _requant(acc.reshape(oh, ow, -1), layer)

    if kind is LayerKind.MAX_POOL:
        # -128 fill can never win a max against any in-bounds int8
        win, _ = _windows(x, layer, fill=_I8_MIN)
        out = win.max(axis=(2, 3)).astype(np.int64)
        return _requant(out, layer) if layer.relu else out.astype(np.int8)

    if kind is LayerKind.AVG_POOL:
        win, valid = _windows(x, layer, fill=0)
        total = win.astype(np.int64).sum(axis=(2, 3))
        pop = valid.sum(axis=(2, 3))[..., None]
        q = np.abs(total) // pop                   # truncate toward zero
        acc = np.where(total < 0, -q, q)
        return _requant(acc, layer)

    raise ModelError(f"unhandled layer kind {kind}")


def golden_forward(graph: ModelGraph, image) -> list[Tensor8]:
    """Per-layer outputs for one input image (int8 HWC)."""
    x = image.data if isinstance(image, Tensor8) else np.asarray(image, dtype=np.int8)
    expect = (graph.input_h, graph.input_w, graph.input_channels)
    if x.shape != expect:
        raise ModelError(f"image shape {x.shape} does not match model input {expect}")
    outs: list[Tensor8] = []
    for layer in graph.layers:
        x = golden_layer(layer, x)
        outs.append(Tensor8(x))
    return outs
