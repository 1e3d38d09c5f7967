"""Quantized layer-graph representation and JSON model loading.

The model is an ordered chain of int8 layers over HWC feature maps stored
row-major with channels innermost (the raster order the hardware streams).
Weights either come from raw little-endian int8 files or are filled from a
seeded generator recorded on the graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng

__all__ = [
    "LayerKind",
    "Padding",
    "LayerSpec",
    "ModelGraph",
    "Tensor8",
    "ModelError",
    "conv_geometry",
    "load_model",
    "graph_from_dict",
    "infer_shapes",
]

# Accumulator stays within int32 as long as the per-output population of
# 8x8-bit products is at most 2**15.
MAX_ACC_POPULATION = 1 << 15


class ModelError(ValueError):
    """Malformed model description (parse, validation, or shape error)."""


class LayerKind(str, Enum):
    CONV = "conv"
    DEPTHWISE_CONV = "depthwise_conv"
    POINTWISE_CONV = "pointwise_conv"
    FULLY_CONNECTED = "fully_connected"
    MAX_POOL = "max_pool"
    AVG_POOL = "avg_pool"

    @property
    def is_pool(self) -> bool:
        return self in (LayerKind.MAX_POOL, LayerKind.AVG_POOL)

    @property
    def is_weighted(self) -> bool:
        return not self.is_pool

    @property
    def fcu_style(self) -> bool:
        """Dense matrix layers: one unit bank per pixel lane, no window taps."""
        return self in (LayerKind.POINTWISE_CONV, LayerKind.FULLY_CONNECTED)

    @property
    def conv_style(self) -> bool:
        """Layers with a sliding-window front end (taps + delay lines)."""
        return not self.fcu_style


class Padding(str, Enum):
    NONE = "none"
    ZERO_SAME = "same"


def conv_geometry(in_h: int, in_w: int, kernel_h: int, kernel_w: int,
                  stride: int, padding: Padding) -> tuple[int, int, int, int]:
    """(out_h, out_w, pad_top, pad_left) for a sliding-window layer.

    ZeroSame: out = ceil(in / stride), total padding split with the extra
    cell on the bottom/right. None: out = floor((in - kernel)/stride) + 1.
    """
    if padding is Padding.ZERO_SAME:
        out_h = -(-in_h // stride)
        out_w = -(-in_w // stride)
        pad_h = max((out_h - 1) * stride + kernel_h - in_h, 0)
        pad_w = max((out_w - 1) * stride + kernel_w - in_w, 0)
        return out_h, out_w, pad_h // 2, pad_w // 2
    if in_h < kernel_h or in_w < kernel_w:
        raise ModelError(
            f"{kernel_h}x{kernel_w} window does not fit a "
            f"{in_h}x{in_w} map without padding"
        )
    return (in_h - kernel_h) // stride + 1, (in_w - kernel_w) // stride + 1, 0, 0


@dataclass
class Tensor8:
    """An int8 feature map with explicit dims (H, W, C), raster layout."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int8)
        if self.data.ndim != 3:
            raise ModelError(f"Tensor8 expects 3 dims (H, W, C), got {self.data.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]

    def raster(self) -> np.ndarray:
        """Flat view in stream order: row-major pixels, channels innermost."""
        return self.data.reshape(-1)


@dataclass
class LayerSpec:
    kind: LayerKind
    in_channels: int
    out_channels: int
    channel_multiplier: int = 1
    kernel_h: int = 1
    kernel_w: int = 1
    stride: int = 1
    padding: Padding = Padding.NONE
    weights: Optional[np.ndarray] = None
    requant_shift: int = 0
    relu: bool = False
    name: str = ""

    def validate(self, index: int) -> None:
        k = self.kind
        where = f"layer {index} ({k.value})"
        if self.in_channels < 1 or self.out_channels < 1:
            raise ModelError(f"{where}: channel counts must be positive")
        if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1:
            raise ModelError(f"{where}: kernel/stride must be positive")
        if self.requant_shift < 0:
            raise ModelError(f"{where}: requant_shift must be >= 0")
        if k.fcu_style and (self.kernel_h, self.kernel_w, self.stride) != (1, 1, 1):
            raise ModelError(f"{where}: expects kernel 1x1 and stride 1")
        if k is LayerKind.DEPTHWISE_CONV:
            if self.out_channels != self.in_channels * self.channel_multiplier:
                raise ModelError(
                    f"{where}: out_channels must equal in_channels * channel_multiplier"
                )
        elif self.channel_multiplier != 1:
            raise ModelError(f"{where}: channel_multiplier only applies to depthwise")
        if k.is_pool and self.out_channels != self.in_channels:
            raise ModelError(f"{where}: pooling preserves the channel count")
        pop = self.kernel_h * self.kernel_w * self.in_channels
        if k.is_weighted and pop > MAX_ACC_POPULATION:
            raise ModelError(
                f"{where}: kernel_h*kernel_w*in_channels = {pop} exceeds "
                f"{MAX_ACC_POPULATION}; the 32-bit accumulator could overflow"
            )
        if k.is_weighted:
            shape = self.weight_shape()
            if self.weights is None:
                raise ModelError(f"{where}: weights missing")
            if self.weights.dtype != np.int8 or self.weights.shape != shape:
                raise ModelError(
                    f"{where}: weights must be int8 with shape {shape}, "
                    f"got {self.weights.dtype} {self.weights.shape}"
                )
        elif self.weights is not None:
            raise ModelError(f"{where}: pool layers carry no weights")

    def weight_shape(self) -> tuple[int, ...]:
        """Declared weight dimension order per kind (file layout order)."""
        k = self.kind
        if k is LayerKind.CONV:
            return (self.out_channels, self.kernel_h, self.kernel_w, self.in_channels)
        if k is LayerKind.DEPTHWISE_CONV:
            return (self.in_channels, self.channel_multiplier, self.kernel_h, self.kernel_w)
        if k.fcu_style:
            return (self.out_channels, self.in_channels)
        return ()

    def out_spatial(self, in_h: int, in_w: int) -> tuple[int, int]:
        """Output H, W for this layer given the incoming map size."""
        if self.kind.fcu_style:
            return in_h, in_w
        out_h, out_w, _, _ = conv_geometry(
            in_h, in_w, self.kernel_h, self.kernel_w, self.stride, self.padding
        )
        return out_h, out_w

    def pad_offsets(self, in_h: int, in_w: int) -> tuple[int, int]:
        """(top, left) zero padding; (0, 0) unless ZeroSame."""
        if self.padding is not Padding.ZERO_SAME or self.kind.fcu_style:
            return 0, 0
        _, _, pt, pl = conv_geometry(
            in_h, in_w, self.kernel_h, self.kernel_w, self.stride, self.padding
        )
        return pt, pl


@dataclass
class ModelGraph:
    input_h: int
    input_w: int
    input_channels: int
    layers: list[LayerSpec] = field(default_factory=list)
    weight_seed: int = rng.DEFAULT_SEED
    name: str = "model"

    def shapes(self) -> list[tuple[int, int, int]]:
        """Shape chain [(H, W, C)] from input through every layer output."""
        return infer_shapes(self)

    def materialize_weights(self) -> "ModelGraph":
        """Fill missing weights from the per-layer seed stream (in place)."""
        for i, layer in enumerate(self.layers):
            if layer.kind.is_weighted and layer.weights is None:
                shape = layer.weight_shape()
                flat = rng.int8_block(rng.layer_seed(self.weight_seed, i),
                                      int(np.prod(shape)))
                layer.weights = flat.reshape(shape)
        return self

    def validate(self) -> None:
        if min(self.input_h, self.input_w, self.input_channels) < 1:
            raise ModelError("input dims must be positive")
        if not self.layers:
            raise ModelError("model has no layers")
        shapes = [(self.input_h, self.input_w, self.input_channels)]
        for i, layer in enumerate(self.layers):
            h, w, c = shapes[-1]
            if layer.in_channels != c:
                raise ModelError(
                    f"layer {i}: expects {layer.in_channels} input channels, "
                    f"previous layer produces {c}"
                )
            layer.validate(i)
            oh, ow = layer.out_spatial(h, w)
            shapes.append((oh, ow, layer.out_channels))


def infer_shapes(graph: ModelGraph) -> list[tuple[int, int, int]]:
    shapes = [(graph.input_h, graph.input_w, graph.input_channels)]
    for layer in graph.layers:
        h, w, _ = shapes[-1]
        oh, ow = layer.out_spatial(h, w)
        shapes.append((oh, ow, layer.out_channels))
    return shapes


# ---------------------------------------------------------------------------
# JSON model format
# ---------------------------------------------------------------------------

_KIND_ALIASES = {k.value: k for k in LayerKind}
_PAD_ALIASES = {"none": Padding.NONE, "same": Padding.ZERO_SAME}


def _parse_kernel(value, where: str) -> tuple[int, int]:
    if isinstance(value, int):
        return value, value
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return value[0], value[1]
    raise ModelError(f"{where}: kernel must be an int or [kh, kw]")


def graph_from_dict(doc: dict, base_dir: Path | None = None,
                    seed: int | None = None, name: str = "model") -> ModelGraph:
    """Build and validate a ModelGraph from a parsed model document."""
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    try:
        in_h, in_w, in_c = (int(v) for v in doc["input"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError("model needs \"input\": [H, W, C]") from exc
    layer_docs = doc.get("layers")
    if not isinstance(layer_docs, list) or not layer_docs:
        raise ModelError("model needs a non-empty \"layers\" list")

    graph_seed = int(doc.get("seed", rng.DEFAULT_SEED if seed is None else seed))
    if seed is not None:
        graph_seed = seed

    layers: list[LayerSpec] = []
    channels = in_c
    for i, entry in enumerate(layer_docs):
        where = f"layer {i}"
        if not isinstance(entry, dict):
            raise ModelError(f"{where}: must be an object")
        kind_name = entry.get("kind")
        if kind_name not in _KIND_ALIASES:
            raise ModelError(
                f"{where}: unknown kind {kind_name!r}; expected one of "
                f"{sorted(_KIND_ALIASES)}"
            )
        kind = _KIND_ALIASES[kind_name]
        mult = int(entry.get("channel_multiplier", 1))
        if kind is LayerKind.DEPTHWISE_CONV:
            out_c = channels * mult
        elif kind.is_pool:
            out_c = channels
        else:
            try:
                out_c = int(entry["out_channels"])
            except KeyError as exc:
                raise ModelError(f"{where}: out_channels required") from exc
        kh, kw = (1, 1)
        if kind.conv_style:
            kh, kw = _parse_kernel(entry.get("kernel", 1), where)
        pad_name = entry.get("padding", "none")
        if pad_name not in _PAD_ALIASES:
            raise ModelError(f"{where}: padding must be 'none' or 'same'")
        spec = LayerSpec(
            kind=kind,
            in_channels=channels,
            out_channels=out_c,
            channel_multiplier=mult if kind is LayerKind.DEPTHWISE_CONV else 1,
            kernel_h=kh,
            kernel_w=kw,
            stride=int(entry.get("stride", 1)),
            padding=_PAD_ALIASES[pad_name],
            requant_shift=int(entry.get("requant_shift", 0)),
            relu=bool(entry.get("relu", False)),
            name=str(entry.get("name", f"{kind.value}_{i}")),
        )
        if kind.is_weighted:
            spec.weights = _load_weights(entry, spec, i, base_dir, graph_seed)
        layers.append(spec)
        channels = out_c

    graph = ModelGraph(
        input_h=in_h, input_w=in_w, input_channels=in_c,
        layers=layers, weight_seed=graph_seed, name=name,
    )
    graph.validate()
    return graph


def _load_weights(entry: dict, spec: LayerSpec, index: int,
                  base_dir: Path | None, seed: int) -> np.ndarray:
    shape = spec.weight_shape()
    count = int(np.prod(shape))
    path_name = entry.get("weights_file")
    if path_name is None:
        return rng.int8_block(rng.layer_seed(seed, index), count).reshape(shape)
    path = Path(path_name)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        raw = np.fromfile(path, dtype=np.int8)
    except OSError as exc:
        raise ModelError(f"layer {index}: cannot read weights file {path}") from exc
    if raw.size != count:
        raise ModelError(
            f"layer {index}: weights file {path} holds {raw.size} values, "
            f"expected {count} for shape {shape}"
        )
    return raw.reshape(shape)


def load_model(path: str | Path, seed: int | None = None) -> ModelGraph:
    """Load, validate, and weight-fill a model description from JSON."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is not valid JSON: {exc}") from exc
    return graph_from_dict(doc, base_dir=path.parent, seed=seed, name=path.stem)
