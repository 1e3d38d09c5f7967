"""Exact rational data rates and their propagation through a layer pipeline.

A data rate counts features per clock cycle. Everything here is exact
integer arithmetic; floats would accumulate error over long layer chains
and break the cycle-count identities the simulator is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Sequence

__all__ = ["Rate", "LayerRates", "RateProfile", "rate_from_spec", "propagate"]


@dataclass(frozen=True, order=False)
class Rate:
    """A non-negative rational rate in lowest terms (features / cycle)."""

    num: int
    den: int = 1

    def __post_init__(self):
        if self.den <= 0:
            raise ValueError(f"rate denominator must be positive, got {self.den}")
        if self.num < 0:
            raise ValueError(f"rate must be non-negative, got {self.num}/{self.den}")
        g = gcd(self.num, self.den)
        if g > 1 or (self.num == 0 and self.den != 1):
            g = g if self.num else self.den
            object.__setattr__(self, "num", self.num // g)
            object.__setattr__(self, "den", self.den // g)

    # -- constructors ------------------------------------------------------

    @classmethod
    def parse(cls, text: str) -> "Rate":
        """Parse 'n' or 'n/d'."""
        parts = text.strip().split("/")
        try:
            if len(parts) == 1:
                return cls(int(parts[0]))
            if len(parts) == 2:
                return cls(int(parts[0]), int(parts[1]))
        except ValueError:
            pass
        raise ValueError(f"malformed rate {text!r}, expected 'n' or 'n/d'")

    @classmethod
    def from_fraction(cls, f: Fraction) -> "Rate":
        return cls(f.numerator, f.denominator)

    def as_fraction(self) -> Fraction:
        return Fraction(self.num, self.den)

    # -- arithmetic (exact) ------------------------------------------------

    def times(self, num: int, den: int = 1) -> "Rate":
        """Scale by an integer ratio."""
        return Rate(self.num * num, self.den * den)

    def __mul__(self, other):
        if isinstance(other, Rate):
            return Rate(self.num * other.num, self.den * other.den)
        if isinstance(other, int):
            return Rate(self.num * other, self.den)
        if isinstance(other, Fraction):
            return Rate.from_fraction(self.as_fraction() * other)
        return NotImplemented

    __rmul__ = __mul__

    def _cmp_key(self, other) -> tuple[int, int]:
        if isinstance(other, Rate):
            return self.num * other.den, other.num * self.den
        if isinstance(other, int):
            return self.num, other * self.den
        if isinstance(other, Fraction):
            return self.num * other.denominator, other.numerator * self.den
        raise TypeError(f"cannot compare Rate with {type(other).__name__}")

    def __lt__(self, other):
        a, b = self._cmp_key(other)
        return a < b

    def __le__(self, other):
        a, b = self._cmp_key(other)
        return a <= b

    def __gt__(self, other):
        a, b = self._cmp_key(other)
        return a > b

    def __ge__(self, other):
        a, b = self._cmp_key(other)
        return a >= b

    def __eq__(self, other):
        if isinstance(other, (Rate, int, Fraction)):
            a, b = self._cmp_key(other)
            return a == b
        return NotImplemented

    def __hash__(self):
        return hash((self.num, self.den))

    def __float__(self):
        return self.num / self.den

    def __str__(self):
        return f"{self.num}/{self.den}" if self.den != 1 else str(self.num)

    def __repr__(self):
        return f"Rate({self.num}, {self.den})"


def rate_from_spec(features: int, cycles: int) -> Rate:
    """Rate from a 'features per cycles' pair, e.g. (6, 4) -> 3/2."""
    return Rate(features, cycles)


@dataclass(frozen=True)
class LayerRates:
    """Served (long-run average) rates at one layer boundary."""

    input_rate: Rate
    output_rate: Rate
    pixel_parallelism: int = 1


@dataclass
class RateProfile:
    """Per-layer input/output rates for a model driven at a given rate."""

    input_rate: Rate
    layers: list[LayerRates] = field(default_factory=list)

    @property
    def output_rate(self) -> Rate:
        return self.layers[-1].output_rate if self.layers else self.input_rate


def propagate(graph, input_rate: Rate, impls: Sequence | None = None) -> RateProfile:
    """Chain the served input rate through every layer of ``graph``.

    Feature conservation fixes each layer's steady-state output rate:

        out_rate = in_rate * (out_pixels / in_pixels) * (d_out / d_in)

    using exact pixel counts from the inferred shapes. ``impls`` (one per
    layer, or None) only contributes the pixel parallelism recorded in the
    profile; served rates do not depend on the chosen (j, h) because
    overshooting units idle rather than invent data.
    """
    if input_rate.num == 0:
        raise ValueError("input rate must be positive")
    if impls is not None and len(impls) != len(graph.layers):
        raise ValueError(
            f"got {len(impls)} impls for {len(graph.layers)} layers"
        )

    shapes = graph.shapes()
    rate = input_rate.as_fraction()
    rows: list[LayerRates] = []
    for idx, layer in enumerate(graph.layers):
        in_h, in_w, d_in = shapes[idx]
        out_h, out_w, d_out = shapes[idx + 1]
        out = rate * Fraction(out_h * out_w, in_h * in_w) * Fraction(d_out, d_in)
        p = impls[idx].pixel_parallelism if impls is not None else 1
        rows.append(LayerRates(Rate.from_fraction(rate), Rate.from_fraction(out), p))
        rate = out
    return RateProfile(input_rate=input_rate, layers=rows)
