"""Sketch parameters and the capacity schedule."""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Union

Ratio = Union[Fraction, int, float, str]

EXP = "exp"
FIXED_TOP = "fixedtop"
MODES = (EXP, FIXED_TOP)


class ParamsError(ValueError):
    pass


def parse_ratio(value: Ratio) -> Fraction:
    """Parse ``c`` from a Fraction, number, ``"2/3"`` or ``"0.7"``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ParamsError(f"invalid ratio {value!r}")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ParamsError(f"invalid ratio {value!r}")
        # repr round-trips, so 0.7 becomes 7/10 rather than the binary expansion
        return Fraction(repr(value))
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ParamsError(f"invalid ratio {value!r}") from exc


@dataclass(frozen=True)
class Params:
    """Sketch configuration.

    ``k`` is the top-level capacity and ``c`` the per-level decay of the
    capacities below it. In ``fixedtop`` mode the top ``s`` levels keep
    capacity ``k`` instead of decaying.
    """

    k: int
    c: Fraction = Fraction(2, 3)
    mode: str = EXP
    s: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", parse_ratio(self.c))
        try:
            object.__setattr__(self, "k", operator.index(self.k))
            object.__setattr__(self, "s", operator.index(self.s))
        except TypeError as exc:
            raise ParamsError(f"k and s must be integers, got {self.k!r}, {self.s!r}") from exc
        if self.k < 4:
            raise ParamsError(f"k too small: {self.k} (need k >= 4)")
        if not Fraction(1, 2) < self.c < 1:
            raise ParamsError(f"c out of (0.5,1): {self.c}")
        if self.mode not in MODES:
            raise ParamsError(f"unknown mode {self.mode!r}")
        if self.mode == FIXED_TOP and self.s < 1:
            raise ParamsError(f"fixedtop mode needs s >= 1, got {self.s}")
        if self.mode == EXP and self.s != 0:
            raise ParamsError("s is only meaningful in fixedtop mode")

    @property
    def fixed_top(self) -> bool:
        return self.mode == FIXED_TOP

    def describe(self) -> str:
        tail = f", s={self.s}" if self.fixed_top else ""
        return f"k={self.k}, c={self.c}, mode={self.mode}{tail}"


def capacity(params: Params, H: int, h: int) -> int:
    """Capacity of level ``h`` when the top level is ``H``."""
    if not 1 <= h <= H:
        raise ValueError(f"level {h} outside 1..{H}")
    return capacities(params, H)[h - 1]


@lru_cache(maxsize=4096)
def capacities(params: Params, H: int) -> tuple[int, ...]:
    """Capacities of levels ``1..H`` (index ``h - 1``), computed exactly."""
    caps = []
    for h in range(1, H + 1):
        if params.fixed_top and h > H - params.s:
            caps.append(params.k)
        else:
            caps.append(max(2, math.ceil(params.k * params.c ** (H - h)) + 1))
    return tuple(caps)


@lru_cache(maxsize=1024)
def _decay_depth(k: int, c: Fraction) -> int:
    # smallest j with k * c**j <= 1, i.e. ceil(log(k) / log(1/c)) without float error
    j, value = 0, Fraction(k)
    while value > 1:
        value *= c
        j += 1
    return j


def sampler_target_height(params: Params, H: int) -> int:
    """Height the sampler should occupy for a sketch whose top level is ``H``.

    Levels at or below this height have capacity 2 and are simulated by the
    sampler instead of being stored.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if params.fixed_top:
        return max(0, H - 2 * params.s - (params.k - 1).bit_length())
    return max(0, H - _decay_depth(params.k, params.c))


def space_bound(params: Params, H: int) -> float:
    """Upper bound on stored items for a sketch of height ``H``."""
    k, c = params.k, float(params.c)
    if params.fixed_top:
        return params.s * k + k * c ** params.s / (1 - c) + 2 * H + 1
    return k / (1 - c) + 2 * H + 1
