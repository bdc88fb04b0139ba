"""Weighted sampler standing in for the capacity-2 bottom levels."""

from __future__ import annotations

from typing import Any, Optional, Protocol


class UniformSource(Protocol):
    def random(self) -> float: ...


class Sampler:
    """Holds one item of weight ``v < 2**height`` and emits items of weight ``2**height``.

    ``height == 0`` means inactive: the sketch routes items straight to its
    first compactor instead.
    """

    __slots__ = ("height", "item", "weight")

    def __init__(self, height: int = 0, item: Any = None, weight: int = 0):
        self.height = height
        self.item = item
        self.weight = weight

    def __repr__(self) -> str:
        return f"Sampler(height={self.height}, item={self.item!r}, weight={self.weight})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sampler):
            return NotImplemented
        return (self.height, self.item, self.weight) == (other.height, other.item, other.weight)

    def copy(self) -> "Sampler":
        return Sampler(self.height, self.item, self.weight)

    def reset(self, height: int) -> None:
        self.height = height
        self.item = None
        self.weight = 0

    def update(self, item: Any, w: int, rng: UniformSource) -> Optional[tuple[Any, int]]:
        """Feed ``item`` with weight ``w``; return ``(emitted, 2**height)`` or None.

        Draws exactly one uniform from ``rng`` per call. In every branch the
        expected weight emitted plus weight stored equals ``v + w``.
        """
        h = self.height
        if h < 1:
            raise ValueError("sampler is inactive (height 0)")
        size = 1 << h
        if w < 1 or w > size:
            raise ValueError(f"weight {w} outside 1..{size}")
        v = self.weight
        total = v + w
        u = rng.random()
        if total < size:
            if u * total < w:
                self.item = item
            self.weight = total
            return None
        if total == size:
            out = item if u * total < w else self.item
            self.item = None
            self.weight = 0
            return out, size
        # overflow: keep the lighter one, emit the heavier with probability max/size
        if w > v:
            heavy, heavy_w = item, w
        else:
            heavy, heavy_w = self.item, v
            self.item, self.weight = item, w
        if u * size < heavy_w:
            return heavy, size
        return None
