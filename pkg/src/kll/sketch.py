"""KLL quantile sketch: compactor hierarchy with a bottom sampler."""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from itertools import accumulate
from operator import itemgetter
from typing import Any, Callable, Iterable, List, Optional, Sequence

import numpy as np

from .params import Params, capacities, sampler_target_height, space_bound
from .sampler import Sampler

U64_MAX = (1 << 64) - 1

CompactHook = Callable[[int, int, int], None]


class MergeError(ValueError):
    pass


class UniformStream:
    """Buffered view of a numpy generator's ``random()`` stream.

    Scalar and bulk draws come from the same underlying sequence, so a run
    that consumes ``take(m)`` sees exactly the values that ``m`` calls to
    ``random()`` would have produced.
    """

    _BLOCK = 4096

    def __init__(self, seed: int):
        self._gen = np.random.default_rng(seed & U64_MAX)
        self._buf: List[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self._BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def take(self, m: int) -> np.ndarray:
        rest = self._buf[self._pos:]
        self._buf, self._pos = [], 0
        if len(rest) >= m:
            self._buf, rest = rest[m:], rest[:m]
            return np.array(rest)
        fresh = self._gen.random(m - len(rest))
        if not rest:
            return fresh
        return np.concatenate([np.array(rest), fresh])


def compact_buffer(buf: List[Any], u: float) -> tuple[List[Any], List[Any]]:
    """Sort ``buf`` in place and halve it; return ``(withheld, emitted)``.

    ``u`` in [0, 1) supplies both coins: ``int(4u) & 1`` picks the parity
    (0 emits the 1st, 3rd, ... items of the sorted run; 1 emits the 2nd,
    4th, ...), and ``int(4u) >> 1`` picks which end is withheld when the
    buffer has odd length (0 the smallest, 1 the largest).
    """
    buf.sort()
    r = int(u * 4)
    parity = r & 1
    if len(buf) % 2 == 0:
        return [], buf[parity::2]
    if r >> 1:
        return [buf[-1]], buf[parity:-1:2]
    return [buf[0]], buf[1 + parity::2]


class KLLSketch:
    """Mergeable streaming quantile sketch.

    Level ``h`` holds items of implicit weight ``2**(h-1)``. When a level
    reaches its capacity it is sorted and a random half (odd or even
    positions) moves up one level at double weight. Levels whose capacity
    would be 2 are replaced by a single weighted sampler.

    Example::

        sk = KLLSketch(Params(k=200), seed=7)
        sk.extend(values)
        sk.quantile(0.5), sk.rank(3.0)
    """

    def __init__(self, params: Params, seed: int = 0):
        if not isinstance(params, Params):
            raise TypeError("params must be a Params instance")
        self.params = params
        self.seed = int(seed) & U64_MAX
        self.n = 0
        self.sampler = Sampler()
        self._rng = UniformStream(self.seed)
        self._levels: List[List[Any]] = [[]]
        self._count = 0  # items held in levels, excluding the sampler
        self._H = 1
        self._caps = capacities(params, 1)
        # audit counters, indexed by h - 1
        self.compaction_counts: List[int] = [0]
        self.min_compaction_sizes: List[int] = [0]
        self.max_stored = 0
        self.on_compact: Optional[CompactHook] = None

    # ------------------------------------------------------------------ state

    @property
    def H(self) -> int:
        return self._H

    @property
    def compactors(self) -> List[tuple[int, List[Any]]]:
        """``(height, buffer)`` for every live level, bottom to top."""
        lo = self.sampler.height
        return [(h, self._levels[h - 1]) for h in range(lo + 1, self._H + 1)]

    def capacity(self, h: int) -> int:
        return self._caps[h - 1]

    def stored_count(self) -> int:
        return self._count + (1 if self.sampler.weight else 0)

    def stored_weight(self) -> int:
        total = self.sampler.weight
        for i, lv in enumerate(self._levels):
            total += len(lv) << i
        return total

    def space_bound(self) -> float:
        return space_bound(self.params, self._H)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return (f"KLLSketch({self.params.describe()}, n={self.n}, H={self._H}, "
                f"stored={self.stored_count()})")

    # -------------------------------------------------------------- ingestion

    def update(self, item: Any) -> None:
        """Add one item of weight 1."""
        if self.n >= U64_MAX:
            raise OverflowError("n exceeds 64 bits")
        self.n += 1
        s = self.sampler
        if s.height:
            out = s.update(item, 1, self._rng)
            if out is not None:
                self._push(s.height + 1, [out[0]])
        else:
            self._push(1, [item])
        stored = self.stored_count()
        if stored > self.max_stored:
            self.max_stored = stored

    def extend(self, items: Iterable[Any]) -> None:
        """Add many unit-weight items.

        Produces the same state and consumes the same random draws as calling
        :meth:`update` on each item in turn; it only batches the work between
        compactions.
        """
        if not isinstance(items, (list, tuple)):
            items = list(items)
        N = len(items)
        if self.n + N > U64_MAX:
            raise OverflowError("n exceeds 64 bits")
        i = 0
        while i < N:
            s = self.sampler
            if s.height == 0:
                lv = self._levels[0]
                cap = self._caps[0]
                m = min(max(1, cap - len(lv)), N - i)
                lv.extend(items[i:i + m])
                self._count += m
                target = 1
                # the last item of a triggering chunk is never observed uncompacted
                before_last = 1
            else:
                t = s.height
                lv = self._levels[t]
                cap = self._caps[t]
                size = 1 << t
                emissions = max(1, cap - len(lv))
                m = min(size - s.weight + (emissions - 1) * size, N - i)
                emitted = self._sample_run(items, i, m)
                lv.extend(emitted)
                self._count += len(emitted)
                target = t + 1
                # a triggering chunk ends on a window boundary: stored item out, emission in
                before_last = 0
            i += m
            self.n += m
            stored = self.stored_count()
            if len(lv) >= cap:
                stored -= before_last
                if stored > self.max_stored:
                    self.max_stored = stored
                self._push(target, [])
                stored = self.stored_count()
            if stored > self.max_stored:
                self.max_stored = stored

    def _sample_run(self, items: Sequence[Any], start: int, m: int) -> List[Any]:
        # Vectorised equivalent of m unit-weight Sampler.update calls. Within a
        # window the i-th item replaces the reservoir when u * (i + 1) < 1.
        s = self.sampler
        size = 1 << s.height
        v0 = s.weight
        u = self._rng.take(m)
        idx = np.arange(m)
        pos = (v0 + idx) % size
        chosen = np.maximum.accumulate(np.where(u * (pos + 1) < 1.0, idx, -1))
        ends = np.flatnonzero(pos == size - 1)
        held = s.item
        emitted = [items[start + j] if j >= 0 else held for j in chosen[ends].tolist()]
        tail = (v0 + m) % size
        if tail == 0:
            s.item, s.weight = None, 0
        else:
            j = int(chosen[-1])
            if j >= 0:
                s.item = items[start + j]
            s.weight = tail
        return emitted

    def _push(self, h: int, items: List[Any]) -> None:
        """Append items to level ``h`` and compact upward while over capacity."""
        lv = self._levels[h - 1]
        lv.extend(items)
        self._count += len(items)
        while len(lv) >= self._caps[h - 1]:
            emitted = self.compact_level(h)
            if h == self._H:
                self._grow()
            h += 1
            lv = self._levels[h - 1]
            lv.extend(emitted)
            self._count += len(emitted)

    def compact_level(self, h: int) -> List[Any]:
        """Halve level ``h``; return the items promoted to level ``h + 1``.

        The caller is responsible for placing the returned items.
        """
        lv = self._levels[h - 1]
        size = len(lv)
        withheld, emitted = compact_buffer(lv, self._rng.random())
        self._levels[h - 1] = withheld
        self._count -= size - len(withheld)
        i = h - 1
        self.compaction_counts[i] += 1
        if not self.min_compaction_sizes[i] or size < self.min_compaction_sizes[i]:
            self.min_compaction_sizes[i] = size
        if self.on_compact is not None:
            self.on_compact(h, size, self._H)
        return emitted

    def _grow(self) -> None:
        self._levels.append([])
        self.compaction_counts.append(0)
        self.min_compaction_sizes.append(0)
        self._H += 1
        self._caps = capacities(self.params, self._H)
        target = sampler_target_height(self.params, self._H)
        if target > self.sampler.height:
            self._retire(target)

    def _retire(self, t: int, extra: Sequence[tuple[Any, int]] = ()) -> None:
        """Move the sampler to height ``t`` and feed it every level ``<= t``.

        Levels are fed heaviest first and the previously held item last, so
        unit-weight streaming never overshoots a sampling window and total
        stored weight stays exact.
        """
        s = self.sampler
        carried = [(s.item, s.weight)] if s.weight else []
        s.reset(t)
        rng = self._rng
        out = []
        for h in range(t, 0, -1):
            lv = self._levels[h - 1]
            if not lv:
                continue
            w = 1 << (h - 1)
            for x in lv:
                e = s.update(x, w, rng)
                if e is not None:
                    out.append(e[0])
            self._count -= len(lv)
            self._levels[h - 1] = []
        for x, w in list(extra) + carried:
            e = s.update(x, w, rng)
            if e is not None:
                out.append(e[0])
        if out or len(self._levels[t]) >= self._caps[t]:
            self._push(t + 1, out)

    def _settle(self) -> None:
        # compact every over-full level until none remains
        changed = True
        while changed:
            changed = False
            h = self.sampler.height + 1
            while h <= self._H:
                if len(self._levels[h - 1]) >= self._caps[h - 1]:
                    self._push(h, [])
                    changed = True
                h += 1

    # ---------------------------------------------------------------- merging

    def merge(self, other: "KLLSketch", seed: Optional[int] = None) -> "KLLSketch":
        """Return a new sketch summarising both inputs; neither input changes."""
        return merge(self, other, seed)

    def copy(self, seed: Optional[int] = None) -> "KLLSketch":
        out = KLLSketch(self.params, self.seed if seed is None else seed)
        out.n = self.n
        out._H = self._H
        out._caps = self._caps
        out._levels = [list(lv) for lv in self._levels]
        out._count = self._count
        out.sampler = self.sampler.copy()
        out.compaction_counts = list(self.compaction_counts)
        out.min_compaction_sizes = list(self.min_compaction_sizes)
        out.max_stored = self.max_stored
        return out

    # ---------------------------------------------------------------- queries

    def sorted_view(self) -> tuple[List[Any], List[int]]:
        """Stored items in ascending order with their cumulative weights."""
        pairs = []
        for h, lv in self.compactors:
            w = 1 << (h - 1)
            pairs.extend((x, w) for x in lv)
        if self.sampler.weight:
            pairs.append((self.sampler.item, self.sampler.weight))
        pairs.sort(key=itemgetter(0))
        items = [p[0] for p in pairs]
        cum = list(accumulate(p[1] for p in pairs))
        return items, cum

    def rank(self, x: Any) -> int:
        """Estimated number of stream items ``<= x``."""
        items, cum = self.sorted_view()
        i = bisect_right(items, x)
        return cum[i - 1] if i else 0

    def cdf(self, xs: Sequence[Any]) -> List[int]:
        """Estimated ranks of ascending query points, in one merged pass."""
        for a, b in zip(xs, xs[1:]):
            if b < a:
                raise ValueError("cdf query points must be sorted ascending")
        items, cum = self.sorted_view()
        out = []
        i, m = 0, len(items)
        for x in xs:
            while i < m and not x < items[i]:
                i += 1
            out.append(cum[i - 1] if i else 0)
        return out

    def quantile(self, q: float) -> Any:
        """First stored item (in sorted order) whose cumulative weight reaches ``q * n``."""
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {q}")
        if self.n == 0:
            raise ValueError("quantile of an empty sketch")
        items, cum = self.sorted_view()
        i = bisect_left(cum, q * self.n)
        return items[min(i, len(items) - 1)]


def merge(a: KLLSketch, b: KLLSketch, seed: Optional[int] = None) -> KLLSketch:
    """Merge two sketches built with identical parameters.

    Same-height buffers are concatenated, both samplers and every level at or
    below the taller sampler are folded into a single sampler, and over-full
    levels are then compacted under capacities of the merged height.
    """
    if a.params != b.params:
        raise MergeError(f"params mismatch: {a.params.describe()} vs {b.params.describe()}")
    if seed is None:
        seed = int(np.random.SeedSequence([a.seed, b.seed]).generate_state(1, np.uint64)[0])
    if a.n + b.n > U64_MAX:
        raise OverflowError("n exceeds 64 bits")
    if b.n == 0:
        return a.copy(seed)
    if a.n == 0:
        return b.copy(seed)

    if (a.sampler.height, a.H) >= (b.sampler.height, b.H):
        big, small = a, b
    else:
        big, small = b, a
    params = a.params
    out = KLLSketch(params, seed)
    out.n = a.n + b.n
    H = max(a.H, b.H)
    out._H = H
    out._caps = capacities(params, H)
    out._levels = [[] for _ in range(H)]
    out.compaction_counts = [0] * H
    out.min_compaction_sizes = [0] * H
    for src in (big, small):
        for i, lv in enumerate(src._levels):
            out._levels[i].extend(lv)
            out.compaction_counts[i] += src.compaction_counts[i]
            m = src.min_compaction_sizes[i]
            if m and (not out.min_compaction_sizes[i] or m < out.min_compaction_sizes[i]):
                out.min_compaction_sizes[i] = m
    out._count = a._count + b._count
    out.sampler = big.sampler.copy()
    t = max(big.sampler.height, sampler_target_height(params, H))
    if t:
        sm = small.sampler
        out._retire(t, [(sm.item, sm.weight)] if sm.weight else [])
    out._settle()
    out.max_stored = max(a.max_stored, b.max_stored, out.stored_count())
    return out
