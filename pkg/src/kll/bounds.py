"""Analytic failure-probability bounds and parameter selection.

Exponential bounds use natural logs; heights use log2. Every returned
probability is clamped to [0, 1].
"""

from __future__ import annotations

import math
from typing import Sequence

Real = float


def _check_prob(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def _clamp(p: float) -> float:
    return min(1.0, max(0.0, p))


def hoeffding_tail(t: float, weights: Sequence[float]) -> float:
    """Two-sided Hoeffding tail for a sum of zero-mean terms bounded by ``weights``."""
    if not weights:
        raise ValueError("weights must be non-empty")
    if t <= 0:
        raise ValueError("t must be positive")
    var = sum(w * w for w in weights)
    return _clamp(2.0 * math.exp(-t * t / (2.0 * var)))


def decay_constant(c: float) -> float:
    """``c**2 * (2c - 1)``, the constant in the compactor bound."""
    c = float(c)
    return c * c * (2 * c - 1)


def compactor_fail_bound(eps: float, k: int, c: float, H: int, Hp: int) -> float:
    """Probability that levels ``1..Hp`` contribute rank error above ``eps * n``."""
    C = decay_constant(c)
    return _clamp(2.0 * math.exp(-C * eps * eps * k * k * 4.0 ** (H - Hp)))


def sampler_fail_bound(eps: float, k: int, c: float, H: int, Hpp: int) -> float:
    """Probability that samplers up to height ``Hpp`` contribute error above ``eps * n``."""
    return _clamp(2.0 * math.exp(-float(c) * eps * eps * k * 2.0 ** (H - Hpp) / 32.0))


def combined_fail_bound(eps: float, k: int, c: float, H: int, Hp: int, Hpp: int) -> float:
    """Bound on the probability that the error through level ``Hp`` exceeds ``2 eps n``."""
    if not Hpp < Hp <= H:
        raise ValueError(f"need Hpp < Hp <= H, got {Hpp}, {Hp}, {H}")
    return _clamp(sampler_fail_bound(eps, k, c, H, Hpp) + compactor_fail_bound(eps, k, c, H, Hp))


def k_for_single(eps: float, delta: float, c: float = 2 / 3) -> int:
    """Smallest k (at least 4) whose compactor bound at full height is ``<= delta``."""
    _check_prob("eps", eps)
    _check_prob("delta", delta)
    C = decay_constant(c)
    k = max(4, math.ceil(math.sqrt(math.log(2.0 / delta) / C) / eps))
    # guard against float rounding at the ceiling
    while compactor_fail_bound(eps, k, c, 1, 1) > delta:
        k += 1
    while k > 4 and compactor_fail_bound(eps, k - 1, c, 1, 1) <= delta:
        k -= 1
    return k


def k_for_all(eps: float, delta: float, c: float = 2 / 3) -> int:
    """k for simultaneous guarantees: ``ceil(2/eps)`` grid queries, each to ``eps/2``."""
    _check_prob("eps", eps)
    _check_prob("delta", delta)
    return k_for_single(eps / 2, delta * eps / 2, c)


def s_for(delta: float) -> int:
    """Number of fixed-capacity top levels for failure probability ``delta``."""
    _check_prob("delta", delta)
    return max(1, math.ceil(math.log2(math.log2(2.0 / delta))))


def fixed_top_check(eps: float, k: int, s: int, delta: float, cprime: float = 1.0) -> bool:
    """Both fixed-top conditions: ``eps k 2^s >= c' sqrt(ln(2/delta))`` and ``s <= k eps``."""
    return (eps * k * 2.0 ** s >= cprime * math.sqrt(math.log(2.0 / delta))
            and s <= k * eps)


def fixed_top_params(eps: float, delta: float, cprime: float = 1.0, k: int = 4) -> tuple[int, int]:
    """``(k, s)`` with ``s = s_for(delta)`` and k raised until :func:`fixed_top_check` holds."""
    _check_prob("eps", eps)
    s = s_for(delta)
    k = max(4, k)
    while not fixed_top_check(eps, k, s, delta, cprime):
        k += 1
    return k, s


def height_bound(n: int, k: int, c: float) -> int:
    """Upper bound on the number of levels after ``n`` items."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return max(1, math.ceil(math.log2(n / (float(c) * k))) + 2)


def compactions_bound(h: int, H: int, c: float) -> float:
    """Bound on the number of compactions performed at level ``h`` of ``H``."""
    return (2.0 / float(c)) ** (H - h - 1)
