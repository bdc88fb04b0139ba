"""Exact-rank oracle and Monte Carlo experiments over sketches."""

from __future__ import annotations

import csv
import io
import json
import math
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bounds import compactions_bound, height_bound
from .params import Params
from .sketch import U64_MAX, KLLSketch, merge

DISTRIBUTIONS = (
    "random-permutation",
    "sorted-ascending",
    "sorted-descending",
    "iid-uniform",
    "adversarial-zoom",
)

REPORT_FIELDS = ["trial", "n", "k", "c", "mode", "s", "fanout", "max_err",
                 "max_err_over_n", "stored_hwm", "H", "seed"]


def exact_rank(data: Sequence, x) -> int:
    """Number of elements of sorted ``data`` that are ``<= x``."""
    return bisect_right(data, x)


def trial_seed(master: int, trial: int) -> int:
    """Seed of trial ``trial`` in an experiment seeded with ``master``."""
    return (master ^ trial) & U64_MAX


def derive_seed(*words: int) -> int:
    return int(np.random.SeedSequence([w & U64_MAX for w in words]).generate_state(1, np.uint64)[0])


def make_stream(distribution: str, n: int, seed: int) -> np.ndarray:
    """Generate ``n`` float items for a named distribution."""
    rng = np.random.default_rng(derive_seed(seed, 0xDA7A))
    if distribution == "random-permutation":
        return rng.permutation(n).astype(np.float64) + 1.0
    if distribution == "sorted-ascending":
        return np.arange(1, n + 1, dtype=np.float64)
    if distribution == "sorted-descending":
        return np.arange(n, 0, -1, dtype=np.float64)
    if distribution == "iid-uniform":
        return rng.random(n)
    if distribution == "adversarial-zoom":
        # rounds of halving size, each confined to a halving window around 0.5
        out = np.empty(n)
        start, width, block = 0, 1.0, max(1, n // 2)
        while start < n:
            m = min(block, n - start)
            out[start:start + m] = 0.5 + (rng.random(m) - 0.5) * width
            start += m
            width /= 2
            block = max(1, block // 2)
        return out
    raise ValueError(f"unknown distribution {distribution!r}")


@dataclass
class TrialConfig:
    n: int
    params: Params
    distribution: str = "random-permutation"
    seed: int = 0
    eps: float = 0.01
    fanout: int = 1
    merge_shape: str = "tree"
    query_ranks: Optional[Sequence[int]] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.fanout < 1:
            raise ValueError("fanout must be >= 1")
        if self.merge_shape not in ("tree", "fold"):
            raise ValueError(f"unknown merge shape {self.merge_shape!r}")
        if self.query_ranks is None and len(self.grid_ranks()) < 2:
            raise ValueError("query grid needs at least 2 points; lower eps")

    def grid_ranks(self) -> List[int]:
        if self.query_ranks is not None:
            return [int(r) for r in self.query_ranks]
        step = max(1, math.ceil(self.eps * self.n))
        return sorted({min(self.n, i * step) for i in range(1, math.ceil(1 / self.eps) + 1)})


@dataclass
class ErrorProfile:
    seed: int
    n: int
    errors: List[int]
    max_abs_error: int
    stored_hwm: int
    H: int
    compaction_counts: List[int]
    violations: List[str] = field(default_factory=list)
    sketch_n: int = 0


def audit(sketch: KLLSketch, n: int) -> List[str]:
    """Check a finished sketch against the analytic height, compaction and space bounds.

    Each violation string starts with its category: ``height``,
    ``compactions``, ``compaction-size`` or ``space``.
    """
    p = sketch.params
    H = sketch.H
    c = float(p.c)
    out = []
    hb = height_bound(n, p.k, c)
    if H >= 2 and H > hb:
        out.append(f"height: H={H} exceeds height bound {hb}")
    for h in range(1, H + 1):
        count = sketch.compaction_counts[h - 1]
        limit = compactions_bound(h, H, c)
        if count > limit:
            out.append(f"compactions: level {h}: {count} compactions exceed bound {limit:.3g}")
        smallest = sketch.min_compaction_sizes[h - 1]
        floor = p.k * c ** (H - h)
        if count and smallest < floor:
            out.append(f"compaction-size: level {h}: compaction of {smallest} items below {floor:.3g}")
    if sketch.max_stored > sketch.space_bound():
        out.append(f"space: stored high-water {sketch.max_stored} exceeds {sketch.space_bound():.1f}")
    return out


def build_sketch(data: Sequence, params: Params, seed: int, fanout: int = 1,
                 shape: str = "tree") -> tuple[KLLSketch, int]:
    """Sketch ``data`` directly or through a merge plan; return ``(sketch, hwm)``.

    With ``fanout > 1`` the stream is cut into contiguous blocks, each block
    is sketched with its own seed, and the parts are merged either as a
    balanced pairwise tree or as a left fold.
    """
    items = data.tolist() if isinstance(data, np.ndarray) else list(data)
    if fanout == 1:
        sk = KLLSketch(params, seed)
        sk.extend(items)
        return sk, sk.max_stored
    bounds = np.linspace(0, len(items), fanout + 1).astype(int)
    parts = []
    for i in range(fanout):
        sk = KLLSketch(params, derive_seed(seed, 1, i))
        sk.extend(items[bounds[i]:bounds[i + 1]])
        parts.append(sk)
    hwm = max(p.max_stored for p in parts)
    j = 0
    if shape == "fold":
        acc = parts[0]
        for p in parts[1:]:
            acc = merge(acc, p, derive_seed(seed, 2, j))
            j += 1
            hwm = max(hwm, acc.max_stored)
        return acc, hwm
    while len(parts) > 1:
        nxt = []
        for a, b in zip(parts[::2], parts[1::2]):
            nxt.append(merge(a, b, derive_seed(seed, 2, j)))
            j += 1
            hwm = max(hwm, nxt[-1].max_stored)
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0], hwm


def run_trial(cfg: TrialConfig) -> ErrorProfile:
    """Sketch one generated stream and measure signed rank errors on the query grid."""
    data = make_stream(cfg.distribution, cfg.n, cfg.seed)
    sk, hwm = build_sketch(data, cfg.params, cfg.seed, cfg.fanout, cfg.merge_shape)
    ordered = np.sort(data)
    queries = [float(ordered[r - 1]) for r in cfg.grid_ranks()]
    truth = [exact_rank(ordered, x) for x in queries]
    est = sk.cdf(queries)
    errors = [e - t for e, t in zip(est, truth)]
    return ErrorProfile(
        seed=cfg.seed,
        n=cfg.n,
        errors=errors,
        max_abs_error=max(abs(e) for e in errors),
        stored_hwm=hwm,
        H=sk.H,
        compaction_counts=list(sk.compaction_counts),
        violations=audit(sk, cfg.n),
        sketch_n=sk.n,
    )


@dataclass
class ExperimentSummary:
    config: TrialConfig
    profiles: List[ErrorProfile]
    eps: float

    @property
    def max_errors(self) -> np.ndarray:
        return np.array([p.max_abs_error for p in self.profiles])

    def failure_rate(self, eps: Optional[float] = None) -> float:
        eps = self.eps if eps is None else eps
        return float(np.mean(self.max_errors > eps * self.config.n))

    def error_quantiles(self) -> Dict[str, float]:
        q = np.percentile(self.max_errors, [50, 90, 99])
        return {"p50": float(q[0]), "p90": float(q[1]), "p99": float(q[2])}

    def mean_signed_errors(self) -> List[float]:
        return np.mean([p.errors for p in self.profiles], axis=0).tolist()

    def summary(self) -> Dict[str, object]:
        hwm = [p.stored_hwm for p in self.profiles]
        return {
            "trials": len(self.profiles),
            "eps": self.eps,
            "failure_rate": self.failure_rate(),
            **self.error_quantiles(),
            "mean_signed_errors": self.mean_signed_errors(),
            "stored_hwm_max": max(hwm),
            "stored_hwm_mean": float(np.mean(hwm)),
            "violations": sum(len(p.violations) for p in self.profiles),
        }

    def rows(self) -> List[Dict[str, object]]:
        p = self.config.params
        base = {"n": self.config.n, "k": p.k, "c": str(p.c), "mode": p.mode, "s": p.s,
                "fanout": self.config.fanout}
        out = []
        for i, prof in enumerate(self.profiles):
            out.append({"trial": i, **base, "max_err": prof.max_abs_error,
                        "max_err_over_n": prof.max_abs_error / self.config.n,
                        "stored_hwm": prof.stored_hwm, "H": prof.H, "seed": prof.seed})
        worst = int(self.max_errors.max())
        out.append({"trial": "summary", **base, "max_err": worst,
                    "max_err_over_n": worst / self.config.n,
                    "stored_hwm": max(pr.stored_hwm for pr in self.profiles),
                    "H": max(pr.H for pr in self.profiles), "seed": self.config.seed})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        rows = self.rows()
        rows[-1] = {**rows[-1], **self.summary()}
        return json.dumps(rows, indent=1)


def _with_seed(cfg: TrialConfig, seed: int, **changes) -> TrialConfig:
    fields = dict(cfg.__dict__)
    fields.update(seed=seed, **changes)
    return TrialConfig(**fields)


def run_experiment(cfg: TrialConfig, trials: int, eps: Optional[float] = None,
                   jobs: int = 1) -> ExperimentSummary:
    """Run ``trials`` independent trials; trial ``i`` uses seed ``cfg.seed ^ i``.

    ``eps`` sets the failure threshold ``eps * n`` (defaults to ``cfg.eps``).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfgs = [_with_seed(cfg, trial_seed(cfg.seed, i)) for i in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            profiles = list(pool.map(run_trial, cfgs))
    else:
        profiles = [run_trial(c) for c in cfgs]
    return ExperimentSummary(cfg, profiles, cfg.eps if eps is None else eps)


@dataclass
class MergeComparison:
    single: ExperimentSummary
    merged: ExperimentSummary

    def quantile_ratios(self) -> Dict[str, float]:
        a = self.single.error_quantiles()
        b = self.merged.error_quantiles()
        return {key: (b[key] / a[key] if a[key] else math.inf if b[key] else 1.0) for key in a}


def merge_experiment(cfg: TrialConfig, fanout: int, trials: int,
                     jobs: int = 1) -> MergeComparison:
    """Compare one sketch over each stream with a ``fanout``-way merge over the same stream."""
    if fanout < 2:
        raise ValueError("fanout must be >= 2")
    single = run_experiment(_with_seed(cfg, cfg.seed, fanout=1), trials, jobs=jobs)
    merged = run_experiment(_with_seed(cfg, cfg.seed, fanout=fanout), trials, jobs=jobs)
    return MergeComparison(single, merged)
