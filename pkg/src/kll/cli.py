"""``kll`` command line: build, query, merge, inspect, plan and eval.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 sketch or
compatibility error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import List, Optional, TextIO

from . import bounds
from .harness import DISTRIBUTIONS, TrialConfig, run_experiment
from .params import EXP, FIXED_TOP, Params, ParamsError, sampler_target_height, space_bound
from .serial import DeserializeError, deserialize, serialize
from .sketch import KLLSketch, MergeError, merge

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SKETCH = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--c", default="2/3", help="decay ratio, rational '2/3' or decimal")
    p.add_argument("--mode", choices=[EXP, FIXED_TOP], default=EXP)
    p.add_argument("--s", type=int, default=None, help="fixed-capacity top levels (fixedtop)")
    p.add_argument("--seed", type=int, default=0)


def _params(args: argparse.Namespace) -> Params:
    s = args.s
    if s is None:
        s = 0 if args.mode == EXP else None
    if s is None:
        raise CliError("--mode fixedtop requires --s", EXIT_USAGE)
    try:
        return Params(args.k, args.c, args.mode, s)
    except ParamsError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _read_numbers(stream: TextIO) -> List[float]:
    values = []
    for lineno, line in enumerate(stream, 1):
        text = line.strip()
        if not text:
            continue
        try:
            x = float(text)
        except ValueError:
            raise CliError(f"line {lineno}: not a number: {text[:40]!r}", EXIT_DATA) from None
        if not math.isfinite(x):
            raise CliError(f"line {lineno}: non-finite value {text!r}", EXIT_DATA)
        values.append(x)
    return values


def _load(path: str, seed: int = 0) -> KLLSketch:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}", EXIT_SKETCH) from exc
    try:
        return deserialize(data, seed)
    except DeserializeError as exc:
        raise CliError(f"{path}: {exc}", EXIT_SKETCH) from exc


def _float_arg(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise CliError(f"not a number: {text!r}", EXIT_USAGE) from None
    if math.isnan(x):
        raise CliError("NaN is not a valid query", EXIT_USAGE)
    return x


def cmd_build(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    params = _params(args)
    if args.input in (None, "-"):
        values = _read_numbers(sys.stdin)
    else:
        try:
            with open(args.input) as fh:
                values = _read_numbers(fh)
        except OSError as exc:
            raise CliError(f"{args.input}: {exc.strerror}", EXIT_DATA) from exc
    sk = KLLSketch(params, args.seed)
    sk.extend(values)
    Path(args.out).write_bytes(serialize(sk))
    print(f"n={sk.n} H={sk.H} stored={sk.stored_count()}", file=err)
    return 0


def cmd_query(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    sk = _load(args.sketch)
    if args.rank is not None:
        print(sk.rank(_float_arg(args.rank)), file=out)
    elif args.quantile is not None:
        q = _float_arg(args.quantile)
        if not 0.0 <= q <= 1.0:
            raise CliError(f"quantile {q} outside [0, 1]", EXIT_USAGE)
        if sk.n == 0:
            raise CliError("quantile of an empty sketch", EXIT_SKETCH)
        print(repr(sk.quantile(q)), file=out)
    else:
        xs = [_float_arg(t) for t in args.cdf.split(",") if t.strip()]
        if any(b < a for a, b in zip(xs, xs[1:])):
            raise CliError("--cdf points must be sorted ascending", EXIT_DATA)
        for r in sk.cdf(xs):
            print(r, file=out)
    return 0


def cmd_merge(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    if len(args.inputs) < 2:
        raise CliError("merge needs at least two input sketches", EXIT_USAGE)
    sketches = [_load(p, args.seed) for p in args.inputs]
    acc = sketches[0]
    try:
        for i, sk in enumerate(sketches[1:]):
            acc = merge(acc, sk, args.seed + i)
    except MergeError as exc:
        raise CliError(str(exc), EXIT_SKETCH) from exc
    Path(args.out).write_bytes(serialize(acc))
    print(f"n={acc.n} H={acc.H} stored={acc.stored_count()}", file=err)
    return 0


def cmd_inspect(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    sk = _load(args.sketch)
    p = sk.params
    s = sk.sampler
    print(f"params: {p.describe()}", file=out)
    print(f"n: {sk.n}", file=out)
    print(f"H: {sk.H}", file=out)
    item = repr(s.item) if s.weight else "none"
    print(f"sampler: h={s.height} v={s.weight} item={item}", file=out)
    print("levels (h, capacity, count):", file=out)
    for h, buf in sk.compactors:
        print(f"  {h} {sk.capacity(h)} {len(buf)}", file=out)
    stored = sk.stored_count()
    limit = sk.space_bound()
    print(f"stored: {stored} (bound {limit:.1f})", file=out)
    print(f"stored weight: {sk.stored_weight()}", file=out)
    ok = stored <= limit and s.weight < (1 << s.height)
    print(f"audit: {'PASS' if ok else 'FAIL'}", file=out)
    return 0


def cmd_plan(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    eps, delta = args.eps, args.delta
    if not (0 < eps < 1 and 0 < delta < 1):
        raise CliError("--eps and --delta must lie in (0, 1)", EXIT_USAGE)
    try:
        c = float(Params(4, args.c).c)
    except ParamsError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    target = delta * eps / 2 if args.all_quantiles else delta
    q_eps = eps / 2 if args.all_quantiles else eps
    print(f"problem: {'all-quantiles' if args.all_quantiles else 'single-quantile'}", file=out)
    print(f"eps: {eps}", file=out)
    print(f"delta: {delta}", file=out)
    if args.fixed_top:
        k, s = bounds.fixed_top_params(q_eps, target, args.cprime)
        params = Params(k, args.c, FIXED_TOP, s)
        print(f"k: {k}", file=out)
        print(f"s: {s}", file=out)
        print(f"fixed_top_check: {bounds.fixed_top_check(q_eps, k, s, target, args.cprime)}",
              file=out)
        print(f"top-level deterministic error: {s / k:.6g} n", file=out)
        gap_comp, gap_samp = s, 2 * s + (k - 1).bit_length()
    else:
        k = bounds.k_for_all(eps, delta, c) if args.all_quantiles else bounds.k_for_single(eps, delta, c)
        params = Params(k, args.c)
        print(f"k: {k}", file=out)
        gap_comp, gap_samp = 0, None
    # the gap between top level and sampler height is constant once the sampler is active
    H = 64
    gap_samp = H - sampler_target_height(params, H) if gap_samp is None else gap_samp
    comp = bounds.compactor_fail_bound(q_eps, k, c, H, H - gap_comp)
    samp = bounds.sampler_fail_bound(q_eps, k, c, H, H - gap_samp)
    print(f"compactor_fail_bound: {comp:.6g}", file=out)
    print(f"sampler_fail_bound: {samp:.6g}", file=out)
    print(f"combined_fail_bound: {min(1.0, comp + samp):.6g}", file=out)
    print(f"space: at most {space_bound(params, 0):.1f} + 2H items", file=out)
    return 0


def cmd_eval(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    params = _params(args)
    if args.trials < 1 or args.n < 1:
        raise CliError("--n and --trials must be positive", EXIT_USAGE)
    try:
        cfg = TrialConfig(n=args.n, params=params, distribution=args.dist, seed=args.seed,
                          eps=args.eps, fanout=args.fanout)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    summary = run_experiment(cfg, args.trials, jobs=args.jobs)
    text = summary.to_json() + "\n" if args.format == "json" else summary.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        out.write(text)
    s = summary.summary()
    print(f"failure_rate={s['failure_rate']:.4g} p50={s['p50']:.6g} p90={s['p90']:.6g} "
          f"p99={s['p99']:.6g} violations={s['violations']}", file=err)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kll", description="KLL streaming quantile sketches")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="sketch newline-delimited numbers")
    p.add_argument("input", nargs="?", help="input file (default: stdin)")
    p.add_argument("--out", required=True)
    _add_params(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="rank, quantile or cdf queries")
    p.add_argument("sketch")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rank")
    g.add_argument("--quantile")
    g.add_argument("--cdf", help="comma-separated ascending points")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("merge", help="merge sketch files (left fold)")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("inspect", help="dump a sketch file")
    p.add_argument("sketch")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("plan", help="choose k (and s) for an error target")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--all-quantiles", action="store_true")
    p.add_argument("--fixed-top", action="store_true")
    p.add_argument("--c", default="2/3")
    p.add_argument("--cprime", type=float, default=1.0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("eval", help="Monte Carlo error experiment")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--trials", type=int, default=10)
    _add_params(p)
    p.add_argument("--fanout", type=int, default=1)
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="random-permutation")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None, out: TextIO = None, err: TextIO = None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out, err)
    except CliError as exc:
        print(f"kll: {exc}", file=err)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
