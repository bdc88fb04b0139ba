"""Line-oriented text encoding of a sketch (``KLLv1``).

Layout::

    KLLv1
    params k=200 c=2/3 mode=exp s=0
    n=1000
    sampler h=0 v=0 item=none
    level h=1 count=2
    3ff0000000000000
    4000000000000000
    ...
    END

Items are IEEE-754 doubles written as the 16 hex digits of their bit
pattern, so a round trip is bit-exact. The random generator state is not
stored; :func:`deserialize` takes a fresh seed.
"""

from __future__ import annotations

import re
import struct
from typing import Any, List, Union

from .params import Params, ParamsError, capacities
from .sampler import Sampler
from .sketch import U64_MAX, KLLSketch

MAGIC = "KLLv1"

_PARAMS = re.compile(r"params k=(\d+) c=(\d+)/(\d+) mode=(exp|fixedtop) s=(\d+)")
_N = re.compile(r"n=(\d+)")
_SAMPLER = re.compile(r"sampler h=(\d+) v=(\d+) item=([0-9a-f]{16}|none)")
_LEVEL = re.compile(r"level h=(\d+) count=(\d+)")
_ITEM = re.compile(r"[0-9a-f]{16}")


class DeserializeError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def encode_item(x: Any) -> str:
    return struct.pack(">d", x).hex()


def decode_item(text: str) -> float:
    return struct.unpack(">d", bytes.fromhex(text))[0]


def serialize(sketch: KLLSketch) -> bytes:
    p = sketch.params
    s = sketch.sampler
    lines = [
        MAGIC,
        f"params k={p.k} c={p.c.numerator}/{p.c.denominator} mode={p.mode} s={p.s}",
        f"n={sketch.n}",
        f"sampler h={s.height} v={s.weight} item={encode_item(s.item) if s.weight else 'none'}",
    ]
    for h, buf in sketch.compactors:
        lines.append(f"level h={h} count={len(buf)}")
        lines.extend(encode_item(x) for x in buf)
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii")


def deserialize(data: Union[bytes, str], seed: int = 0) -> KLLSketch:
    """Rebuild a sketch from :func:`serialize` output.

    Raises :class:`DeserializeError` carrying the 1-based line number of the
    first problem found.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise DeserializeError("non-ascii content", 1) from exc
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(pattern: "re.Pattern[str]", what: str) -> "re.Match[str]":
        nonlocal pos
        if pos >= len(lines):
            raise DeserializeError(f"truncated: expected {what}", pos + 1)
        m = pattern.fullmatch(lines[pos])
        if m is None:
            raise DeserializeError(f"malformed {what}: {lines[pos][:60]!r}", pos + 1)
        pos += 1
        return m

    if not lines or lines[0] != MAGIC:
        raise DeserializeError("bad magic", 1)
    pos = 1
    m = take(_PARAMS, "params")
    k, num, den, mode, s = m.groups()
    if int(den) == 0:
        raise DeserializeError("c has zero denominator", pos)
    try:
        params = Params(int(k), f"{num}/{den}", mode, int(s))
    except ParamsError as exc:
        raise DeserializeError(str(exc), pos) from exc
    n = int(take(_N, "n").group(1))
    if n > U64_MAX:
        raise DeserializeError("n exceeds 64 bits", pos)
    sh, sv, sitem = take(_SAMPLER, "sampler").groups()
    sh, sv = int(sh), int(sv)
    if sv >= (1 << sh) or (sv == 0) != (sitem == "none"):
        raise DeserializeError("inconsistent sampler state", pos)
    sampler = Sampler(sh, decode_item(sitem) if sv else None, sv)

    levels: List[List[float]] = [[] for _ in range(sh)]
    while pos < len(lines) and lines[pos] != "END":
        h, count = (int(g) for g in take(_LEVEL, "level header").groups())
        if h != len(levels) + 1:
            raise DeserializeError(f"expected level h={len(levels) + 1}, got h={h}", pos)
        buf = []
        for _ in range(count):
            buf.append(decode_item(take(_ITEM, "item").group(0)))
        levels.append(buf)
    if pos >= len(lines):
        raise DeserializeError("truncated: missing END", pos + 1)
    pos += 1
    if pos < len(lines):
        raise DeserializeError("unexpected content after END", pos + 1)
    H = len(levels)
    if H <= sh:
        raise DeserializeError("no level above the sampler", pos)

    out = KLLSketch(params, seed)
    out.n = n
    out._H = H
    out._caps = capacities(params, H)
    out._levels = levels
    out._count = sum(map(len, levels))
    out.sampler = sampler
    out.compaction_counts = [0] * H
    out.min_compaction_sizes = [0] * H
    out.max_stored = out.stored_count()
    return out
