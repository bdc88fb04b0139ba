"""Mergeable streaming quantile sketches with sampler-backed bottom levels."""

from .params import Params, ParamsError, capacity, sampler_target_height, space_bound
from .sampler import Sampler
from .serial import DeserializeError, deserialize, serialize
from .sketch import KLLSketch, MergeError, compact_buffer, merge

__all__ = [
    "DeserializeError",
    "KLLSketch",
    "MergeError",
    "Params",
    "ParamsError",
    "Sampler",
    "capacity",
    "compact_buffer",
    "deserialize",
    "merge",
    "sampler_target_height",
    "serialize",
    "space_bound",
]
