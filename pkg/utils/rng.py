"""
AugRL Bench - Random streams
Named counter-based substreams: every consumer (env, augmentation, policy,
buffer, ...) draws from its own Philox stream keyed by (seed, name), so adding
a consumer never shifts the draws of another.
"""

import zlib
from typing import Dict

import numpy as np
import torch

STREAM_NAMES = ("env", "augmentation", "policy", "buffer", "init", "stats", "eval", "complexity")

_MASK64 = (1 << 64) - 1


def stream_key(seed: int, name: str) -> np.ndarray:
    """128-bit Philox key for a named stream"""
    return np.array([seed & _MASK64, zlib.crc32(name.encode("utf-8"))], dtype=np.uint64)


def make_stream(seed: int, name: str) -> np.random.Generator:
    """Fresh generator for (seed, name); identical inputs give identical draws"""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, name)))


class RandomStreams:
    """Lazily created named substreams sharing one seed"""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = make_stream(self.seed, name)
        return self._streams[name]

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.get(name)

    def spawn(self, name: str, index: int) -> np.random.Generator:
        """Independent child stream, e.g. one per verification fixture"""
        return make_stream(self.seed, f"{name}/{index}")


def standard_normal(rng: np.random.Generator, shape, like: torch.Tensor) -> torch.Tensor:
    """Gaussian noise drawn from a numpy stream, as a tensor matching `like`"""
    noise = rng.standard_normal(size=tuple(shape))
    return torch.as_tensor(noise, dtype=like.dtype, device=like.device)
