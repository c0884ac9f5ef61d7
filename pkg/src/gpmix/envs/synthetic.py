"""Piecewise-linear regression stream with hidden regime labels.

An inference-only testbed: inputs are standard normal, targets follow one
of several linear maps plus Gaussian noise, and the active map switches at
fixed segment boundaries.  The regime index rides along as the hidden
truth label, readable only by evaluation code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from gpmix.gp import ExperienceTuple


@dataclass(frozen=True)
class SyntheticStreamConfig:
    """Linear maps, per-segment lengths and which map each segment uses
    (defaults to cycling through the maps in order)."""

    maps: Tuple[np.ndarray, ...]
    segment_lengths: Tuple[int, ...]
    segment_maps: Optional[Tuple[int, ...]] = None
    noise_std: float = 0.01
    input_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        maps = tuple(np.asarray(a, dtype=float) for a in self.maps)
        if not maps:
            raise ValueError("need at least one linear map")
        shape = maps[0].shape
        if any(a.shape != shape or a.ndim != 2 for a in maps):
            raise ValueError("all maps must share one (c, D) shape")
        object.__setattr__(self, "maps", maps)
        seg_maps = self.segment_maps
        if seg_maps is None:
            seg_maps = tuple(i % len(maps) for i in range(len(self.segment_lengths)))
            object.__setattr__(self, "segment_maps", seg_maps)
        if len(seg_maps) != len(self.segment_lengths):
            raise ValueError("segment_maps and segment_lengths must align")
        if any(i < 0 or i >= len(maps) for i in seg_maps):
            raise ValueError("segment map index out of range")
        if any(n < 1 for n in self.segment_lengths):
            raise ValueError("segments must be nonempty")

    @property
    def input_dim(self) -> int:
        return self.maps[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.maps[0].shape[0]


def synthetic_stream(cfg: SyntheticStreamConfig) -> Iterator[ExperienceTuple]:
    """Yield the labeled stream deterministically from the config seed."""
    rng = np.random.default_rng(cfg.seed)
    for length, map_idx in zip(cfg.segment_lengths, cfg.segment_maps):
        A = cfg.maps[map_idx]
        for _ in range(length):
            x = rng.normal(0.0, cfg.input_std, size=cfg.input_dim)
            y = A @ x + rng.normal(0.0, cfg.noise_std, size=cfg.output_dim)
            yield ExperienceTuple(x, y, map_idx)
