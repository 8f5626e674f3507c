"""Per-round metrics emitted by every optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass(frozen=True)
class RoundRecord:
    round: int
    f_gap: float          # objective(x) - objective(x*) when x* is known, else nan
    grad_norm_sq: float   # ||grad f(x)||^2 of the smooth part
    dist_sq: float        # ||x - x*||^2 when x* is known, else nan
    bits_up: int
    bits_down: int
    participants: tuple


@dataclass
class RunResult:
    records: List[RoundRecord]
    x: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def measure(problem, x, rnd, bits_up, bits_down, participants) -> RoundRecord:
    g = problem.full_grad(x)
    if problem.x_star is not None:
        f_gap = problem.objective(x) - problem.f_star
        dist = x - problem.x_star
        dist_sq = float(dist @ dist)
    else:
        f_gap = math.nan
        dist_sq = math.nan
    return RoundRecord(
        round=rnd,
        f_gap=float(f_gap),
        grad_norm_sq=float(g @ g),
        dist_sq=dist_sq,
        bits_up=int(bits_up),
        bits_down=int(bits_down),
        participants=tuple(participants),
    )
