"""Easy-to-hard pacing schedules and per-round batch selection."""

import math
from dataclasses import dataclass

PACES = ("linear", "sqrt", "exp")


@dataclass
class PacingConfig:
    beta: float            # initial sample ratio
    alpha: float           # fraction of rounds until all data is used
    pace: str = "linear"
    batch_size: int = 8
    total_rounds: int = 100

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.pace not in PACES:
            raise ValueError(f"pace must be one of {PACES}")
        if self.batch_size < 1 or self.total_rounds < 1:
            raise ValueError("batch_size and total_rounds must be >= 1")


def pace_count(cfg, t, n_k):
    """Number of batches a device trains on in round t.

    Ceil of the schedule value, clamped to [1, total batch count]; the exp
    pace saturates after very few rounds by construction and is clamped
    rather than renormalized.
    """
    if t < 0:
        raise ValueError("round index must be >= 0")
    if n_k < cfg.batch_size:
        raise ValueError("device has fewer samples than one batch")
    n_batches = math.ceil(n_k / cfg.batch_size)
    at = cfg.alpha * cfg.total_rounds
    if cfg.pace == "linear":
        ramp = t / at
    elif cfg.pace == "sqrt":
        ramp = t ** 2 / at
    else:  # exp
        ramp = math.exp(min(t, 700)) / at
    ratio = cfg.beta + (1.0 - cfg.beta) * ramp
    count = math.ceil(ratio * n_batches)
    return max(1, min(count, n_batches))


def sort_batches(scores):
    """Batch indices in ascending difficulty; ties break by batch index."""
    if len(scores) == 0:
        raise ValueError("no batches to sort")
    return [bs.batch_id for bs in
            sorted(scores, key=lambda bs: (bs.score, bs.batch_id))]


def select_batches(order, count):
    """First `count` entries of the sorted order (the easiest batches)."""
    if not 1 <= count <= len(order):
        raise ValueError(f"count {count} out of range 1..{len(order)}")
    return list(order[:count])
