"""Named substreams of the master seed.

Every source of randomness in a run draws from its own PCG64 generator keyed
by ``SeedSequence([master_seed, TAG, *extra_key])``. Keys are pure values
(episode index, member index, step index), never long-lived mutable streams,
so a checkpoint only has to record the master seed and the resume point to
reproduce the uninterrupted run bit for bit.

Tags:

* ENV: per-episode environment randomness (start jitter, hidden pitch),
  keyed by (seed, ENV, episode).
* MEMBER_INIT: ensemble member weight init, keyed by (seed, MEMBER_INIT, member).
* SHUFFLE: bootstrap resampling and minibatch shuffling during fitting,
  keyed by (seed, SHUFFLE, member, fit_key).
* CEM: planner sampling noise, keyed by (seed, CEM, episode, step).
* WARMUP: uniform random warmup actions, keyed by (seed, WARMUP, episode).
* EVAL_ENV / EVAL_CEM: evaluation counterparts keyed by the eval seed, so
  evaluation never replays training randomness.
"""

from __future__ import annotations

import numpy as np

ENV = 1
MEMBER_INIT = 2
SHUFFLE = 3
CEM = 4
WARMUP = 5
EVAL_ENV = 6
EVAL_CEM = 7


def make_rng(*key: int) -> np.random.Generator:
    """Generator for a documented substream key (all parts must be >= 0)."""
    parts = [int(k) for k in key]
    if any(k < 0 for k in parts):
        raise ValueError(f"stream key parts must be non-negative, got {parts}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))


def derive_seed(*key: int) -> int:
    """Deterministic 31-bit seed for components that take a plain int seed."""
    return int(make_rng(*key).integers(0, 2**31 - 1))
