"""Seed-splitting scheme.

All randomness in a run flows from one top-level seed. Independent streams are
derived as ``default_rng([seed, tag, *indices])``, where ``tag`` is one of the
constants below and ``indices`` are non-negative integers (iteration, layer,
worker, column, ...). Identical (seed, tag, indices) always reproduces the
same stream.
"""

from __future__ import annotations

import numpy as np

TAG_SYNTH = 1        # synthetic gradient streams
TAG_SUBSAMPLE = 2    # element-level down-sampling inside the entropy tracker
TAG_BASIS = 3        # warm-start basis columns of the compressor
TAG_DATA = 4         # toy-trainer feature pool
TAG_TEACHER = 5      # toy-trainer labeling weights
TAG_INIT = 6         # toy-trainer parameter init
TAG_BATCH = 7        # toy-trainer per-step batch indices
TAG_TABLE = 8        # rank/error table eigenvalue draws
TAG_NOISE = 9        # injected measurement noise (tests, demos)
TAG_LABEL_NOISE = 10  # toy-trainer teacher logit noise


def rng(seed: int, tag: int, *indices: int) -> np.random.Generator:
    """Generator for stream (seed, tag, indices); every index must be >= 0."""
    return np.random.default_rng([seed, tag, *indices])
