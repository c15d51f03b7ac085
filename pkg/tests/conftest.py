"""Shared builders for the test suite."""

from __future__ import annotations

import random

import numpy as np
import pytest

from lsd_wfst.fixtures import make_random_posteriors, make_random_wfst
from lsd_wfst.posteriors import PosteriorMatrix
from lsd_wfst.wfst import parse_wfst_text

ONE_ARC_TEXT = "0 1 1 1 0.5\n1 0.0\n"

# Two 2-arc paths with totals 1.1 (via state 1) and 1.4 (via state 2).
DIAMOND_TEXT = """\
0 1 1 1 1.0
1 3 2 2 0.1
0 2 3 3 0.5
2 3 4 4 0.9
3 0.0
"""


@pytest.fixture
def one_arc_wfst():
    return parse_wfst_text(ONE_ARC_TEXT)


@pytest.fixture
def diamond_wfst():
    return parse_wfst_text(DIAMOND_TEXT)


def uniform_posteriors(num_frames: int, num_labels: int, blank_col: int = 0,
                       blank_prob: float = 0.1) -> PosteriorMatrix:
    """Rows with a fixed blank probability and the rest spread evenly."""
    rows = np.zeros((num_frames, num_labels + 1))
    label_cols = [c for c in range(num_labels + 1) if c != blank_col]
    for t in range(num_frames):
        rows[t, blank_col] = blank_prob
        for c in label_cols:
            rows[t, c] = (1.0 - blank_prob) / num_labels
    return PosteriorMatrix(rows, blank_col)


def posteriors_from_rows(rows, blank_col: int = 0) -> PosteriorMatrix:
    return PosteriorMatrix(np.asarray(rows, dtype=np.float64), blank_col)


def random_instance(seed: int, *, max_states: int = 12, max_arcs: int = 30,
                    max_frames: int = 6, num_labels: int = 3,
                    eps_fraction: float = 0.15, blank_fraction: float = 0.0,
                    weight_grid=None, selfloops: bool = False):
    """One seeded (wfst, posteriors) pair within the small-instance envelope."""
    rng = random.Random(seed)
    states = rng.randrange(2, max_states + 1)
    arcs = rng.randrange(states, max_arcs + 1)
    frames = rng.randrange(0, max_frames + 1)
    labels = rng.randrange(1, num_labels + 1)
    wfst = make_random_wfst(rng, states, arcs, labels,
                            eps_fraction=eps_fraction, selfloops=selfloops,
                            weight_grid=weight_grid)
    posts = make_random_posteriors(rng, frames, labels, blank_fraction=blank_fraction)
    return wfst, posts
