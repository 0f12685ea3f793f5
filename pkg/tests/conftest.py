from __future__ import annotations

import random
from fractions import Fraction

import numpy as np
import pytest

from rolledit.midi_io import Note, Score, score_from_notes
from rolledit.sde import DEFAULT_SCHEDULE, BetaSchedule, alpha_bar_path


class AnalyticGaussianScore:
    """Closed-form perturbed score for row-iid Gaussian data N(mu, Sigma).

    Treats each row of the grid as an independent d-dimensional sample, so a
    single sampling run over an (m, d) grid yields m draws at once. Records
    every (t, cond) seen for spy-style assertions.
    """

    def __init__(self, mu, sigma, sched: BetaSchedule = DEFAULT_SCHEDULE,
                 t0: float = 1.0):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        self.sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
        self.sched = sched
        self.t0 = t0
        self.path = alpha_bar_path(sched, t0)
        self.calls: list[tuple[float, object]] = []

    def evaluate(self, x, t, cond):
        self.calls.append((t, cond))
        n = self.sched.num_steps
        n_eff = min(n, max(1, round(t * n / self.t0)))
        ab = self.path[n_eff]
        cov = ab * self.sigma + (1.0 - ab) * np.eye(len(self.mu))
        prec = np.linalg.inv(cov)
        return -(x - np.sqrt(ab) * self.mu) @ prec


def random_quantized_score(rng: random.Random, max_bars: int = 8,
                           grid: Fraction = Fraction(1)) -> Score:
    """A score on the given grid with no two notes sharing (onset, pitch)."""
    num_bars = rng.randint(1, max_bars)
    total = num_bars * 4
    slots = int(total / grid)
    count = rng.randint(0, min(40, slots * 4))
    used: set[tuple[int, Fraction]] = set()
    notes = []
    for _ in range(count):
        pitch = rng.randint(0, 127)
        onset = grid * rng.randint(0, slots - 1)
        if (pitch, onset) in used:
            continue
        used.add((pitch, onset))
        max_dur = total - onset
        dur_steps = rng.randint(1, max(1, min(16, int(max_dur / grid))))
        notes.append(Note(pitch, onset, grid * dur_steps, rng.randint(1, 127)))
    return score_from_notes(notes, num_bars=num_bars)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)
