"""Reparameterized sampling for the discrete and continuous latents, plus decay schedules."""

import math
from dataclasses import dataclass

import numpy as np

from .numkit import sigmoid

PROB_CLAMP = 1e-7


@dataclass
class GumbelPair:
    """Per-class standard-Gumbel draws for the two binary outcomes."""

    g0: np.ndarray  # batch x K
    g1: np.ndarray  # batch x K


@dataclass
class GaussNoise:
    """Standard-normal draws for the continuous quality variable."""

    zeta: np.ndarray  # batch x D


@dataclass
class DecaySchedule:
    """max(floor, exp(-scale * step)); shared shape for temperature and annealing."""

    scale: float = 3e-5
    floor: float = 0.5

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must be in [0, 1]")

    def value(self, step):
        if step < 0:
            raise ValueError("step must be >= 0")
        return max(self.floor, math.exp(-self.scale * step))


def schedule_value(sched, step):
    return sched.value(step)


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def gumbel_softmax_binary(q1, g0, g1, tau):
    """Temperature-relaxed binary sample in (0,1), differentiable in q1 for fixed noise.

    Equivalent to the two-way softmax of (ln q + gumbel)/tau, computed as a
    stable sigmoid of the logit difference.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    q1 = clamp_prob(np.asarray(q1, dtype=np.float64))
    u = (np.log(q1) - np.log1p(-q1) + np.asarray(g1) - np.asarray(g0)) / tau
    return sigmoid(u)


def gaussian_reparam(mu, logvar, zeta):
    """mu + sigma * zeta with sigma = exp(logvar/2)."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return mu + np.exp(0.5 * logvar) * np.asarray(zeta)
