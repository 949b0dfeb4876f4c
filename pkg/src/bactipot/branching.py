"""Two-type branching process for antibiotic-treated bacterial growth.

Each cell independently dies, survives unchanged, or divides in two at every
generation. Dead cells are tracked alongside live ones because qPCR measures
genome copies, which persist after cell death. The offspring mean is linked
to the antibiotic concentration by a two-parameter dose-response law, and the
expected total count (live plus dead) has closed forms that the estimation
chain relies on.

Conventions used throughout:

- ``mean`` is the expected offspring per live cell, ``p1 + 2*p2`` in [0, 2].
- ``mean_total(dist, n)`` is the expected total count after ``n`` generations
  starting from a single cell.
- All geometric sums are evaluated by Horner recurrences so the ``mean == 1``
  case needs no special-casing and there is no cancellation near it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CountOverflowError, InvalidParameterError

#: Largest supported population count (63-bit signed range).
MAX_COUNT = (1 << 63) - 1

# A step at most doubles the total, so totals at or below this bound cannot
# overflow MAX_COUNT within one generation.
_STEP_SAFE_TOTAL = MAX_COUNT // 2

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class OffspringDistribution:
    """Per-cell fate probabilities: die, survive as one, divide in two.

    Attributes:
        p0: Probability of death (no offspring).
        p1: Probability of surviving unchanged (one offspring).
        p2: Probability of dividing (two offspring).
    """

    p0: float
    p1: float
    p2: float

    def __post_init__(self):
        for name in ("p0", "p1", "p2"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise InvalidParameterError(f"{name} must lie in [0, 1], got {p!r}")
        total = self.p0 + self.p1 + self.p2
        if abs(total - 1.0) > _PROB_TOL:
            raise InvalidParameterError(
                f"probabilities must sum to 1 within {_PROB_TOL}, got {total!r}"
            )

    @property
    def mean(self) -> float:
        """Expected offspring per cell, ``p1 + 2*p2`` in [0, 2]."""
        return self.p1 + 2.0 * self.p2


@dataclass(frozen=True)
class PopulationState:
    """Live and dead counts at one generation of a trajectory."""

    alive: int
    dead: int
    generation: int

    def __post_init__(self):
        if self.alive < 0 or self.dead < 0 or self.generation < 0:
            raise InvalidParameterError("counts and generation must be non-negative")
        if self.alive + self.dead > MAX_COUNT:
            raise CountOverflowError(f"total count exceeds {MAX_COUNT}")

    @property
    def total(self) -> int:
        """Total genome count, live plus dead."""
        return self.alive + self.dead


@dataclass(frozen=True)
class GrowthParams:
    """Dose-response parameters of the offspring mean curve.

    The offspring mean at concentration ``c`` is ``2 / (1 + alpha * c**beta)``:
    ``alpha`` sets the concentration scale and ``beta`` the steepness.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0) or not (self.beta > 0.0):
            raise InvalidParameterError(
                f"alpha and beta must be positive, got ({self.alpha!r}, {self.beta!r})"
            )


def mean_from_concentration(params: GrowthParams, concentration: float) -> float:
    """Offspring mean at a given antibiotic concentration.

    Evaluates ``2 / (1 + alpha * c**beta)``, which decreases strictly from 2
    (untreated, free doubling) toward 0 as the concentration grows.

    Args:
        params: Dose-response parameters.
        concentration: Antibiotic concentration, >= 0. Zero is permitted and
            returns exactly 2.

    Returns:
        Offspring mean in (0, 2].
    """
    if concentration < 0.0 or math.isnan(concentration):
        raise InvalidParameterError(f"concentration must be >= 0, got {concentration!r}")
    if concentration == 0.0:
        return 2.0
    try:
        scaled = params.alpha * concentration**params.beta
    except OverflowError:
        return 0.0
    return 2.0 / (1.0 + scaled)


def dist_from_mean(mean: float) -> OffspringDistribution:
    """Death-or-divide offspring distribution with the given mean.

    Returns ``(1 - mean/2, 0, mean/2)``, the distribution used for treated
    cultures: a cell never survives unchanged, because an antibiotic either
    kills it or blocks division permanently, and a blocked cell counts as
    dead. The result attains the upper bound of ``mean_total_bounds``.

    Args:
        mean: Target offspring mean in [0, 2].
    """
    if not (0.0 <= mean <= 2.0) or math.isnan(mean):
        raise InvalidParameterError(f"offspring mean must lie in [0, 2], got {mean!r}")
    half = mean / 2.0
    return OffspringDistribution(1.0 - half, 0.0, half)


def mean_total(dist: OffspringDistribution, n_generations: int) -> float:
    """Expected total count after ``n`` generations from one cell.

    Equals ``m**n + p0 * (1 + m + ... + m**(n-1))``: the live part decays or
    grows geometrically while dead cells accumulate at rate ``p0`` per live
    cell. The geometric series is Horner-summed, so the result is exact at
    ``m == 1`` and stable near it.
    """
    _check_generations(n_generations, minimum=0)
    m = dist.mean
    acc = 0.0
    for _ in range(n_generations):
        acc = acc * m + 1.0
    return m**n_generations + dist.p0 * acc


def mean_total_from_mean(mean: float, n_generations: int) -> float:
    """Expected total count under the death-or-divide rule, as a function of the mean.

    Equals ``mean_total(dist_from_mean(mean), n)`` and evaluates to
    ``(m/2) * (m**(n-1) + ... + 1) + 1``. On [0, 2] it increases strictly and
    convexly from 1 to ``2**n``, which makes it invertible (see
    ``estimators.invert_mean_total``).
    """
    if not (0.0 <= mean <= 2.0) or math.isnan(mean):
        raise InvalidParameterError(f"offspring mean must lie in [0, 2], got {mean!r}")
    _check_generations(n_generations, minimum=0)
    acc = 0.0
    for _ in range(n_generations):
        acc = acc * mean + 1.0
    return 0.5 * mean * acc + 1.0


def mean_total_derivative(mean: float, n_generations: int) -> float:
    """Exact derivative of ``mean_total_from_mean`` in the mean.

    Evaluates ``(1/2) * sum_{j=1..n} j * m**(j-1)`` as a Horner-summed
    polynomial. The covariance formulas divide by this quantity, so it is
    computed analytically rather than by finite differences.
    """
    if not (0.0 <= mean <= 2.0) or math.isnan(mean):
        raise InvalidParameterError(f"offspring mean must lie in [0, 2], got {mean!r}")
    _check_generations(n_generations, minimum=1)
    acc = 0.0
    for j in range(n_generations, 0, -1):
        acc = acc * mean + j
    return 0.5 * acc


def mean_total_bounds(mean: float, n_generations: int) -> tuple[float, float]:
    """Sharp bounds on the expected total count at a fixed offspring mean.

    Over all offspring distributions with the given mean, the expected total
    after ``n`` generations lies between ``max(m**n, 1)`` and the
    death-or-divide value ``mean_total_from_mean``. The lower bound is
    attained without deaths (mean above 1, mixing survive/divide) or without
    divisions (mean at most 1, mixing die/survive); the upper bound is
    attained by ``dist_from_mean``, where every loss parks a dead cell in the
    pool. The two coincide at ``mean == 2``.

    Returns:
        ``(lower, upper)`` bounds, both attainable.
    """
    _check_generations(n_generations, minimum=1)
    upper = mean_total_from_mean(mean, n_generations)
    lower = mean**n_generations if mean > 1.0 else 1.0
    return lower, upper


def extinction_probability(dist: OffspringDistribution) -> float:
    """Probability that the live lineage eventually dies out.

    Certain (1) when the offspring mean is at most 1; otherwise the smaller
    root of the generating-function fixed point, which for this three-point
    distribution is ``p0 / p2``.
    """
    if dist.mean <= 1.0:
        return 1.0
    return dist.p0 / dist.p2


def step(
    state: PopulationState, dist: OffspringDistribution, rng: np.random.Generator
) -> PopulationState:
    """Advance one generation by aggregate multinomial sampling.

    Draws ``(D0, D1, D2) ~ Multinomial(alive; p0, p1, p2)`` in one call and
    returns ``(D1 + 2*D2, dead + D0)``. This is distributed identically to
    sampling each cell's fate separately but stays O(1) per generation even
    for populations in the millions.

    Raises:
        CountOverflowError: if the total count could exceed ``MAX_COUNT``
            after this step.
    """
    if state.total > _STEP_SAFE_TOTAL:
        raise CountOverflowError(
            f"total count {state.total} may overflow {MAX_COUNT} in one generation"
        )
    if state.alive == 0:
        return PopulationState(0, state.dead, state.generation + 1)
    d0, d1, d2 = (int(v) for v in rng.multinomial(state.alive, _pvals(dist)))
    return PopulationState(d1 + 2 * d2, state.dead + d0, state.generation + 1)


def simulate(
    x0: int,
    dist: OffspringDistribution,
    n_generations: int,
    rng: np.random.Generator,
) -> list[PopulationState]:
    """Simulate one trajectory, returning all ``n + 1`` states.

    Args:
        x0: Initial number of live cells, >= 1.
        dist: Offspring distribution applied at every generation.
        n_generations: Number of steps to take.
        rng: Source of randomness; the trajectory is a deterministic
            function of its state.

    Returns:
        States from generation 0 (``(x0, 0)``) through ``n_generations``.
    """
    if x0 < 1:
        raise InvalidParameterError(f"x0 must be >= 1, got {x0!r}")
    _check_generations(n_generations, minimum=0)
    states = [PopulationState(x0, 0, 0)]
    for _ in range(n_generations):
        states.append(step(states[-1], dist, rng))
    return states


def simulate_batch(
    x0: int,
    dist: OffspringDistribution,
    n_generations: int,
    replicates: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate many independent trajectories in lockstep.

    All replicates advance one generation at a time through a single
    vectorized multinomial draw, which is how the measurement layer keeps
    Monte Carlo studies fast. Each replicate's law is identical to
    ``simulate``.

    Args:
        x0: Initial live count shared by every replicate, >= 1.
        dist: Offspring distribution.
        n_generations: Number of steps to take.
        replicates: Number of independent trajectories, >= 1.
        rng: Source of randomness.

    Returns:
        ``(alive, dead)`` int64 arrays of shape ``(replicates,)`` holding the
        final generation's counts.
    """
    if x0 < 1:
        raise InvalidParameterError(f"x0 must be >= 1, got {x0!r}")
    if replicates < 1:
        raise InvalidParameterError(f"replicates must be >= 1, got {replicates!r}")
    _check_generations(n_generations, minimum=0)
    pvals = _pvals(dist)
    alive = np.full(replicates, x0, dtype=np.int64)
    dead = np.zeros(replicates, dtype=np.int64)
    for _ in range(n_generations):
        if int(alive.max()) + int(dead.max()) > _STEP_SAFE_TOTAL:
            raise CountOverflowError(
                f"total count may overflow {MAX_COUNT} in one generation"
            )
        draws = rng.multinomial(alive, pvals)
        alive = draws[:, 1] + 2 * draws[:, 2]
        dead += draws[:, 0]
    return alive, dead


def _pvals(dist: OffspringDistribution) -> np.ndarray:
    # Renormalize away the <=1e-12 slack allowed by the type invariant, so
    # numpy's multinomial never sees probabilities summing above one.
    p = np.array([dist.p0, dist.p1, dist.p2], dtype=float)
    return p / p.sum()


def _check_generations(n_generations: int, minimum: int) -> None:
    if n_generations < minimum:
        raise InvalidParameterError(
            f"n_generations must be >= {minimum}, got {n_generations!r}"
        )
