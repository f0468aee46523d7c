"""Sampling designs, Horvitz-Thompson estimation and exact-enumeration checks.

Only simple random sampling without replacement (SRSWOR) ships with a sampler
and a closed-form variance estimator. Externally supplied inclusion
probabilities are accepted for estimation from files; their variance is
reported as unavailable unless the probabilities are all equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import NumericalError, ValidationError

ENUMERATION_GUARD = 10**6


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible generator for (seed, key) pairs.

    Streams derived from the same seed but different keys are statistically
    independent, so replicate-level work can be distributed over workers
    without the results depending on the worker count.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class SurveyDesign:
    """A sampling design over a population of ``n_population`` units.

    ``kind`` is either "srswor" (fixed size ``sample_size``, all inclusion
    probabilities equal to the sampling fraction) or "external" (inclusion
    probabilities supplied per sampled unit, fixed-size assumed).
    """

    n_population: int
    sample_size: int
    kind: str = "srswor"

    def __post_init__(self) -> None:
        if self.n_population < 1:
            raise ValidationError("population size must be at least 1")
        if not 0 < self.sample_size <= self.n_population:
            raise ValidationError(
                f"sample size {self.sample_size} outside 1..{self.n_population}"
            )
        if self.kind not in ("srswor", "external"):
            raise ValidationError(f"unknown design kind {self.kind!r}")

    @classmethod
    def srswor(cls, n_population: int, sample_size: int) -> "SurveyDesign":
        return cls(n_population, sample_size, "srswor")

    @property
    def f(self) -> float:
        """Sampling fraction n/N."""
        return self.sample_size / self.n_population

    @property
    def inclusion_probability(self) -> float:
        if self.kind != "srswor":
            raise ValidationError("per-design probability only defined for SRSWOR")
        return self.f


@dataclass(frozen=True)
class Sample:
    """A drawn sample: sorted unit ids, their inclusion probabilities, the design."""

    ids: np.ndarray
    pi: np.ndarray
    design: SurveyDesign

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        pi = np.asarray(self.pi, dtype=np.float64)
        if ids.ndim != 1 or pi.shape != ids.shape:
            raise ValidationError("ids and pi must be 1-d arrays of equal length")
        if len(np.unique(ids)) != len(ids):
            raise ValidationError("sample contains repeated unit ids")
        if ids.size and (ids.min() < 0 or ids.max() >= self.design.n_population):
            raise ValidationError("sample ids outside 0..N-1")
        if np.any(pi <= 0) or np.any(pi > 1):
            raise ValidationError("inclusion probabilities must lie in (0, 1]")
        order = np.argsort(ids)
        object.__setattr__(self, "ids", ids[order])
        object.__setattr__(self, "pi", pi[order])
        self.ids.setflags(write=False)
        self.pi.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def equal_probability(self) -> bool:
        return bool(np.all(self.pi == self.pi[0]))


@dataclass(frozen=True)
class Estimate:
    """A point estimate with its variance estimate and fit by-products.

    ``variance`` is None when no design-based variance estimator is available
    (externally supplied unequal probabilities). ``coefficients`` and
    ``residuals`` are populated by the regression estimators only.
    """

    value: float
    variance: float | None
    estimator: str
    target: str = "total"
    coefficients: np.ndarray | None = None
    residuals: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.target not in ("total", "mean"):
            raise ValidationError(f"unknown target {self.target!r}")
        if self.variance is not None and self.variance < -1e-30:
            raise ValidationError("variance estimate must be nonnegative")

    @property
    def se(self) -> float | None:
        if self.variance is None:
            return None
        return math.sqrt(max(self.variance, 0.0))


def scale_to_target(value: float, variance: float | None, target: str,
                    n_population: int) -> tuple[float, float | None]:
    """Convert a total-scale (value, variance) pair to the requested target."""
    if target == "total":
        return value, variance
    if target == "mean":
        v = None if variance is None else variance / n_population**2
        return value / n_population, v
    raise ValidationError(f"unknown target {target!r}")


def draw_srswor(n_population: int, sample_size: int,
                rng: np.random.Generator) -> Sample:
    """Draw an SRSWOR sample of ``sample_size`` units from 0..N-1.

    Uses the generator's without-replacement choice (partial Fisher-Yates),
    so every subset of the stated size is equally probable.
    """
    design = SurveyDesign.srswor(n_population, sample_size)
    ids = rng.choice(n_population, size=sample_size, replace=False)
    pi = np.full(sample_size, design.f)
    return Sample(ids=ids, pi=pi, design=design)


def ht_total(values: np.ndarray, sample: Sample, target: str = "total") -> Estimate:
    """Horvitz-Thompson estimator of a population total (or mean).

    ``values`` must be aligned with ``sample.ids``. Under an equal-probability
    fixed-size design the variance estimate is N^2 (1-f) s^2 / n; otherwise
    the variance is unavailable.
    """
    y = np.asarray(values, dtype=np.float64)
    if y.shape != sample.ids.shape:
        raise ValidationError(
            f"need one value per sampled unit ({sample.n}), got {y.shape}"
        )
    if not np.all(np.isfinite(y)):
        raise ValidationError("missing or non-finite value for a sampled unit")
    value = float(np.sum(y / sample.pi))
    variance = None
    if sample.equal_probability and sample.n >= 2:
        variance = residual_variance(y, sample.design)
    value, variance = scale_to_target(value, variance, target, sample.design.n_population)
    return Estimate(value=value, variance=variance, estimator="ht", target=target)


def residual_variance(residuals: np.ndarray, design: SurveyDesign) -> float:
    """SRSWOR variance estimator N^2 (1-f) s^2 / n applied to residuals.

    The effective size n is the residual count, which may be smaller than the
    design's sample size (subsample estimators); the finite-population
    correction stays at the design's sampling fraction. Serves as the
    variance engine for every regression estimator. Callers are responsible
    for only invoking it on equal-probability samples.
    """
    e = np.asarray(residuals, dtype=np.float64)
    if e.ndim != 1:
        raise ValidationError("residuals must be a 1-d array")
    n_eff = len(e)
    if n_eff < 2:
        raise ValidationError("variance needs at least 2 units")
    s2 = float(np.var(e, ddof=1))
    return design.n_population**2 * (1.0 - design.f) * s2 / n_eff


@dataclass(frozen=True)
class ExactMoments:
    """Exact design moments of an estimator under full SRSWOR enumeration."""

    expectation: float
    variance: float
    expected_variance_estimate: float
    n_samples: int


def exact_design_moments(
    y: np.ndarray,
    sample_size: int,
    statistic: Callable[[Sample, np.ndarray], tuple[float, float]] | None = None,
    guard: int = ENUMERATION_GUARD,
) -> ExactMoments:
    """Enumerate every SRSWOR sample and return exact estimator moments.

    ``statistic(sample, y_sample)`` returns (value, variance estimate) per
    sample; the default is the HT total with its closed-form variance. All
    C(N, n) samples carry probability 1 / C(N, n); the enumeration refuses
    to run past ``guard`` samples.
    """
    y = np.asarray(y, dtype=np.float64)
    n_population = len(y)
    n_samples = math.comb(n_population, sample_size)
    if n_samples > guard:
        raise NumericalError(
            f"C({n_population},{sample_size}) = {n_samples} exceeds the "
            f"enumeration guard of {guard}"
        )
    design = SurveyDesign.srswor(n_population, sample_size)
    pi = np.full(sample_size, design.f)

    if statistic is None:
        def statistic(sample: Sample, y_s: np.ndarray) -> tuple[float, float]:
            est = ht_total(y_s, sample)
            return est.value, est.variance if est.variance is not None else math.nan

    values = np.empty(n_samples)
    varests = np.empty(n_samples)
    for k, ids in enumerate(combinations(range(n_population), sample_size)):
        idx = np.asarray(ids, dtype=np.int64)
        sample = Sample(ids=idx, pi=pi, design=design)
        values[k], varests[k] = statistic(sample, y[idx])

    expectation = float(values.mean())
    variance = float(np.mean((values - expectation) ** 2))
    return ExactMoments(
        expectation=expectation,
        variance=variance,
        expected_variance_estimate=float(varests.mean()),
        n_samples=n_samples,
    )
