"""Synthetic populations, matches, links and link weights for simulation.

The generators follow one fixed recipe. Study values come from a linear
model with uniform covariate and optionally heteroscedastic noise. The
auxiliary file equals the population (record i is the matching record of
unit i), so the ideal matched-data estimator is computable as a reference.
Link counts, match coverage and best-link quality are controlled by three
proportions:

* a share of units per link count 1, 2 or 3;
* the share of units whose match is among their links (every single-link
  unit's link is its match; the remaining matched units are drawn uniformly
  from the multi-link units);
* the share of units whose best link is their match (drawn uniformly from
  the matched multi-link units; every other unit's best link is drawn
  uniformly from its false links).

False links are drawn uniformly without replacement from the records other
than the unit's own matching record, so match counts stay exact. All draws
consume an explicit generator; identical seeds give identical structures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linkage import (
    INCIDENCE,
    POPULATION,
    AuxDatabase,
    LinkageStructure,
    MatchSet,
    Population,
    WeightScheme,
    build_linkage,
)


@dataclass(frozen=True)
class PopulationModel:
    """Linear study-variable model y = intercept + slope * x + noise.

    The covariate is uniform on (0, 1); the noise is centred normal with
    per-unit scale sigma * x**gamma, so gamma = 0 is homoscedastic and
    gamma = 1 makes the spread proportional to the covariate.
    """

    n_units: int
    sigma: float = 1.5
    gamma: float = 0.0
    intercept: float = 1.0
    slope: float = 5.0

    def __post_init__(self) -> None:
        if self.n_units < 1:
            raise ValidationError("population must have at least 1 unit")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class LinkageModel:
    """Link-count shares, match coverage, best-link quality and the
    weight placed on best links."""

    link_share: tuple[float, float, float]
    match_rate: float
    correct_best_rate: float
    best_link_weight: float = 0.4

    def __post_init__(self) -> None:
        share = tuple(float(v) for v in self.link_share)
        if len(share) != 3 or any(v < 0 for v in share):
            raise ValidationError("link shares must be three nonnegative numbers")
        if abs(sum(share) - 1.0) > 1e-9:
            raise ValidationError(f"link shares must sum to 1, got {sum(share)}")
        p1 = share[0]
        if self.match_rate < p1 - 1e-12 or self.match_rate > 1 + 1e-12:
            raise ValidationError(
                f"match rate {self.match_rate} outside [{p1}, 1] "
                "(every single-link unit is matched)"
            )
        if not p1 - 1e-12 <= self.correct_best_rate <= self.match_rate + 1e-12:
            raise ValidationError(
                f"correct-best rate {self.correct_best_rate} outside "
                f"[{p1}, {self.match_rate}]"
            )
        if not 0 < self.best_link_weight <= 1:
            raise ValidationError("best-link weight must lie in (0, 1]")
        object.__setattr__(self, "link_share", share)


def gen_population(model: PopulationModel,
                   rng: np.random.Generator) -> tuple[np.ndarray, Population]:
    """Draw covariates and study values; returns (x, population)."""
    x = rng.uniform(size=model.n_units)
    scale = model.sigma * x**model.gamma
    noise = rng.normal(0.0, 1.0, size=model.n_units) * scale
    y = model.intercept + model.slope * x + noise
    return x, Population(y=y)


def proportional_counts(n: int, shares: tuple[float, ...]) -> np.ndarray:
    """Integer category counts: banker's rounding, largest share absorbs
    the remainder so the counts sum exactly to n."""
    counts = np.array([round(n * s) for s in shares], dtype=np.int64)
    counts[int(np.argmax(shares))] += n - counts.sum()
    if np.any(counts < 0):
        raise ValidationError(f"shares {shares} produce negative counts at n={n}")
    return counts


def _draw_false_records(rng: np.random.Generator, owners: np.ndarray,
                        n_records: int) -> np.ndarray:
    """Uniform distinct false records per owner, never the owner's own record."""
    m = len(owners)
    cand = rng.integers(0, n_records - 1, size=m)
    cand = cand + (cand >= owners)
    while True:
        key = owners * np.int64(n_records) + cand
        order = np.argsort(key, kind="stable")
        dup_sorted = np.zeros(m, dtype=bool)
        dup_sorted[1:] = key[order][1:] == key[order][:-1]
        dup = np.zeros(m, dtype=bool)
        dup[order] = dup_sorted
        if not dup.any():
            return cand
        redraw = rng.integers(0, n_records - 1, size=int(dup.sum()))
        cand[dup] = redraw + (redraw >= owners[dup])


def gen_linkage(n_units: int, model: LinkageModel, rng: np.random.Generator
                ) -> tuple[MatchSet, LinkageStructure, np.ndarray]:
    """Generate matches, population links and best links over A = U.

    Returns the realised matches (the units whose match is among their
    links), the population-scope linkage, and the best-link record per unit.
    """
    counts = proportional_counts(n_units, model.link_share)
    n_single = int(counts[0])

    degree = np.empty(n_units, dtype=np.int64)
    perm = rng.permutation(n_units)
    degree[perm[:counts[0]]] = 1
    degree[perm[counts[0]:counts[0] + counts[1]]] = 2
    degree[perm[counts[0] + counts[1]:]] = 3

    n_matched = round(n_units * model.match_rate)
    if n_matched < n_single:
        raise ValidationError(
            f"match rate {model.match_rate} inconsistent with "
            f"{n_single} single-link units"
        )
    multi_units = np.flatnonzero(degree > 1)
    extra_matched = np.sort(rng.choice(multi_units, size=n_matched - n_single,
                                       replace=False))
    matched = degree == 1
    matched[extra_matched] = True

    n_false = degree - matched.astype(np.int64)
    owners = np.repeat(np.arange(n_units, dtype=np.int64), n_false)
    false_records = _draw_false_records(rng, owners, n_units)

    matched_units = np.flatnonzero(matched)
    link_units = np.concatenate([matched_units, owners])
    link_records = np.concatenate([matched_units, false_records])
    linkage = build_linkage(np.column_stack([link_units, link_records]),
                            n_units, n_units)

    n_correct_best = round(n_units * model.correct_best_rate)
    n_extra_correct = n_correct_best - n_single
    if not 0 <= n_extra_correct <= len(extra_matched):
        raise ValidationError(
            f"correct-best rate {model.correct_best_rate} inconsistent with "
            f"the match counts"
        )
    correct_best = rng.choice(extra_matched, size=n_extra_correct, replace=False)

    best = np.full(n_units, -1, dtype=np.int64)
    best[degree == 1] = np.flatnonzero(degree == 1)
    best[correct_best] = correct_best
    rest = np.flatnonzero(best < 0)
    false_offsets = np.concatenate([[0], np.cumsum(n_false)])
    pick = rng.integers(0, n_false[rest])
    best[rest] = false_records[false_offsets[rest] + pick]

    matches = MatchSet(record_of_unit={int(u): int(u) for u in matched_units})
    return matches, linkage, best


def gen_pi_q_weights(linkage: LinkageStructure, matches: MatchSet, q: float,
                     rng: np.random.Generator) -> WeightScheme:
    """Unequal incidence weights: q on each record's match when the matched
    unit is among its links, otherwise q on a uniformly chosen link; the
    other links share (1 - q) equally. Single-link records get weight 1."""
    if linkage.scope != POPULATION:
        raise ValidationError("incidence weights require population links")
    if not 0 < q < 1:
        raise ValidationError(f"q must lie in (0, 1), got {q}")
    m_per_link = linkage.multiplicities[linkage.link_records]
    values = np.where(m_per_link == 1, 1.0,
                      (1.0 - q) / np.maximum(m_per_link - 1, 1))
    unit_of_record = matches.unit_of_record
    for record in np.flatnonzero(linkage.multiplicities > 1):
        positions = linkage.link_positions_of_record(int(record))
        units_here = linkage.link_units[positions]
        match_unit = unit_of_record.get(int(record))
        hits = np.flatnonzero(units_here == match_unit) if match_unit is not None else []
        if len(hits):
            q_position = positions[hits[0]]
        else:
            q_position = positions[rng.integers(len(positions))]
        values[q_position] = q
    return WeightScheme(kind=INCIDENCE, linkage=linkage, values=values)


def aux_from_population(x: np.ndarray) -> AuxDatabase:
    """Auxiliary file equal to the population: record i holds x_i."""
    return AuxDatabase.from_values(x)
