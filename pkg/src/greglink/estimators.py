"""Regression estimators of population totals from linked auxiliary data.

All estimators share one template: fit a weighted least-squares assisting
model (an intercept plus some constructed covariate) on the sample, then
correct the Horvitz-Thompson estimator with the gap between a known
calibration total and its sample estimate. The covariate source and the
total distinguish the family members:

==============  =============================  ==========================
estimator       covariate per sampled unit     calibration total
==============  =============================  ==========================
ideal           matched auxiliary value        population covariate total
pop-incidence   incidence-weighted link sum    its known population total
pop-reverse     reverse-weighted link sum      its known population total
sample-reverse  reverse-weighted link sum      N x auxiliary-file mean
best-link       best link's value              N x auxiliary-file mean
link-set        raw link sums (link-level fit) N x auxiliary-file mean
subsample       matched value, single-link     auxiliary-file mean
==============  =============================  ==========================

Estimators whose total is N x the auxiliary-file mean are computable from
sample links alone; their design consistency rests on the linkage being
non-informative of the auxiliary values, which ``consistency_diagnostics``
turns into a testable statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import Estimate, Sample, SurveyDesign, residual_variance, scale_to_target
from .errors import NumericalError, ValidationError
from .linkage import (
    POPULATION,
    REVERSE,
    SAMPLE,
    AuxDatabase,
    LinkageStructure,
    WeightScheme,
    align_best_links,
    derive_covariates,
)

RCOND_THRESHOLD = 1e-12


def _solve_normal_equations(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve m b = rhs by pivoted LU, rejecting near-singular systems."""
    eigvals, eigvecs = np.linalg.eigh(m)
    lo, hi = abs(eigvals[0]), abs(eigvals[-1])
    if hi == 0.0 or lo / hi < RCOND_THRESHOLD:
        involved = np.flatnonzero(np.abs(eigvecs[:, 0]) > 0.3)
        raise NumericalError(
            f"normal-equation matrix is singular (reciprocal condition "
            f"{0.0 if hi == 0 else lo / hi:.2e}); columns {involved.tolist()} "
            "are collinear"
        )
    return np.linalg.solve(m, rhs)


def wls_coefficients(covariates: np.ndarray, responses: np.ndarray,
                     weights: np.ndarray) -> np.ndarray:
    """Weighted least-squares coefficients b = (X' W X)^-1 X' W y.

    ``weights`` holds the per-observation factors (regression constants over
    inclusion probabilities, for design-weighted fits). The design matrix is
    taken as given; callers wanting an intercept include a constant column.
    """
    x = np.asarray(covariates, dtype=np.float64)
    y = np.asarray(responses, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("covariates must be a 2-d array")
    n, p = x.shape
    if y.shape != (n,) or w.shape != (n,):
        raise ValidationError("responses and weights must align with covariates")
    if n < p:
        raise ValidationError(f"need at least {p} observations, got {n}")
    xw = x * w[:, None]
    return _solve_normal_equations(xw.T @ x, xw.T @ y)


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


@dataclass(frozen=True)
class GregSpec:
    """Covariate rows per sampled unit, their calibration total, fit constants.

    ``total`` is the population total of the covariate columns; the model
    intercept and its total (the population size) are added automatically
    unless ``intercept`` is disabled.
    """

    covariates: np.ndarray
    total: np.ndarray
    constants: np.ndarray | None = None
    intercept: bool = True
    tag: str = "greg"

    def __post_init__(self) -> None:
        x = np.asarray(self.covariates, dtype=np.float64)
        t = np.asarray(self.total, dtype=np.float64).reshape(-1)
        if x.ndim != 2 or x.shape[1] != t.shape[0]:
            raise ValidationError("covariate dimension must match the total")
        if x.shape[1] == 0 and not self.intercept:
            raise ValidationError("model needs at least one column")
        c = self.constants
        if c is not None:
            c = np.asarray(c, dtype=np.float64)
            if c.shape != (x.shape[0],) or np.any(c <= 0):
                raise ValidationError("regression constants must be positive, one per unit")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "total", t)
        object.__setattr__(self, "constants", c)

    def design_matrix(self) -> np.ndarray:
        return _with_intercept(self.covariates) if self.intercept else self.covariates

    def full_total(self, n_population: int) -> np.ndarray:
        if self.intercept:
            return np.concatenate([[float(n_population)], self.total])
        return self.total


def greg(spec: GregSpec, y: np.ndarray, sample: Sample,
         target: str = "total") -> Estimate:
    """Regression estimator: T'b plus the design-weighted residual total.

    The implied linear weights calibrate exactly: summing them against the
    model columns reproduces the full calibration total (population size and
    covariate total).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (sample.n,):
        raise ValidationError("need one response per sampled unit")
    if spec.covariates.shape[0] != sample.n:
        raise ValidationError("covariate rows must align with the sample")
    x = spec.design_matrix()
    total = spec.full_total(sample.design.n_population)
    c = spec.constants if spec.constants is not None else np.ones(sample.n)
    b = wls_coefficients(x, y, c / sample.pi)
    residuals = y - x @ b
    value = float(total @ b + np.sum(residuals / sample.pi))
    variance = None
    if sample.equal_probability and sample.n >= 2:
        variance = residual_variance(residuals, sample.design)
    value, variance = scale_to_target(value, variance, target,
                                      sample.design.n_population)
    return Estimate(value=value, variance=variance, estimator=spec.tag,
                    target=target, coefficients=b, residuals=residuals)


def calibration_weights(spec: GregSpec, sample: Sample) -> np.ndarray:
    """The linear weights w_i that make greg() equal to sum_i w_i y_i."""
    x = spec.design_matrix()
    total = spec.full_total(sample.design.n_population)
    c = spec.constants if spec.constants is not None else np.ones(sample.n)
    xw = x * (c / sample.pi)[:, None]
    m = xw.T @ x
    ht_x = np.sum(x / sample.pi[:, None], axis=0)
    adjust = _solve_normal_equations(m, total - ht_x)
    g = 1.0 + (x * c[:, None]) @ adjust
    return g / sample.pi


def sub_greg(y: np.ndarray, covariates: np.ndarray, aux_mean: np.ndarray,
             design: SurveyDesign, coefficients: np.ndarray | None = None,
             target: str = "total", tag: str = "sub") -> Estimate:
    """Regression estimator over the single-link subsample only.

    Takes the responses and matched covariates of the sampled units whose
    link is unique (hence trusted). By default the assisting coefficients
    are fit on the subsample itself (self-normalised, so no inclusion
    probabilities are needed). Passing ``coefficients`` (intercept first)
    switches to the difference form with those coefficients held fixed,
    which avoids refit noise when a stable external fit is available; the
    simulation harness uses this with coefficients fit once per scenario.
    The variance uses the design's sampling fraction with the subsample
    size as the effective size.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(covariates, dtype=np.float64)
    t = np.asarray(aux_mean, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[1] != t.shape[0]:
        raise ValidationError("covariates must align with responses and the mean")
    n_sub = x.shape[0]
    x_full = _with_intercept(x)
    if coefficients is None:
        if n_sub <= x_full.shape[1]:
            raise ValidationError(
                f"subsample too small: {n_sub} single-link units for "
                f"{x_full.shape[1]} model columns"
            )
        b = wls_coefficients(x_full, y, np.ones(n_sub))
    else:
        b = np.asarray(coefficients, dtype=np.float64).reshape(-1)
        if b.shape != (x_full.shape[1],):
            raise ValidationError("fixed coefficients must include the intercept")
        if n_sub < 2:
            raise ValidationError("subsample too small: need at least 2 units")
    residuals = y - x_full @ b
    mean_value = float(np.concatenate([[1.0], t]) @ b + residuals.mean())
    mean_variance = residual_variance(residuals, design) / design.n_population**2
    value, variance = mean_value, mean_variance
    if target == "total":
        value = mean_value * design.n_population
        variance = mean_variance * design.n_population**2
    return Estimate(value=value, variance=variance, estimator=tag,
                    target=target, coefficients=b, residuals=residuals)


def sls_greg(linkage: LinkageStructure, scheme: WeightScheme, aux: AuxDatabase,
             y: np.ndarray, sample: Sample, link_constants: np.ndarray | None = None,
             target: str = "total", tag: str = "sls") -> Estimate:
    """Regression estimator fitted over the sample link set.

    The assisting fit regresses the reverse-weighted responses on the record
    values link by link (with a link-level intercept), a link inheriting its
    unit's inclusion probability. The calibration gap compares the
    auxiliary-file mean with the estimated mean over linked records, scaled
    by the estimated link rate. Variance comes from the first-order
    expansion of that ratio, which adds a link-count term to the plain fit
    residuals.
    """
    if linkage.scope != SAMPLE or not np.array_equal(linkage.covered_units, sample.ids):
        raise ValidationError("link-set estimator needs the sample's own links")
    if scheme.kind != REVERSE or scheme.linkage is not linkage:
        raise ValidationError("link-set estimator needs reverse weights on these links")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (sample.n,):
        raise ValidationError("need one response per sampled unit")
    dim = aux.dim + 1
    if linkage.n_links < dim:
        raise ValidationError(f"need at least {dim} links, got {linkage.n_links}")

    n_population = sample.design.n_population
    unit_idx = linkage.unit_index_per_link()
    x_links = _with_intercept(aux.x[linkage.link_records])
    c_links = (np.ones(linkage.n_links) if link_constants is None
               else np.asarray(link_constants, dtype=np.float64))
    if c_links.shape != (linkage.n_links,) or np.any(c_links <= 0):
        raise ValidationError("link constants must be positive, one per link")
    pi_links = sample.pi[unit_idx]

    d = linkage.degrees.astype(np.float64)
    link_rate_hat = float(np.sum(d / sample.pi)) / n_population
    link_total_hat = np.sum(x_links / pi_links[:, None], axis=0)
    link_mean_hat = link_total_hat / (link_rate_hat * n_population)

    xw = x_links * (c_links / pi_links)[:, None]
    m = xw.T @ x_links
    rhs = xw.T @ (scheme.values * y[unit_idx])
    b = link_rate_hat * _solve_normal_equations(m, rhs)

    link_sum = np.zeros((sample.n, dim))
    np.add.at(link_sum, unit_idx, x_links)
    fit_residuals = y - (link_sum @ b) / link_rate_hat
    aux_mean_full = np.concatenate([[1.0], aux.mean])
    value = float(n_population * aux_mean_full @ b + np.sum(fit_residuals / sample.pi))

    taylor_residuals = fit_residuals + (d / link_rate_hat) * float(link_mean_hat @ b)
    variance = None
    if sample.equal_probability and sample.n >= 2:
        variance = residual_variance(taylor_residuals, sample.design)
    value, variance = scale_to_target(value, variance, target, n_population)
    return Estimate(value=value, variance=variance, estimator=tag, target=target,
                    coefficients=b, residuals=taylor_residuals)


@dataclass(frozen=True)
class NpaCovariances:
    """Empirical covariances that quantify linkage informativeness.

    ``weight_x_cov`` is the covariance of the link weights with the record
    values over all population links; ``indicator_x_cov`` the covariance of
    the linked-record indicator with the record values over the auxiliary
    file. Both tend to zero when the linkage carries no information about
    the auxiliary values, which is the consistency condition for the
    sample-link estimators.
    """

    weight_x_cov: np.ndarray
    indicator_x_cov: np.ndarray
    n_linked_records: int
    linked_total: np.ndarray


def npa_covariances(linkage: LinkageStructure, scheme: WeightScheme,
                    aux: AuxDatabase) -> NpaCovariances:
    """Compute the two non-informativeness covariances over population links."""
    if linkage.scope != POPULATION:
        raise ValidationError("informativeness covariances need population links")
    if scheme.linkage is not linkage:
        raise ValidationError("weight scheme was built for a different linkage")
    n_links = linkage.n_links
    x_links = aux.x[linkage.link_records]
    link_mean = x_links.sum(axis=0) / n_links
    w = scheme.values
    weight_x_cov = (w[:, None] * x_links).sum(axis=0) / n_links - (w.sum() / n_links) * link_mean

    linked = linkage.multiplicities > 0
    n_linked = int(linked.sum())
    linked_total = aux.x[linked].sum(axis=0)
    indicator_x_cov = linked_total / aux.n_records - (n_linked / aux.n_records) * aux.mean
    return NpaCovariances(
        weight_x_cov=weight_x_cov,
        indicator_x_cov=indicator_x_cov,
        n_linked_records=n_linked,
        linked_total=linked_total,
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """A consistency statistic with componentwise variance and z-scores."""

    statistic: str
    value: np.ndarray
    variance: np.ndarray
    z: np.ndarray
    npa: NpaCovariances | None = None

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


DIAGNOSTIC_KINDS = ("sri", "sbl", "sls")


def consistency_diagnostics(linkage: LinkageStructure, aux: AuxDatabase,
                            sample: Sample, kind: str,
                            scheme: WeightScheme | None = None,
                            best_links=None,
                            npa: NpaCovariances | None = None) -> DiagnosticsReport:
    """Observable check of the consistency condition behind a sample-link estimator.

    Each kind compares a sample estimate of a constructed covariate mean with
    the auxiliary-file mean: the reverse-weighted mean ("sri"), the best-link
    mean ("sbl"), or the ratio-estimated mean over linked records ("sls").
    The variance comes from the per-unit contributions of the linearised
    statistic. A component whose contributions are constant across units
    (a degenerate covariate) is reported with zero variance, and zero z when
    its statistic is also zero.
    """
    if kind not in DIAGNOSTIC_KINDS:
        raise ValidationError(f"unknown diagnostic kind {kind!r}")
    if not np.array_equal(linkage.covered_units, sample.ids):
        raise ValidationError("diagnostics need the sample's own links")
    if not sample.equal_probability:
        raise ValidationError("diagnostics need an equal-probability sample")
    n_population = sample.design.n_population

    if kind == "sri":
        if scheme is None or scheme.kind != REVERSE:
            raise ValidationError("reverse weights are required for this diagnostic")
        derived = derive_covariates(linkage, scheme, aux)
        contributions = derived.weighted / n_population
        value = np.sum(contributions / sample.pi[:, None], axis=0) - aux.mean
    elif kind == "sbl":
        if best_links is None:
            raise ValidationError("best links are required for this diagnostic")
        best = aux.x[align_best_links(linkage, best_links)]
        contributions = best / n_population
        value = np.sum(contributions / sample.pi[:, None], axis=0) - aux.mean
    else:
        unit_idx = linkage.unit_index_per_link()
        link_sum = np.zeros((sample.n, aux.dim))
        np.add.at(link_sum, unit_idx, aux.x[linkage.link_records])
        d = linkage.degrees.astype(np.float64)
        n_links_hat = float(np.sum(d / sample.pi))
        link_mean_hat = np.sum(link_sum / sample.pi[:, None], axis=0) / n_links_hat
        value = link_mean_hat - aux.mean
        contributions = (link_sum - link_mean_hat[None, :] * d[:, None]) / n_links_hat

    spread = contributions.std(axis=0)
    scale = np.maximum(np.abs(contributions).max(axis=0), 1.0 / n_population)
    degenerate = spread <= 1e-9 * scale

    variance = np.zeros(aux.dim)
    z = np.zeros(aux.dim)
    for j in range(aux.dim):
        if degenerate[j]:
            if abs(value[j]) > 1e-6 * scale[j] * n_population:
                z[j] = np.inf if value[j] > 0 else -np.inf
            continue
        variance[j] = residual_variance(contributions[:, j], sample.design)
        z[j] = value[j] / np.sqrt(variance[j])
    return DiagnosticsReport(statistic=kind, value=value, variance=variance,
                             z=z, npa=npa)
