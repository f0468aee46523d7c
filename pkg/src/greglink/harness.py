"""Monte Carlo driver: repeated samples, estimator summaries, result tables.

One population and one linkage are generated per scenario block and held
fixed while samples are redrawn, matching the fixed-links inference frame;
``redraw_linkage`` regenerates the linkage every replicate as a sensitivity
check. Replicate k always consumes the stream derived from (seed, k), so
summaries are bitwise identical regardless of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import Sample, draw_srswor, ht_total, rng_stream
from .errors import GregLinkError, NumericalError, ValidationError
from .estimators import GregSpec, greg, sls_greg, sub_greg, wls_coefficients
from .linkage import (
    AuxDatabase,
    LinkageStructure,
    WeightScheme,
    best_link_indicator_weights,
    derive_covariates,
    multiplicity_weights,
    reverse_weights_best_link,
)
from .synthpop import (
    LinkageModel,
    PopulationModel,
    aux_from_population,
    gen_linkage,
    gen_pi_q_weights,
    gen_population,
)

ESTIMATOR_ORDER = ("ht", "ideal", "sub", "pi-m", "pi-q", "sbl", "sri-q", "sls")
ESTIMATOR_LABELS = {
    "ht": "HT",
    "ideal": "Ideal",
    "sub": "Sub",
    "pi-m": "PI-m",
    "pi-q": "PI-q",
    "sbl": "SBL",
    "sri-q": "SRI-q",
    "sls": "SLS",
}

# stream tags: population draw, linkage draw, incidence-weight draw, replicates
_POP_KEY, _LINK_KEY, _WEIGHT_KEY, _REPLICATE_KEY = 0, 1, 2, 3

MAX_FAILURE_SHARE = 0.01


@dataclass(frozen=True)
class ScenarioConfig:
    """All parameters of one simulation block."""

    name: str
    n_population: int
    sample_size: int
    replicates: int
    link_share: tuple[float, float, float] = (0.2, 0.4, 0.4)
    match_rate: float = 0.4
    correct_best_rate: float = 0.4
    best_link_weight: float = 0.4
    incidence_weight: float | None = None
    sigma: float = 1.5
    gamma: float = 0.0
    estimators: tuple[str, ...] = ESTIMATOR_ORDER
    seed: int = 0
    target: str = "mean"
    redraw_linkage: bool = False

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ValidationError("need at least 2 replicates")
        if self.target not in ("mean", "total"):
            raise ValidationError(f"unknown target {self.target!r}")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_ORDER]
        if unknown:
            raise ValidationError(f"unknown estimators: {unknown}")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "link_share",
                           tuple(float(v) for v in self.link_share))
        # fail fast on bad model parameters
        self.population_model()
        self.linkage_model()

    def population_model(self) -> PopulationModel:
        return PopulationModel(n_units=self.n_population, sigma=self.sigma,
                               gamma=self.gamma)

    def linkage_model(self) -> LinkageModel:
        return LinkageModel(link_share=self.link_share,
                            match_rate=self.match_rate,
                            correct_best_rate=self.correct_best_rate,
                            best_link_weight=self.best_link_weight)

    @property
    def pi_q(self) -> float:
        return self.best_link_weight if self.incidence_weight is None else self.incidence_weight


@dataclass
class _LinkState:
    """Fixed linkage realisation with everything replicates index into."""

    linkage: LinkageStructure
    best: np.ndarray
    reverse_scheme: WeightScheme
    degrees: np.ndarray
    covariates: dict[str, np.ndarray]
    totals: dict[str, np.ndarray]
    sub_coefficients: np.ndarray | None = None


@dataclass
class _ScenarioState:
    config: ScenarioConfig
    aux: AuxDatabase
    y: np.ndarray
    truth: float
    links: _LinkState | None


def _build_link_state(config: ScenarioConfig, aux: AuxDatabase, y: np.ndarray,
                      rng_links: np.random.Generator,
                      rng_weights: np.random.Generator) -> _LinkState:
    matches, linkage, best = gen_linkage(config.n_population,
                                         config.linkage_model(), rng_links)
    covariates: dict[str, np.ndarray] = {}
    totals: dict[str, np.ndarray] = {}
    wanted = set(config.estimators)
    n_aux_mean_total = config.n_population * aux.mean

    if "ideal" in wanted:
        covariates["ideal"] = aux.x
        totals["ideal"] = aux.total
    if "pi-m" in wanted:
        derived = derive_covariates(linkage, multiplicity_weights(linkage), aux)
        covariates["pi-m"] = derived.weighted
        totals["pi-m"] = derived.weighted_total
    if "pi-q" in wanted:
        scheme = gen_pi_q_weights(linkage, matches, config.pi_q, rng_weights)
        derived = derive_covariates(linkage, scheme, aux)
        covariates["pi-q"] = derived.weighted
        totals["pi-q"] = derived.weighted_total
    reverse_scheme = reverse_weights_best_link(linkage, best,
                                               config.best_link_weight)
    if "sri-q" in wanted:
        derived = derive_covariates(linkage, reverse_scheme, aux)
        covariates["sri-q"] = derived.weighted
        totals["sri-q"] = n_aux_mean_total
    if "sbl" in wanted:
        derived = derive_covariates(linkage, best_link_indicator_weights(linkage, best), aux)
        covariates["sbl"] = derived.weighted
        totals["sbl"] = n_aux_mean_total

    # the subsample reference estimator keeps one set of assisting
    # coefficients per linkage realisation, fit on the single-link units
    sub_coefficients = None
    if "sub" in wanted:
        single = np.flatnonzero(linkage.degrees == 1)
        if len(single) <= aux.dim + 1:
            raise ValidationError(
                f"only {len(single)} single-link units; cannot anchor the "
                "subsample estimator"
            )
        x_single = np.hstack([np.ones((len(single), 1)), aux.x[single]])
        sub_coefficients = wls_coefficients(x_single, y[single],
                                            np.ones(len(single)))
    return _LinkState(
        linkage=linkage,
        best=best,
        reverse_scheme=reverse_scheme,
        degrees=linkage.degrees.copy(),
        covariates=covariates,
        totals=totals,
        sub_coefficients=sub_coefficients,
    )


def _build_state(config: ScenarioConfig) -> _ScenarioState:
    x, population = gen_population(config.population_model(),
                                   rng_stream(config.seed, _POP_KEY))
    aux = aux_from_population(x)
    truth = population.mean if config.target == "mean" else population.total
    links = None
    if not config.redraw_linkage:
        links = _build_link_state(config, aux, population.y,
                                  rng_stream(config.seed, _LINK_KEY),
                                  rng_stream(config.seed, _WEIGHT_KEY))
    return _ScenarioState(config=config, aux=aux, y=population.y,
                          truth=truth, links=links)


def _estimate_one(tag: str, state: _ScenarioState, links: _LinkState,
                  sample: Sample, y_s: np.ndarray) -> tuple[float, float]:
    config = state.config
    if tag == "ht":
        est = ht_total(y_s, sample, target=config.target)
    elif tag == "sub":
        single = links.degrees[sample.ids] == 1
        est = sub_greg(y_s[single], state.aux.x[sample.ids[single]],
                       state.aux.mean, sample.design,
                       coefficients=links.sub_coefficients,
                       target=config.target)
    elif tag == "sls":
        sub_linkage, link_index = links.linkage.restrict(sample.ids)
        scheme_s = links.reverse_scheme.restrict(sub_linkage, link_index)
        est = sls_greg(sub_linkage, scheme_s, state.aux, y_s, sample,
                       target=config.target)
    else:
        spec = GregSpec(covariates=links.covariates[tag][sample.ids],
                        total=links.totals[tag], tag=tag)
        est = greg(spec, y_s, sample, target=config.target)
    return est.value, math.nan if est.variance is None else est.variance


def _run_replicates(state: _ScenarioState, indices: list[int]
                    ) -> list[dict[str, tuple[float, float] | None]]:
    config = state.config
    out = []
    for k in indices:
        rng = rng_stream(config.seed, _REPLICATE_KEY, k)
        links = state.links
        if links is None:
            links = _build_link_state(
                config, state.aux, state.y,
                rng_stream(config.seed, _LINK_KEY, k),
                rng_stream(config.seed, _WEIGHT_KEY, k))
        sample = draw_srswor(config.n_population, config.sample_size, rng)
        y_s = state.y[sample.ids]
        results: dict[str, tuple[float, float] | None] = {}
        for tag in config.estimators:
            try:
                results[tag] = _estimate_one(tag, state, links, sample, y_s)
            except GregLinkError:
                results[tag] = None
        out.append(results)
    return out


@dataclass(frozen=True)
class EstimatorSummary:
    """Monte Carlo metrics of one estimator within one scenario block."""

    estimator: str
    mean: float
    variance: float
    mse: float
    mean_variance_estimate: float
    se: float
    ese: float
    re: float | None
    rmse: float | None
    failures: int

    @property
    def label(self) -> str:
        return ESTIMATOR_LABELS.get(self.estimator, self.estimator)


@dataclass(frozen=True)
class MonteCarloSummary:
    config: ScenarioConfig
    truth: float
    estimators: tuple[EstimatorSummary, ...]

    @property
    def name(self) -> str:
        return self.config.name

    def get(self, tag: str) -> EstimatorSummary:
        for est in self.estimators:
            if est.estimator == tag:
                return est
        raise KeyError(tag)


def run_scenario(config: ScenarioConfig, workers: int = 1) -> MonteCarloSummary:
    """Run one scenario block and aggregate its Monte Carlo metrics.

    An estimator failing in a replicate (singular fit, starving subsample)
    is recorded and skipped; more than 1 percent failures for any estimator
    aborts the run. Aggregation is a sequential reduction in replicate
    order, so results do not depend on worker scheduling.
    """
    state = _build_state(config)
    k_total = config.replicates
    indices = list(range(k_total))

    if workers > 1:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk_results = list(pool.map(_run_replicates, [state] * len(chunks), chunks))
        per_replicate: list[dict] = [None] * k_total  # type: ignore[list-item]
        for chunk, results in zip(chunks, chunk_results):
            for k, res in zip(chunk, results):
                per_replicate[k] = res
    else:
        per_replicate = _run_replicates(state, indices)

    tags = config.estimators
    values = np.full((k_total, len(tags)), np.nan)
    varests = np.full((k_total, len(tags)), np.nan)
    for k, res in enumerate(per_replicate):
        for j, tag in enumerate(tags):
            if res[tag] is not None:
                values[k, j], varests[k, j] = res[tag]

    summaries = {}
    for j, tag in enumerate(tags):
        ok = np.isfinite(values[:, j])
        failures = int(k_total - ok.sum())
        if failures > MAX_FAILURE_SHARE * k_total:
            raise NumericalError(
                f"estimator {tag} failed in {failures} of {k_total} replicates"
            )
        v = values[ok, j]
        mean = float(v.mean())
        variance = float(v.var(ddof=1))
        mse = float(np.mean((v - state.truth) ** 2))
        mean_varest = float(np.nanmean(varests[ok, j])) if ok.any() else math.nan
        summaries[tag] = dict(mean=mean, variance=variance, mse=mse,
                              mean_variance_estimate=mean_varest,
                              failures=failures)

    ht_var = summaries.get("ht", {}).get("variance")
    ht_mse = summaries.get("ht", {}).get("mse")
    rows = []
    for tag in tags:
        s = summaries[tag]
        rows.append(EstimatorSummary(
            estimator=tag,
            mean=s["mean"],
            variance=s["variance"],
            mse=s["mse"],
            mean_variance_estimate=s["mean_variance_estimate"],
            se=math.sqrt(s["variance"]),
            ese=math.sqrt(s["mean_variance_estimate"]),
            re=None if ht_var is None else s["variance"] / ht_var,
            rmse=None if ht_mse is None else s["mse"] / ht_mse,
            failures=s["failures"],
        ))
    return MonteCarloSummary(config=config, truth=state.truth,
                             estimators=tuple(rows))


_METRICS = ("SE", "ESE", "RE", "RMSE")


def _metric_value(est: EstimatorSummary, metric: str) -> float | None:
    return {"SE": est.se, "ESE": est.ese, "RE": est.re, "RMSE": est.rmse}[metric]


def summary_csv_rows(summary: MonteCarloSummary) -> list[tuple[str, str, float]]:
    """Rows (metric, estimator, value) for CSV output, full precision."""
    rows = []
    for metric in _METRICS:
        for est in summary.estimators:
            value = _metric_value(est, metric)
            if value is not None:
                rows.append((metric, est.estimator, value))
    return rows


def summarize_to_table(summaries: list[MonteCarloSummary]) -> str:
    """Aligned text tables, one block per summary, metrics by estimator."""
    blocks = []
    for summary in summaries:
        cfg = summary.config
        head = (f"{summary.name}: target={cfg.target} truth={summary.truth:.6g} "
                f"replicates={cfg.replicates}")
        labels = [est.label for est in summary.estimators]
        width = max([10] + [len(lab) + 2 for lab in labels])
        lines = [head,
                 "metric" + "".join(f"{lab:>{width}}" for lab in labels)]
        for metric in _METRICS:
            cells = []
            for est in summary.estimators:
                value = _metric_value(est, metric)
                cells.append("-".rjust(width) if value is None
                             else f"{value:>{width}.6g}")
            lines.append(f"{metric:<6}" + "".join(cells))
        failures = {est.label: est.failures for est in summary.estimators
                    if est.failures}
        if failures:
            lines.append(f"failed replicates: {failures}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def se_drift(summaries: list[MonteCarloSummary],
             estimators: tuple[str, ...] = ("ht", "ideal")) -> dict:
    """Spread of the Monte Carlo SE across blocks with the same population.

    The listed estimators do not depend on the linkage, so their SE should
    agree across blocks sharing (N, n, sigma, gamma) up to simulation error;
    a large spread flags an under-replicated run.
    """
    groups: dict[tuple, list[MonteCarloSummary]] = {}
    for summary in summaries:
        cfg = summary.config
        key = (cfg.n_population, cfg.sample_size, cfg.sigma, cfg.gamma, cfg.target)
        groups.setdefault(key, []).append(summary)
    drift: dict[tuple, dict[str, float]] = {}
    for key, members in groups.items():
        if len(members) < 2:
            continue
        per_est = {}
        for tag in estimators:
            ses = [m.get(tag).se for m in members
                   if any(e.estimator == tag for e in m.estimators)]
            if len(ses) >= 2:
                per_est[tag] = max(ses) - min(ses)
        if per_est:
            drift[key] = per_est
    return drift


# scenario files: flat "key = value" lines, blocks separated by blank lines

_SCENARIO_KEYS = {
    "name": ("name", str),
    "population": ("n_population", int),
    "sample": ("sample_size", int),
    "replicates": ("replicates", int),
    "p1": ("_p1", float),
    "p2": ("_p2", float),
    "p3": ("_p3", float),
    "match_rate": ("match_rate", float),
    "correct_best_rate": ("correct_best_rate", float),
    "q": ("best_link_weight", float),
    "q_incidence": ("incidence_weight", float),
    "sigma": ("sigma", float),
    "gamma": ("gamma", float),
    "seed": ("seed", int),
    "target": ("target", str),
    "estimators": ("estimators", lambda v: tuple(t.strip() for t in v.split(",") if t.strip())),
    "redraw_linkage": ("redraw_linkage", lambda v: v.strip().lower() in ("1", "true", "yes")),
}

_REQUIRED_KEYS = ("population", "sample", "replicates")


def parse_scenario_text(text: str, source: str = "<string>") -> list[ScenarioConfig]:
    """Parse scenario blocks; raises with the offending line on bad input."""
    blocks: list[dict] = []
    current: dict = {}

    def close_block() -> None:
        nonlocal current
        if current:
            blocks.append(current)
            current = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            close_block()
            continue
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCENARIO_KEYS:
            raise ValidationError(f"{source}:{lineno}: unknown scenario key {key!r}")
        field_name, parser = _SCENARIO_KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ValidationError(
                f"{source}:{lineno}: bad value for {key!r}: {value!r}"
            ) from exc
        if field_name in current:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        current[field_name] = parsed
    close_block()

    configs = []
    for i, fields in enumerate(blocks):
        for key in _REQUIRED_KEYS:
            field_name = _SCENARIO_KEYS[key][0]
            if field_name not in fields:
                raise ValidationError(
                    f"{source}: block {i + 1} is missing required key {key!r}"
                )
        shares = (fields.pop("_p1", 0.2), fields.pop("_p2", 0.4), fields.pop("_p3", 0.4))
        fields["link_share"] = shares
        fields.setdefault("name", f"block{i + 1}")
        try:
            configs.append(ScenarioConfig(**fields))
        except ValidationError as exc:
            raise ValidationError(f"{source}: block {i + 1}: {exc}") from exc
    return configs


def load_scenario_file(path: str | Path) -> list[ScenarioConfig]:
    path = Path(path)
    return parse_scenario_text(path.read_text(encoding="utf-8"), source=str(path))
