"""Command-line interface: simulate, estimate, diagnose, oracle.

Exit codes: 0 success, 1 validation error (bad files, parameters or
invariants), 2 numerical failure (singular fits, enumeration guard).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .dataio import EstimationInputs, assemble_estimation_inputs, read_aux_csv, read_links_csv, order_keys
from .design import Estimate, exact_design_moments, ht_total, rng_stream
from .errors import NumericalError, ValidationError
from .estimators import (
    DiagnosticsReport,
    GregSpec,
    consistency_diagnostics,
    greg,
    npa_covariances,
    sls_greg,
    sub_greg,
)
from .harness import (
    load_scenario_file,
    run_scenario,
    se_drift,
    summarize_to_table,
    summary_csv_rows,
)
from .linkage import (
    INCIDENCE,
    POPULATION,
    REVERSE,
    AuxDatabase,
    LinkageStructure,
    WeightScheme,
    best_link_indicator_weights,
    build_linkage,
    derive_covariates,
    multiplicity_weights,
    reverse_weights_best_link,
)
from .synthpop import PopulationModel, gen_population

FILE_ESTIMATORS = ("ht", "pi", "sub", "sbl", "sri", "sls")


def _fmt(value: float | None) -> str:
    return "unavailable" if value is None else f"{value:.6g}"


def _print_estimate(est: Estimate, diagnostics: DiagnosticsReport | None) -> None:
    print(f"estimator: {est.estimator}")
    print(f"target: {est.target}")
    print(f"point estimate: {_fmt(est.value)}")
    print(f"variance estimate: {_fmt(est.variance)}")
    print(f"standard error: {_fmt(est.se)}")
    if diagnostics is not None:
        stats = ", ".join(
            f"component {j + 1}: value {diagnostics.value[j]:.6g} z {diagnostics.z[j]:.3g}"
            for j in range(len(diagnostics.value))
        )
        print(f"consistency diagnostic ({diagnostics.statistic}): {stats}")
    print()


def _restricted(inputs: EstimationInputs):
    sub_linkage, link_index = inputs.linkage.restrict(inputs.sample.ids)
    return sub_linkage, link_index


def _best_for(inputs: EstimationInputs, sub_linkage: LinkageStructure) -> np.ndarray:
    if inputs.best_links is None:
        if np.all(sub_linkage.degrees == 1):
            # a unit's only link is trivially its best link
            return sub_linkage.link_records.copy()
        raise ValidationError(
            "this estimator needs an is_best column in the link file"
        )
    pos = np.searchsorted(inputs.linkage.covered_units, sub_linkage.covered_units)
    return inputs.best_links[pos]


def _reverse_scheme(inputs: EstimationInputs, sub_linkage: LinkageStructure,
                    link_index: np.ndarray, q: float) -> WeightScheme:
    if inputs.weights is not None:
        return WeightScheme(kind=REVERSE, linkage=sub_linkage,
                            values=inputs.weights[link_index])
    if inputs.best_links is not None:
        return reverse_weights_best_link(sub_linkage,
                                         _best_for(inputs, sub_linkage), q)
    equal = 1.0 / sub_linkage.degrees[sub_linkage.unit_index_per_link()]
    return WeightScheme(kind=REVERSE, linkage=sub_linkage, values=equal)


def estimate_from_inputs(inputs: EstimationInputs, estimator: str, target: str,
                         q: float) -> tuple[Estimate, DiagnosticsReport | None]:
    """Compute one file-based estimator, with its diagnostic when defined."""
    sample, aux = inputs.sample, inputs.aux
    n_population = sample.design.n_population

    if estimator == "ht":
        return ht_total(inputs.y, sample, target=target), None

    if estimator == "pi":
        if inputs.linkage.scope != POPULATION:
            raise ValidationError("PI-GREG requires population-scope links")
        if inputs.weights is not None:
            scheme = WeightScheme(kind=INCIDENCE, linkage=inputs.linkage,
                                  values=inputs.weights)
        else:
            scheme = multiplicity_weights(inputs.linkage)
        derived = derive_covariates(inputs.linkage, scheme, aux)
        spec = GregSpec(covariates=derived.weighted[sample.ids],
                        total=derived.weighted_total, tag="pi")
        return greg(spec, inputs.y, sample, target=target), None

    sub_linkage, link_index = _restricted(inputs)
    if estimator == "sub":
        single = sub_linkage.degrees == 1
        if not single.any():
            raise ValidationError("no single-link units in the sample")
        x_rows = np.vstack([
            aux.x[sub_linkage.records_of(int(u))[0]]
            for u in sub_linkage.covered_units[single]
        ])
        est = sub_greg(inputs.y[single], x_rows, aux.mean, sample.design,
                       target=target)
        return est, None

    if estimator == "sbl":
        best = _best_for(inputs, sub_linkage)
        scheme = best_link_indicator_weights(sub_linkage, best)
        derived = derive_covariates(sub_linkage, scheme, aux)
        spec = GregSpec(covariates=derived.weighted,
                        total=n_population * aux.mean, tag="sbl")
        est = greg(spec, inputs.y, sample, target=target)
        diag = consistency_diagnostics(sub_linkage, aux, sample, "sbl",
                                       best_links=best)
        return est, diag

    if estimator == "sri":
        scheme = _reverse_scheme(inputs, sub_linkage, link_index, q)
        derived = derive_covariates(sub_linkage, scheme, aux)
        spec = GregSpec(covariates=derived.weighted,
                        total=n_population * aux.mean, tag="sri")
        est = greg(spec, inputs.y, sample, target=target)
        diag = consistency_diagnostics(sub_linkage, aux, sample, "sri",
                                       scheme=scheme)
        return est, diag

    if estimator == "sls":
        scheme = _reverse_scheme(inputs, sub_linkage, link_index, q)
        est = sls_greg(sub_linkage, scheme, aux, inputs.y, sample, target=target)
        diag = consistency_diagnostics(sub_linkage, aux, sample, "sls")
        return est, diag

    raise ValidationError(
        f"unknown estimator {estimator!r}; choose from {', '.join(FILE_ESTIMATORS)}"
    )


def _cmd_simulate(args: argparse.Namespace) -> int:
    configs = load_scenario_file(args.scenario)
    if not configs:
        raise ValidationError(f"{args.scenario}: no scenario blocks found")
    if args.replicates is not None:
        configs = [dataclasses.replace(c, replicates=args.replicates) for c in configs]
    if args.seed is not None:
        configs = [dataclasses.replace(c, seed=args.seed) for c in configs]
    small = [c.name for c in configs if c.replicates < 30]
    if small:
        print(f"warning: fewer than 30 replicates in {', '.join(small)}; "
              "Monte Carlo error is large", file=sys.stderr)

    summaries = [run_scenario(c, workers=args.workers) for c in configs]
    text = summarize_to_table(summaries)
    print(text)

    drift = se_drift(summaries)
    for key, per_est in drift.items():
        n_pop, n_s, sigma, gamma, target = key
        spread = ", ".join(f"{tag} {value:.6g}" for tag, value in per_est.items())
        print(f"SE drift across blocks sharing (N={n_pop}, n={n_s}, "
              f"sigma={sigma}, gamma={gamma}, target={target}): {spread}")
    if not drift:
        print("SE drift: not applicable (needs several blocks with a shared population)")

    if args.out:
        prefix = Path(args.out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        for summary in summaries:
            csv_path = Path(f"{prefix}_{summary.name}.csv")
            with csv_path.open("w", encoding="utf-8") as handle:
                handle.write("metric,estimator,value\n")
                for metric, estimator, value in summary_csv_rows(summary):
                    handle.write(f"{metric},{estimator},{value!r}\n")
        Path(f"{prefix}.txt").write_text(text + "\n", encoding="utf-8")
        print(f"wrote {prefix}.txt and per-block CSV files")
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    inputs = assemble_estimation_inputs(args.sample, args.aux, args.links,
                                        n_population=args.big_n)
    estimators = [e.strip() for e in args.estimator.split(",") if e.strip()]
    if not estimators:
        raise ValidationError("no estimator requested")
    for estimator in estimators:
        est, diag = estimate_from_inputs(inputs, estimator, args.target, args.q)
        _print_estimate(est, diag)
    return 0


def _echo_structure(linkage: LinkageStructure, unit_keys: list[str],
                    record_keys: list[str], limit: int) -> None:
    print(f"scope: {linkage.scope}")
    print(f"units covered: {linkage.n_covered}, records: {linkage.n_records}, "
          f"links: {linkage.n_links}")
    for unit in linkage.covered_units[:limit]:
        records = [record_keys[r] for r in linkage.records_of(int(unit))]
        print(f"unit {unit_keys[unit]}: links {records} (d={len(records)})")
    if linkage.n_covered > limit:
        print(f"... {linkage.n_covered - limit} more units")
    linked = linkage.covered_records
    for record in linked[:limit]:
        units = [unit_keys[u] for u in linkage.units_of(int(record))]
        name = "units" if linkage.scope == POPULATION else "sample units"
        print(f"record {record_keys[record]}: {name} {units} "
              f"(m={len(units)})")
    if len(linked) > limit:
        print(f"... {len(linked) - limit} more records")


def _print_npa(linkage: LinkageStructure, aux: AuxDatabase,
               weights: np.ndarray | None) -> None:
    """Informativeness covariances, printable only for population links."""
    if linkage.scope != POPULATION:
        return
    if weights is not None:
        try:
            scheme = WeightScheme(kind=INCIDENCE, linkage=linkage, values=weights)
        except ValidationError:
            try:
                scheme = WeightScheme(kind=REVERSE, linkage=linkage, values=weights)
            except ValidationError:
                return
    else:
        scheme = multiplicity_weights(linkage)
    npa = npa_covariances(linkage, scheme, aux)
    cov1 = ", ".join(f"{v:.6g}" for v in npa.weight_x_cov)
    cov2 = ", ".join(f"{v:.6g}" for v in npa.indicator_x_cov)
    print(f"weight-value covariance over links: {cov1}")
    print(f"linked-indicator covariance over records: {cov2} "
          f"({npa.n_linked_records} of {linkage.n_records} records linked)")


def _cmd_diagnose(args: argparse.Namespace) -> int:
    if args.sample is not None:
        if args.big_n is None:
            raise ValidationError("--big-n is required when a sample file is given")
        inputs = assemble_estimation_inputs(args.sample, args.aux, args.links,
                                            n_population=args.big_n)
        _echo_structure(inputs.linkage, inputs.unit_keys, inputs.record_keys,
                        args.limit)
        _print_npa(inputs.linkage, inputs.aux, inputs.weights)
        sub_linkage, link_index = _restricted(inputs)
        reports = []
        try:
            scheme = _reverse_scheme(inputs, sub_linkage, link_index, args.q)
            reports.append(consistency_diagnostics(sub_linkage, inputs.aux,
                                                   inputs.sample, "sri",
                                                   scheme=scheme))
        except ValidationError:
            pass
        if inputs.best_links is not None:
            reports.append(consistency_diagnostics(
                sub_linkage, inputs.aux, inputs.sample, "sbl",
                best_links=_best_for(inputs, sub_linkage)))
        reports.append(consistency_diagnostics(sub_linkage, inputs.aux,
                                               inputs.sample, "sls"))
        print()
        for report in reports:
            stats = ", ".join(
                f"component {j + 1}: value {report.value[j]:.6g} z {report.z[j]:.3g}"
                for j in range(len(report.value))
            )
            print(f"consistency diagnostic ({report.statistic}): {stats}")
        return 0

    aux_table = read_aux_csv(args.aux)
    link_table = read_links_csv(args.links)
    unit_keys = order_keys(set(link_table.unit_keys))
    unit_index = {k: i for i, k in enumerate(unit_keys)}
    pairs = np.column_stack([
        np.asarray([unit_index[k] for k in link_table.unit_keys], dtype=np.int64),
        np.asarray([aux_table.index_of[k] for k in link_table.record_keys],
                   dtype=np.int64),
    ])
    covered: np.ndarray | int
    if args.big_n is not None and len(unit_keys) == args.big_n:
        covered = args.big_n
    else:
        covered = np.arange(len(unit_keys), dtype=np.int64)
    linkage = build_linkage(pairs, covered, aux_table.aux)
    _echo_structure(linkage, unit_keys, aux_table.record_keys, args.limit)
    weights = None
    if link_table.weights is not None:
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        weights = np.asarray(link_table.weights)[order]
    _print_npa(linkage, aux_table.aux, weights)
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    model = PopulationModel(n_units=args.big_n, sigma=args.sigma, gamma=args.gamma)
    _, population = gen_population(model, rng_stream(args.seed, 0))
    y = population.y
    moments = exact_design_moments(y, args.n)
    truth = float(y.sum())
    dev_mean = abs(moments.expectation - truth) / max(abs(truth), 1e-300)
    dev_var = abs(moments.expected_variance_estimate - moments.variance)
    dev_var /= max(abs(moments.variance), 1e-300)
    print(f"enumerated C({args.big_n},{args.n}) = {moments.n_samples} samples")
    print(f"max relative deviation, estimator expectation vs truth: {dev_mean:.6g}")
    print(f"max relative deviation, expected variance estimate vs exact variance: "
          f"{dev_var:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greglink",
        description="Population total and mean estimation from imperfectly "
                    "linked auxiliary data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    default_workers = int(os.environ.get("GREGLINK_WORKERS", "1"))

    p_sim = sub.add_parser("simulate", help="run scenario blocks and print metric tables")
    p_sim.add_argument("scenario", help="scenario file (key = value blocks)")
    p_sim.add_argument("--out", help="output prefix for CSV and text tables")
    p_sim.add_argument("--seed", type=int, default=None, help="override every block's seed")
    p_sim.add_argument("--k", "--replicates", dest="replicates", type=int,
                       default=None, help="override every block's replicate count")
    p_sim.add_argument("--workers", type=int, default=default_workers,
                       help="worker processes (default from GREGLINK_WORKERS)")
    p_sim.set_defaults(func=_cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate from sample, auxiliary and link files")
    p_est.add_argument("--sample", required=True, help="CSV unit_id,y,pi")
    p_est.add_argument("--aux", required=True, help="CSV record_id,x1,...,xp")
    p_est.add_argument("--links", required=True,
                       help="CSV unit_id,record_id[,weight][,is_best]")
    p_est.add_argument("--estimator", default="sri",
                       help=f"comma-separated subset of {','.join(FILE_ESTIMATORS)}")
    p_est.add_argument("--target", choices=("total", "mean"), default="total")
    p_est.add_argument("--big-n", dest="big_n", type=int, required=True,
                       help="population size N")
    p_est.add_argument("--q", type=float, default=0.4,
                       help="best-link weight when building reverse weights from is_best")
    p_est.set_defaults(func=_cmd_estimate)

    p_diag = sub.add_parser("diagnose", help="echo the link structure and consistency checks")
    p_diag.add_argument("--aux", required=True)
    p_diag.add_argument("--links", required=True)
    p_diag.add_argument("--sample", default=None)
    p_diag.add_argument("--big-n", dest="big_n", type=int, default=None)
    p_diag.add_argument("--q", type=float, default=0.4)
    p_diag.add_argument("--limit", type=int, default=50,
                        help="maximum units/records echoed")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_orc = sub.add_parser("oracle", help="exact enumeration check of design unbiasedness")
    p_orc.add_argument("--big-n", dest="big_n", type=int, required=True)
    p_orc.add_argument("--n", type=int, required=True)
    p_orc.add_argument("--seed", type=int, default=0)
    p_orc.add_argument("--sigma", type=float, default=1.5)
    p_orc.add_argument("--gamma", type=float, default=0.0)
    p_orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
