"""CSV ingestion and export.

File schemas (header row required, UTF-8, decimal point):

* auxiliary file:  ``record_id,x1,...,xp``
* link file:       ``unit_id,record_id[,weight][,is_best]``
* sample file:     ``unit_id,y,pi``

External unit and record identifiers may be arbitrary strings; they are
mapped to dense 0-based indices on ingestion (numerically when every id
parses as an integer, lexicographically otherwise) and mapped back on
output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import Sample, SurveyDesign
from .errors import ValidationError
from .linkage import AuxDatabase, LinkageStructure, build_linkage


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ValidationError(f"{where}: not a number: {value!r}") from exc


def _parse_bool(value: str, where: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no", ""):
        return False
    raise ValidationError(f"{where}: not a 0/1 flag: {value!r}")


def _read_rows(path: str | Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header row required") from None
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2)
                if any(cell.strip() for cell in row)]
    return [h.strip() for h in header], rows


@dataclass(frozen=True)
class AuxTable:
    aux: AuxDatabase
    record_keys: list[str]
    index_of: dict[str, int]


def read_aux_csv(path: str | Path) -> AuxTable:
    header, rows = _read_rows(path)
    if len(header) < 2 or header[0] != "record_id":
        raise ValidationError(
            f"{path}: auxiliary header must be record_id,x1,...,xp, got {header}"
        )
    dim = len(header) - 1
    keys = []
    values = np.empty((len(rows), dim))
    for i, (lineno, row) in enumerate(rows):
        if len(row) != dim + 1:
            raise ValidationError(f"{path}:{lineno}: expected {dim + 1} fields")
        keys.append(row[0].strip())
        for j in range(dim):
            values[i, j] = _parse_float(row[j + 1], f"{path}:{lineno}")
    if len(set(keys)) != len(keys):
        dup = next(k for k in keys if keys.count(k) > 1)
        raise ValidationError(f"{path}: duplicate record id {dup!r}")
    return AuxTable(aux=AuxDatabase(x=values), record_keys=keys,
                    index_of={k: i for i, k in enumerate(keys)})


@dataclass(frozen=True)
class LinkTable:
    unit_keys: list[str]
    record_keys: list[str]
    weights: np.ndarray | None
    is_best: np.ndarray | None


def read_links_csv(path: str | Path) -> LinkTable:
    header, rows = _read_rows(path)
    expected_prefix = ["unit_id", "record_id"]
    if header[:2] != expected_prefix:
        raise ValidationError(
            f"{path}: link header must start with unit_id,record_id, got {header}"
        )
    extras = header[2:]
    if any(col not in ("weight", "is_best") for col in extras):
        raise ValidationError(f"{path}: unknown link columns {extras}")
    has_weight = "weight" in extras
    has_best = "is_best" in extras
    unit_keys, record_keys = [], []
    weights = np.empty(len(rows)) if has_weight else None
    is_best = np.zeros(len(rows), dtype=bool) if has_best else None
    for i, (lineno, row) in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
        unit_keys.append(row[0].strip())
        record_keys.append(row[1].strip())
        for col, cell in zip(extras, row[2:]):
            if col == "weight":
                weights[i] = _parse_float(cell, f"{path}:{lineno}")
            else:
                is_best[i] = _parse_bool(cell, f"{path}:{lineno}")
    return LinkTable(unit_keys=unit_keys, record_keys=record_keys,
                     weights=weights, is_best=is_best)


@dataclass(frozen=True)
class SampleTable:
    unit_keys: list[str]
    y: np.ndarray
    pi: np.ndarray


def read_sample_csv(path: str | Path) -> SampleTable:
    header, rows = _read_rows(path)
    if header != ["unit_id", "y", "pi"]:
        if len(header) < 3 or "pi" not in header:
            raise ValidationError(f"{path}: sample header must be unit_id,y,pi")
        raise ValidationError(f"{path}: sample header must be unit_id,y,pi, got {header}")
    unit_keys = []
    y = np.empty(len(rows))
    pi = np.empty(len(rows))
    for i, (lineno, row) in enumerate(rows):
        if len(row) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 fields")
        unit_keys.append(row[0].strip())
        y[i] = _parse_float(row[1], f"{path}:{lineno}")
        pi[i] = _parse_float(row[2], f"{path}:{lineno}")
    if len(set(unit_keys)) != len(unit_keys):
        dup = next(k for k in unit_keys if unit_keys.count(k) > 1)
        raise ValidationError(f"{path}: duplicate sample unit {dup!r}")
    return SampleTable(unit_keys=unit_keys, y=y, pi=pi)


def order_keys(keys: set[str]) -> list[str]:
    """Deterministic id ordering: numeric when every key is an integer."""
    try:
        return sorted(keys, key=lambda k: int(k))
    except ValueError:
        return sorted(keys)


@dataclass(frozen=True)
class EstimationInputs:
    """Everything the file-based estimation path needs, densely indexed."""

    aux: AuxDatabase
    linkage: LinkageStructure
    sample: Sample
    y: np.ndarray                 # aligned with sample.ids
    weights: np.ndarray | None    # per link, aligned with linkage order
    best_links: np.ndarray | None  # per covered unit
    unit_keys: list[str]          # dense unit index -> external id
    record_keys: list[str]


def assemble_estimation_inputs(sample_path: str | Path, aux_path: str | Path,
                               links_path: str | Path,
                               n_population: int) -> EstimationInputs:
    """Read and cross-validate the three files against a known population size.

    The linkage is population-scoped exactly when the link file covers
    ``n_population`` distinct units, otherwise sample-scoped over the units
    it covers. Sampled units must all carry links.
    """
    aux_table = read_aux_csv(aux_path)
    link_table = read_links_csv(links_path)
    sample_table = read_sample_csv(sample_path)

    unit_keys = order_keys(set(link_table.unit_keys) | set(sample_table.unit_keys))
    if len(unit_keys) > n_population:
        raise ValidationError(
            f"files reference {len(unit_keys)} units but the population size is {n_population}"
        )
    unit_index = {k: i for i, k in enumerate(unit_keys)}

    missing = [k for k in sample_table.unit_keys if k not in set(link_table.unit_keys)]
    if missing:
        raise ValidationError(f"sampled units without links: {missing[:5]}")

    try:
        record_idx = [aux_table.index_of[k] for k in link_table.record_keys]
    except KeyError as exc:
        raise ValidationError(
            f"link file references unknown record {exc.args[0]!r}"
        ) from exc
    link_pairs = np.column_stack([
        np.asarray([unit_index[k] for k in link_table.unit_keys], dtype=np.int64),
        np.asarray(record_idx, dtype=np.int64),
    ])

    covered = sorted({unit_index[k] for k in link_table.unit_keys})
    population_scope = len(covered) == n_population
    linkage = build_linkage(
        link_pairs,
        n_population if population_scope else np.asarray(covered, dtype=np.int64),
        aux_table.aux,
    )

    # re-order per-link columns into the linkage's canonical link order
    link_order = np.lexsort((link_pairs[:, 1], link_pairs[:, 0]))
    weights = None
    if link_table.weights is not None:
        weights = np.asarray(link_table.weights)[link_order]
    best_links = None
    if link_table.is_best is not None:
        flags = np.asarray(link_table.is_best)[link_order]
        best_links = np.full(linkage.n_covered, -1, dtype=np.int64)
        flagged_units = linkage.link_units[flags]
        flagged_records = linkage.link_records[flags]
        for unit, record in zip(flagged_units, flagged_records):
            pos = linkage.unit_position(int(unit))
            if best_links[pos] >= 0:
                raise ValidationError(
                    f"unit {unit_keys[unit]!r} flags more than one best link"
                )
            best_links[pos] = record
        unflagged = np.flatnonzero(best_links < 0)
        for pos in unflagged:
            if linkage.degrees[pos] == 1:
                best_links[pos] = linkage.link_records[
                    linkage.link_positions_of(int(linkage.covered_units[pos]))[0]]
            else:
                raise ValidationError(
                    f"unit {unit_keys[linkage.covered_units[pos]]!r} has multiple "
                    "links but none flagged as best"
                )

    sample_ids = np.asarray([unit_index[k] for k in sample_table.unit_keys],
                            dtype=np.int64)
    order = np.argsort(sample_ids)
    design = SurveyDesign(n_population=n_population,
                          sample_size=len(sample_ids), kind="external")
    sample = Sample(ids=sample_ids[order], pi=sample_table.pi[order], design=design)
    return EstimationInputs(
        aux=aux_table.aux,
        linkage=linkage,
        sample=sample,
        y=sample_table.y[order],
        weights=weights,
        best_links=best_links,
        unit_keys=unit_keys,
        record_keys=aux_table.record_keys,
    )


def write_aux_csv(path: str | Path, aux: AuxDatabase,
                  record_keys: Sequence[str] | None = None) -> None:
    keys = record_keys if record_keys is not None else [str(i) for i in range(aux.n_records)]
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["record_id"] + [f"x{j + 1}" for j in range(aux.dim)])
        for key, row in zip(keys, aux.x):
            writer.writerow([key] + [repr(float(v)) for v in row])


def write_links_csv(path: str | Path, linkage: LinkageStructure,
                    weights: np.ndarray | None = None,
                    best_links: np.ndarray | None = None,
                    unit_keys: Sequence[str] | None = None,
                    record_keys: Sequence[str] | None = None) -> None:
    ukey = (lambda u: unit_keys[u]) if unit_keys is not None else str
    rkey = (lambda r: record_keys[r]) if record_keys is not None else str
    best_record = None
    if best_links is not None:
        best_record = {int(u): int(r)
                       for u, r in zip(linkage.covered_units, best_links)}
    header = ["unit_id", "record_id"]
    if weights is not None:
        header.append("weight")
    if best_record is not None:
        header.append("is_best")
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for pos, (unit, record) in enumerate(zip(linkage.link_units,
                                                 linkage.link_records)):
            row = [ukey(int(unit)), rkey(int(record))]
            if weights is not None:
                row.append(repr(float(weights[pos])))
            if best_record is not None:
                row.append("1" if best_record[int(unit)] == int(record) else "0")
            writer.writerow(row)


def write_sample_csv(path: str | Path, sample: Sample, y: np.ndarray,
                     unit_keys: Sequence[str] | None = None) -> None:
    ukey = (lambda u: unit_keys[u]) if unit_keys is not None else str
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["unit_id", "y", "pi"])
        for unit, value, prob in zip(sample.ids, y, sample.pi):
            writer.writerow([ukey(int(unit)), repr(float(value)), repr(float(prob))])
