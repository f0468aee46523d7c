"""Population, linkage and weight generators."""

import numpy as np
import pytest

from greglink.design import rng_stream
from greglink.errors import ValidationError
from greglink.linkage import INCIDENCE
from greglink.synthpop import (
    LinkageModel,
    PopulationModel,
    aux_from_population,
    gen_linkage,
    gen_pi_q_weights,
    gen_population,
    proportional_counts,
)


def test_population_near_deterministic_limit():
    model = PopulationModel(n_units=2000, sigma=1e-12)
    x, pop = gen_population(model, rng_stream(1, 0))
    assert np.corrcoef(x, pop.y)[0, 1] > 0.999999


def test_population_main_setting_moments():
    # sd(y) should be close to sqrt(25/12 + sigma^2) when the noise scale
    # is constant
    model = PopulationModel(n_units=50_000, sigma=1.5, gamma=0.0)
    x, pop = gen_population(model, rng_stream(2, 0))
    assert np.all((x > 0) & (x < 1))
    assert pop.y.std() == pytest.approx(np.sqrt(25 / 12 + 1.5**2), rel=0.02)
    assert pop.mean == pytest.approx(1 + 5 * 0.5, rel=0.02)


def test_population_heteroscedastic_binned_spread():
    # gamma=1, sigma=2: noise sd grows like 2x
    model = PopulationModel(n_units=200_000, sigma=2.0, gamma=1.0)
    x, pop = gen_population(model, rng_stream(3, 0))
    residuals = pop.y - (1 + 5 * x)
    for lo, hi in [(0.1, 0.2), (0.45, 0.55), (0.8, 0.9)]:
        mask = (x >= lo) & (x < hi)
        mid = (lo + hi) / 2
        assert residuals[mask].std() == pytest.approx(2 * mid, rel=0.06)


def test_population_model_validation():
    with pytest.raises(ValidationError):
        PopulationModel(n_units=10, sigma=0.0)
    with pytest.raises(ValidationError):
        PopulationModel(n_units=10, gamma=1.5)


def test_proportional_counts_rounding():
    assert list(proportional_counts(5000, (0.2, 0.4, 0.4))) == [1000, 2000, 2000]
    assert list(proportional_counts(10, (0.33, 0.33, 0.34))) == [3, 3, 4]
    counts = proportional_counts(7, (0.5, 0.25, 0.25))
    assert counts.sum() == 7


def test_linkage_identity_degenerate_case():
    model = LinkageModel(link_share=(1.0, 0.0, 0.0), match_rate=1.0,
                         correct_best_rate=1.0)
    matches, linkage, best = gen_linkage(50, model, rng_stream(4, 0))
    assert len(matches) == 50
    assert np.all(linkage.degrees == 1)
    assert np.all(linkage.link_units == linkage.link_records)
    assert np.array_equal(best, np.arange(50))


def test_linkage_counts_main_setting():
    model = LinkageModel(link_share=(0.4, 0.3, 0.3), match_rate=0.9,
                         correct_best_rate=0.9)
    matches, linkage, best = gen_linkage(5000, model, rng_stream(5, 0))
    counts = np.bincount(linkage.degrees)
    assert list(counts[1:]) == [2000, 1500, 1500]
    assert linkage.n_links == 2000 + 2 * 1500 + 3 * 1500
    assert len(matches) == 4500


def test_linkage_structural_audit():
    model = LinkageModel(link_share=(0.2, 0.4, 0.4), match_rate=0.4,
                         correct_best_rate=0.3)
    matches, linkage, best = gen_linkage(2000, model, rng_stream(6, 0))
    record_of_unit = matches.record_of_unit
    assert len(record_of_unit) == round(2000 * 0.4)
    # every single-link unit's link is its match
    singles = np.flatnonzero(linkage.degrees == 1)
    assert len(singles) == 400
    for unit in singles:
        assert record_of_unit[int(unit)] == int(linkage.records_of(int(unit))[0])
    # exactly the matched multi-link units beyond the singles
    matched_multi = [u for u in record_of_unit if linkage.degree(u) > 1]
    assert len(matched_multi) == round(2000 * 0.4) - 400
    # matches always appear among their unit's links, false links never
    # reference the unit's own record
    for unit, record in record_of_unit.items():
        assert record == unit
        assert record in linkage.records_of(unit)
    for unit in np.flatnonzero(linkage.degrees > 1):
        records = linkage.records_of(int(unit))
        others = records[records != unit]
        assert len(np.unique(others)) == len(others)
    # best links lie in the unit's link set; the correct-best count is exact
    correct = 0
    for pos, unit in enumerate(range(2000)):
        assert best[pos] in linkage.records_of(unit)
        if record_of_unit.get(unit) == best[pos]:
            correct += 1
    assert correct == round(2000 * 0.3)


def test_linkage_determinism():
    model = LinkageModel(link_share=(0.2, 0.4, 0.4), match_rate=0.8,
                         correct_best_rate=0.6)
    m1, l1, b1 = gen_linkage(800, model, rng_stream(7, 0))
    m2, l2, b2 = gen_linkage(800, model, rng_stream(7, 0))
    assert m1.record_of_unit == m2.record_of_unit
    assert np.array_equal(l1.link_units, l2.link_units)
    assert np.array_equal(l1.link_records, l2.link_records)
    assert np.array_equal(b1, b2)
    m3, l3, b3 = gen_linkage(800, model, rng_stream(8, 0))
    assert not np.array_equal(l1.link_records, l3.link_records)


def test_linkage_model_validation():
    with pytest.raises(ValidationError, match="match rate"):
        LinkageModel(link_share=(0.5, 0.25, 0.25), match_rate=0.3,
                     correct_best_rate=0.3)
    with pytest.raises(ValidationError, match="correct-best"):
        LinkageModel(link_share=(0.2, 0.4, 0.4), match_rate=0.5,
                     correct_best_rate=0.6)
    with pytest.raises(ValidationError, match="sum to 1"):
        LinkageModel(link_share=(0.5, 0.2, 0.2), match_rate=0.6,
                     correct_best_rate=0.6)


def test_pi_q_weights_rules():
    model = LinkageModel(link_share=(0.2, 0.4, 0.4), match_rate=0.6,
                         correct_best_rate=0.5)
    matches, linkage, _ = gen_linkage(1000, model, rng_stream(9, 0))
    scheme = gen_pi_q_weights(linkage, matches, 0.4, rng_stream(9, 1))
    assert scheme.kind == INCIDENCE
    unit_of_record = matches.unit_of_record
    m = linkage.multiplicities
    for record in range(linkage.n_records):
        if m[record] == 0:
            continue
        positions = linkage.link_positions_of_record(record)
        values = scheme.values[positions]
        units_here = linkage.link_units[positions]
        assert values.sum() == pytest.approx(1.0, abs=1e-12)
        if m[record] == 1:
            assert values[0] == 1.0
        else:
            assert np.isclose(values, 0.4).sum() == 1
            others = values[~np.isclose(values, 0.4)]
            assert np.allclose(others, 0.6 / (m[record] - 1))
            match_unit = unit_of_record.get(record)
            if match_unit is not None and match_unit in units_here:
                hit = values[units_here == match_unit][0]
                assert hit == pytest.approx(0.4)


def test_pi_q_weights_multiplicity_range():
    # the record-side link counts spread wider than the unit-side ones, but
    # most records still carry at most 3 links
    model = LinkageModel(link_share=(0.2, 0.4, 0.4), match_rate=0.4,
                         correct_best_rate=0.4)
    matches, linkage, _ = gen_linkage(5000, model, rng_stream(10, 0))
    m = linkage.multiplicities
    assert m.max() > linkage.degrees.max()
    assert np.mean(m <= 3) > 0.75


def test_pi_q_weights_validation():
    model = LinkageModel(link_share=(1.0, 0.0, 0.0), match_rate=1.0,
                         correct_best_rate=1.0)
    matches, linkage, _ = gen_linkage(20, model, rng_stream(11, 0))
    with pytest.raises(ValidationError, match="q must lie"):
        gen_pi_q_weights(linkage, matches, 1.0, rng_stream(11, 1))


def test_aux_from_population_shape():
    x = np.array([0.25, 0.75])
    aux = aux_from_population(x)
    assert aux.x.shape == (2, 1)
    assert aux.mean[0] == pytest.approx(0.5)
