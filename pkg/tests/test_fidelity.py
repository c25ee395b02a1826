import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frosthpo.fidelity import (FidelityAxis, FidelityError, FidelityPoint,
                               SearchSpace, check_cost_monotonicity,
                               check_rank_monotonicity, discretize_axis,
                               layers_axis, pairwise_disagreement,
                               rank_monotonicity_report)
from frosthpo.records import CostRecord, EvalRecord


# -- discretization -----------------------------------------------------------

def test_uniform_integer_layers_1_to_10():
    ax = discretize_axis("layers", "integer", 1, 10, 10, pattern="uniform")
    assert ax.levels == tuple(float(v) for v in range(1, 11))


def test_geometric_data_fractions():
    ax = discretize_axis("data_fraction", "rational", 0.125, 1.0, 4)
    assert ax.levels == (0.125, 0.25, 0.5, 1.0)


def test_geometric_integer_doubling():
    ax = discretize_axis("layers", "integer", 1, 8, 4)
    assert ax.levels == (1.0, 2.0, 4.0, 8.0)


def test_integer_axis_deduplicates_after_rounding():
    ax = discretize_axis("layers", "integer", 1, 4, 4)
    assert ax.levels == (1.0, 2.0, 3.0, 4.0)
    ax = discretize_axis("layers", "integer", 1, 3, 3)
    assert len(ax.levels) <= 3


def test_count_exceeding_integer_range_errors():
    with pytest.raises(FidelityError, match="distinct integers"):
        discretize_axis("layers", "integer", 1, 4, 5)


def test_geometric_needs_positive_min():
    with pytest.raises(FidelityError, match="min > 0"):
        discretize_axis("data_fraction", "rational", 0.0, 1.0, 3)


def test_count_below_two_rejected():
    with pytest.raises(FidelityError):
        discretize_axis("layers", "integer", 1, 8, 1)


@given(lo=st.floats(0.01, 0.5), hi=st.floats(0.6, 1.0),
       count=st.integers(2, 12),
       pattern=st.sampled_from(["geometric", "uniform"]))
@settings(max_examples=60, deadline=None)
def test_discretize_strictly_increasing_endpoint_inclusive(lo, hi, count, pattern):
    ax = discretize_axis("data_fraction", "rational", lo, hi, count, pattern)
    assert ax.levels[0] == lo
    assert ax.levels[-1] == hi
    assert all(b > a for a, b in zip(ax.levels, ax.levels[1:]))


def test_layers_axis_full_resolution():
    assert layers_axis(4).levels == (1.0, 2.0, 3.0, 4.0)


def test_fidelity_point_membership():
    axes = [layers_axis(4), discretize_axis("data_fraction", "rational", 0.25, 1.0, 3)]
    FidelityPoint.of(layers=2, data_fraction=1.0).validate(axes)
    with pytest.raises(FidelityError, match="not one of the axis levels"):
        FidelityPoint.of(layers=2.5, data_fraction=1.0).validate(axes)
    with pytest.raises(FidelityError, match="no definition"):
        FidelityPoint.of(epochs=3).validate(axes[:1])


def test_axis_levels_must_increase():
    with pytest.raises(FidelityError, match="strictly increasing"):
        FidelityAxis("layers", "integer", (2.0, 1.0))


# -- search space ----------------------------------------------------------------

def test_grid_enumeration_and_ids():
    space = SearchSpace({"lr": [0.1, 0.2], "opt": ["a", "b", "c"]})
    grid = space.grid()
    assert space.size() == len(grid) == 6
    assert [c.id for c in grid] == list(range(6))
    assert grid[0].values == {"lr": 0.1, "opt": "a"}
    assert len({tuple(sorted(c.values.items())) for c in grid}) == 6


def test_search_space_rejects_empty_dimension():
    with pytest.raises(FidelityError):
        SearchSpace({"lr": []})


# -- cost monotonicity checker ------------------------------------------------------

def _rec(cid, z, flops, peak, wall=1.0, frac=1.0, batch=32):
    return EvalRecord(config_id=cid, fidelity={"layers": z, "data_fraction": frac},
                      seed=0, objective=0.5,
                      cost=CostRecord(flops=flops, peak_bytes=peak, wall_ms=wall,
                                      batch_size=batch))


def test_cost_monotonicity_passes_on_increasing_costs():
    recs = [_rec(0, 1, 100, 10), _rec(0, 2, 200, 20), _rec(1, 1, 100, 10),
            _rec(1, 2, 150, 30)]
    report = check_cost_monotonicity(recs, axis="layers")
    assert report.all_pass
    assert report.pass_fraction == 1.0


def test_cost_monotonicity_fails_on_flat_flops():
    recs = [_rec(0, 1, 100, 10), _rec(0, 2, 100, 20)]
    assert not check_cost_monotonicity(recs).all_pass


def test_wall_time_tolerance():
    recs = [_rec(0, 1, 100, 10, wall=1.00), _rec(0, 2, 200, 20, wall=0.97)]
    strict = check_cost_monotonicity(recs, wall_tolerance=0.0, check_wall=True)
    assert not strict.all_pass
    loose = check_cost_monotonicity(recs, wall_tolerance=0.05, check_wall=True)
    assert loose.all_pass


def test_single_fidelity_input_errors():
    with pytest.raises(FidelityError, match=">= 2 fidelities"):
        check_cost_monotonicity([_rec(0, 1, 100, 10)])


def test_mixed_batch_sizes_error():
    recs = [_rec(0, 1, 100, 10, batch=16), _rec(0, 2, 200, 20, batch=32)]
    with pytest.raises(FidelityError, match="batch sizes"):
        check_cost_monotonicity(recs)


def test_unpinned_other_axes_error():
    recs = [_rec(0, 1, 100, 10, frac=0.5), _rec(0, 2, 200, 20, frac=1.0)]
    with pytest.raises(FidelityError, match="not fixed"):
        check_cost_monotonicity(recs, axis="layers")


# -- rank monotonicity ----------------------------------------------------------------

def test_rank_monotone_verdicts():
    assert check_rank_monotonicity([0.3, 0.8, 0.95, 1.0], tolerance=0.0)
    assert not check_rank_monotonicity([0.8, 0.3], tolerance=0.0)
    assert check_rank_monotonicity([0.80, 0.78, 0.95], tolerance=0.05)
    with pytest.raises(FidelityError):
        check_rank_monotonicity([1.0])


def test_reference_level_is_perfect_agreement():
    objs = {1.0: [3.0, 1.0, 2.0], 2.0: [5.0, 4.0, 6.0]}
    report = rank_monotonicity_report(objs)
    assert report.rho[-1] == 1.0
    assert report.disagreement[-1] == 0.0


def test_disagreement_counts_discordant_pairs():
    # orders: ref = a<b<c; level flips (a, b) only -> 1 of 3 pairs discordant
    assert pairwise_disagreement([2.0, 1.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1 / 3)
    assert pairwise_disagreement([1.0, 2.0], [2.0, 1.0]) == 1.0
    assert pairwise_disagreement([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_disagreement_decreases_with_rho_in_report():
    objs = {
        1.0: [4.0, 3.0, 2.0, 1.0],   # fully reversed
        2.0: [2.0, 1.0, 3.0, 4.0],   # partially scrambled
        3.0: [1.0, 2.0, 3.0, 4.0],   # reference order
    }
    report = rank_monotonicity_report(objs)
    assert report.disagreement[0] > report.disagreement[1] > report.disagreement[2]
    assert report.monotone
