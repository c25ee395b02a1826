import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frosthpo.analysis import (AnalysisError, RankLandscape, landscape_svg,
                               rank_landscape, sentinelize, spearman,
                               spearman_full, threshold_map, export_report)
from frosthpo.records import CostRecord, EvalRecord


# -- independent O(n^2) oracle: counting-based average ranks + direct Pearson ----

def oracle_spearman(x, y):
    def counting_ranks(v):
        return [1 + sum(1 for u in v if u < w) + (sum(1 for u in v if u == w) - 1) / 2
                for w in v]

    rx, ry = counting_ranks(list(x)), counting_ranks(list(y))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    dx = sum((a - mx) ** 2 for a in rx)
    dy = sum((b - my) ** 2 for b in ry)
    if dx == 0 or dy == 0:
        return 0.0
    return num / math.sqrt(dx * dy)


def test_identical_ordering_is_one():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0


def test_reversal_is_minus_one():
    assert spearman([1, 2, 3, 4], [40, 30, 20, 10]) == -1.0


def test_closed_form_example():
    assert spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)


def test_tied_input_matches_oracle():
    x, y = [1.0, 1.0, 2.0], [1.0, 2.0, 3.0]
    assert spearman(x, y) == pytest.approx(oracle_spearman(x, y), abs=1e-12)


def test_rejects_bad_inputs():
    with pytest.raises(AnalysisError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(AnalysisError):
        spearman([1], [2])
    with pytest.raises(AnalysisError):
        spearman([1, float("nan")], [1, 2])


def test_degenerate_all_tied():
    rho, degenerate = spearman_full([5, 5, 5], [1, 2, 3])
    assert rho == 0.0 and degenerate


def test_oracle_equivalence_on_random_vectors_with_ties():
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(200):
        n = int(rng.integers(2, 30))
        x = rng.integers(0, 6, size=n).astype(float)
        y = rng.integers(0, 6, size=n).astype(float) + rng.normal(0, 0.1, size=n)
        assert spearman(x, y) == pytest.approx(oracle_spearman(x, y), abs=1e-12)


_grid_floats = st.floats(-100, 100).map(lambda v: round(v, 4))


@given(st.lists(_grid_floats, min_size=2, max_size=40), st.data())
@settings(max_examples=80, deadline=None)
def test_spearman_properties(x, data):
    y = data.draw(st.lists(_grid_floats, min_size=len(x), max_size=len(x)))
    rho = spearman(x, y)
    assert -1.0 <= rho <= 1.0
    assert rho == pytest.approx(spearman(y, x), abs=1e-12)
    # invariance under a strictly increasing transform of one argument
    # (values quantized so the transform stays strictly increasing in floats)
    assert spearman([3 * v + 1 for v in x], y) == pytest.approx(rho, abs=1e-12)


def test_sentinelize_orders_diverged_by_id():
    objs = [0.3, math.inf, 0.1, math.inf]
    out = sentinelize(objs, [0, 1, 2, 3])
    assert out[0] == 0.3 and out[2] == 0.1
    assert out[1] < out[3]
    assert all(math.isfinite(v) for v in out)


# -- landscapes --------------------------------------------------------------------

def _rec(cid, z, frac, obj, seed=0):
    diverged = not math.isfinite(obj)
    return EvalRecord(config_id=cid, fidelity={"layers": z, "data_fraction": frac},
                      seed=seed, objective=obj, diverged=diverged,
                      cost=CostRecord(flops=1, peak_bytes=1, wall_ms=1.0))


def _toy_records():
    # 3 configs x 2x2 grid; cell (2, 1.0) is the reference
    table = {
        (1.0, 0.5): [3.0, 1.0, 2.0],
        (1.0, 1.0): [1.0, 2.0, 3.0],
        (2.0, 0.5): [10.0, 20.0, 30.0],
        (2.0, 1.0): [0.1, 0.2, 0.3],
    }
    recs = []
    for (z, frac), objs in table.items():
        for cid, obj in enumerate(objs):
            recs.append(_rec(cid, z, frac, obj))
    return recs


def test_landscape_reference_cell_exactly_one():
    ls = rank_landscape(_toy_records())
    assert ls.cell(2.0, 1.0) == 1.0


def test_landscape_hand_computed_cells():
    ls = rank_landscape(_toy_records())
    # ranks at (1.0, 0.5): [3,1,2] vs ref [1,2,3] -> rho = -0.5
    assert ls.cell(1.0, 0.5) == pytest.approx(-0.5)
    # (2.0, 0.5) increasing like the reference -> 1.0
    assert ls.cell(2.0, 0.5) == 1.0
    assert ls.cell(1.0, 1.0) == 1.0


def test_landscape_monotone_transform_of_reference_is_one():
    recs = []
    for cid, base in enumerate([0.3, 0.1, 0.8, 0.5]):
        recs.append(_rec(cid, 1.0, 1.0, math.exp(base)))
        recs.append(_rec(cid, 2.0, 1.0, base))
    ls = rank_landscape(recs)
    assert ls.cell(1.0, 1.0) == 1.0


def test_landscape_missing_pairs_listed():
    recs = _toy_records()[:-1]
    with pytest.raises(AnalysisError, match="missing"):
        rank_landscape(recs)


def test_landscape_multi_seed_mean_before_ranking():
    # binary-exact values so the cross-config tie of means is exact
    recs = []
    for cid, objs in enumerate([(0.5, 0.0), (0.25, 0.25), (0.75, 0.25)]):
        for seed, obj in enumerate(objs):
            recs.append(_rec(cid, 1.0, 1.0, obj, seed=seed))
            recs.append(_rec(cid, 2.0, 1.0, 0.1 * (cid + 1), seed=seed))
    ls = rank_landscape(recs)
    assert ls.n_seeds == 2
    # means: [0.25, 0.25, 0.5] -> tie between configs 0 and 1
    assert ls.cell(1.0, 1.0) == pytest.approx(
        spearman([0.25, 0.25, 0.5], [0.1, 0.2, 0.3]))


def test_landscape_with_diverged_records():
    recs = [
        _rec(0, 1.0, 1.0, math.inf), _rec(1, 1.0, 1.0, 0.5), _rec(2, 1.0, 1.0, math.inf),
        _rec(0, 2.0, 1.0, 0.1), _rec(1, 2.0, 1.0, 0.2), _rec(2, 2.0, 1.0, 0.3),
    ]
    ls = rank_landscape(recs)
    assert -1.0 <= ls.cell(1.0, 1.0) <= 1.0


# -- threshold maps -----------------------------------------------------------------

def test_threshold_masks_nested():
    ls = rank_landscape(_toy_records())
    masks = threshold_map(ls, [0.6, 0.85, 0.95])
    assert np.all(masks[0.95] <= masks[0.85])
    assert np.all(masks[0.85] <= masks[0.6])


def test_threshold_one_keeps_reference():
    ls = rank_landscape(_toy_records())
    masks = threshold_map(ls, [1.0])
    i = ls.layer_levels.index(2.0)
    j = ls.data_levels.index(1.0)
    assert masks[1.0][i, j]


def test_all_zero_landscape_only_reference_survives():
    ls = RankLandscape(layer_levels=(1.0, 2.0), data_levels=(1.0,),
                       rho=np.array([[0.0], [1.0]]), reference=(2.0, 1.0),
                       n_configs=3, n_seeds=1)
    masks = threshold_map(ls, [0.6])
    assert masks[0.6].sum() == 1


def test_threshold_out_of_range():
    ls = rank_landscape(_toy_records())
    with pytest.raises(AnalysisError):
        threshold_map(ls, [1.5])


# -- export -------------------------------------------------------------------------

def test_export_empty_traces_writes_headers(tmp_path):
    written = export_report(tmp_path, traces={}, landscapes={})
    names = {p.name for p in written}
    assert "schedule_comparison.csv" in names
    rows = list(csv.reader(open(tmp_path / "schedule_comparison.csv")))
    assert rows[0] == ["Data Level", "Configuration", "Rank Correlation",
                       "FLOPs", "Cost"]
    assert len(rows) == 1
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["traces"] == {}


def test_export_landscape_shapes(tmp_path):
    ls = rank_landscape(_toy_records())
    export_report(tmp_path, landscapes={"joint": ls})
    rows = list(csv.reader(open(tmp_path / "landscape_joint.csv")))
    assert len(rows) == 1 + 2  # header + 2 layer levels
    assert len(rows[1]) == 1 + 2  # label + 2 data levels
    svg = (tmp_path / "landscape_joint.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<rect") == 4


def test_svg_renders_any_landscape():
    ls = rank_landscape(_toy_records())
    svg = landscape_svg(ls)
    assert "</svg>" in svg
