import numpy as np
import pytest

from deepaid.datahub import load_artifact, save_artifact
from deepaid.errors import DataFormatError
from deepaid.evalkit import (AttackConfig, EvalReport, benchmark_runtime,
                             distance_attacks, jaccard_similarity,
                             label_flip_rate, lfr_budget_curve,
                             optimization_attack, srtd_reference)
from deepaid.interp_tabular import TabularInterpConfig, interpret_tabular


@pytest.fixture(scope="module")
def interpreted(tab_detector, tab_bench):
    cfg = TabularInterpConfig(k=6)
    rows = [x for x in tab_bench.all_anomaly_rows()[:24]
            if tab_detector.score(x)[1]]
    return rows, [interpret_tabular(x, tab_detector, cfg) for x in rows], cfg


def test_full_interpretation_flips_converged_anomalies(tab_detector, interpreted):
    rows, interps, _ = interpreted
    pairs = [(x, i) for x, i in zip(rows, interps) if i.converged]
    assert pairs
    # overwriting all interpreted dims reproduces the searched reference,
    # which scores normal by the interpreter's post-condition
    rate = label_flip_rate([x for x, _ in pairs], [i for _, i in pairs],
                           tab_detector)
    assert rate == 1.0


def test_zero_budget_keeps_anomalies(tab_detector, interpreted):
    rows, interps, _ = interpreted
    assert label_flip_rate(rows, interps, tab_detector, budget=0) == 0.0


def test_lfr_curve_monotone(tab_detector, interpreted):
    rows, interps, _ = interpreted
    curve = lfr_budget_curve(rows, interps, tab_detector, [1, 2, 4, 6])
    vals = [curve[b] for b in sorted(curve)]
    assert all(b <= a for a, b in zip(vals[1:], vals))  # non-decreasing


def test_mismatched_lists_rejected(tab_detector, interpreted):
    rows, interps, _ = interpreted
    with pytest.raises(DataFormatError):
        label_flip_rate(rows[:3], interps[:2], tab_detector)


def test_jaccard_cases():
    assert jaccard_similarity({1, 2, 3}, {1, 2, 3}) == 1.0
    assert jaccard_similarity({1, 2}, {3, 4}) == 0.0
    assert jaccard_similarity({1, 2, 3}, {2, 3, 4}) == 0.5
    with pytest.warns(UserWarning, match="empty"):
        assert jaccard_similarity(set(), set()) == 1.0


def test_srtd_picks_closer_row():
    rows = np.array([[0.0, 0.0], [1.0, 1.0]])
    interp = srtd_reference(np.array([0.9, 0.8]), rows, k=1)
    assert np.array_equal(
        np.where(interp.reference != interp.anomaly,
                 interp.reference, interp.reference), interp.reference)
    assert interp.entries[0].reference_value == 1.0


def test_srtd_degenerate_flagged():
    rows = np.array([[0.25, 0.5], [0.9, 0.9]])
    with pytest.warns(UserWarning, match="degenerate"):
        interp = srtd_reference(np.array([0.25, 0.5]), rows, k=2)
    assert not interp.converged


def test_srtd_weaker_than_search(tab_detector, tab_bench, interpreted):
    rows, interps, _ = interpreted
    srtd = [srtd_reference(x, tab_bench.normal_rows, 6) for x in rows]
    assert (label_flip_rate(rows, srtd, tab_detector)
            <= label_flip_rate(rows, interps, tab_detector))


def test_optimization_attack_respects_budget(tab_detector, interpreted):
    rows, interps, cfg = interpreted
    attack = AttackConfig(delta_a=0.15, ascent_iters=10)
    xt, ok = optimization_attack(rows[0], tab_detector, cfg, attack)
    assert np.linalg.norm(xt - rows[0]) <= attack.delta_a + 1e-9
    if ok:
        assert tab_detector.score(xt)[1]


def test_vanishing_budget_is_identity(tab_detector, interpreted):
    rows, interps, cfg = interpreted
    attack = AttackConfig(delta_a=1e-9, ascent_iters=5)
    xt, ok = optimization_attack(rows[0], tab_detector, cfg, attack)
    after = interpret_tabular(xt, tab_detector, cfg)
    assert jaccard_similarity(interps[0], after) == 1.0


def test_distance_attacks_touch_only_irrelevant_dims(interpreted):
    rows, interps, _ = interpreted
    res = distance_attacks(rows[0], interps[0], AttackConfig(), seed=4)
    relevant = set(interps[0].dims)
    assert set(np.nonzero(res.l0 != rows[0])[0].tolist()).isdisjoint(relevant)
    assert set(np.nonzero(res.l2 != rows[0])[0].tolist()) <= {res.l2_dim}
    assert res.l2_dim not in relevant


def test_distance_attack_trivial_parameters(interpreted):
    rows, interps, _ = interpreted
    res = distance_attacks(rows[0], interps[0],
                           AttackConfig(sigma=0.0, a_scale=0.0), seed=4)
    assert np.array_equal(res.l0, rows[0])          # sigma=0 is the identity
    assert res.l2[res.l2_dim] == 0.0                # A=0 zeroes the dim


def test_no_irrelevant_dims_rejected(tab_detector, tab_bench):
    x = tab_bench.all_anomaly_rows()[0]
    interp = interpret_tabular(x, tab_detector, TabularInterpConfig(k=40))
    if len(interp.dims) == 40:
        with pytest.raises(DataFormatError, match="irrelevant"):
            distance_attacks(x, interp, AttackConfig())


def test_benchmark_runtime_shape(tab_detector, interpreted):
    rows, _, cfg = interpreted
    stats = benchmark_runtime(
        lambda x: interpret_tabular(x, tab_detector, cfg), rows[:5])
    assert stats["count"] == 5
    assert stats["total_s"] > 0
    assert stats["p50_s"] <= stats["p99_s"]


def test_runtime_scales_with_iterations(tab_detector, interpreted):
    rows, _, _ = interpreted
    short = TabularInterpConfig(k=6, max_iter=5)
    long = TabularInterpConfig(k=6, max_iter=10)
    t_short = benchmark_runtime(
        lambda x: interpret_tabular(x, tab_detector, short), rows[:8])["mean_s"]
    t_long = benchmark_runtime(
        lambda x: interpret_tabular(x, tab_detector, long), rows[:8])["mean_s"]
    ratio = t_long / t_short
    assert 1.0 <= ratio <= 3.0     # roughly doubles, generous margin


def test_eval_report_roundtrip():
    rep = EvalReport({1: 0.5, 5: 0.9}, 0.92, {"noise": 0.88},
                     {"total_s": 1.0, "mean_s": 0.1})
    text = save_artifact(rep)
    clone = load_artifact(text)
    assert save_artifact(clone) == text
    assert "lfr@k=5" in rep.table()


def test_eval_report_rejects_bad_rates():
    with pytest.raises(DataFormatError):
        EvalReport({1: 1.5})
