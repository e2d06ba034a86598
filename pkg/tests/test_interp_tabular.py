import numpy as np
import pytest

from deepaid.detectors import ReconstructionDetector, train_reconstruction
from deepaid.errors import DataFormatError, NotAnomalyError
from deepaid.interp_tabular import (TabularInterpConfig, interpret_tabular,
                                    objective_dtab, select_effective_dims)


@pytest.fixture(scope="module")
def toy_line_detector():
    rng = np.random.default_rng(3)
    t = rng.uniform(0.1, 0.9, 300)
    pts = np.clip(np.stack([t, t + rng.normal(0, 0.02, 300)], 1), 0, 1)
    return train_reconstruction(pts, [4], epochs=300, seed=2), pts


def test_objective_matches_direct_recomputation(tab_detector, tab_bench, rng):
    cfg = TabularInterpConfig(k=5, eps=0.001)
    for _ in range(5):
        x_star = rng.random(40)
        x_anom = rng.random(40)
        val = objective_dtab(x_star, x_anom, tab_detector, cfg)
        err = float(tab_detector.errors(x_star[None, :])[0])
        expected = max(err - (tab_detector.threshold - 0.001), 0.0) \
            + cfg.lam * float(np.sqrt(np.sum((x_star - x_anom) ** 2)))
        assert val == pytest.approx(expected, abs=1e-12)


def test_objective_zero_fidelity_iff_below_margin(tab_detector, tab_bench):
    cfg = TabularInterpConfig(k=5)
    x = tab_bench.normal_rows[0]
    # a normal training row's error should sit below threshold - eps
    val = objective_dtab(x, x, tab_detector, cfg)
    assert val == 0.0  # distance term vanishes at x* = x°


def test_objective_at_anomaly_is_error_slack(tab_detector, tab_bench):
    cfg = TabularInterpConfig(k=5, eps=0.001)
    x = tab_bench.all_anomaly_rows()[0]
    err = float(tab_detector.errors(x[None, :])[0])
    val = objective_dtab(x, x, tab_detector, cfg)
    assert val == pytest.approx(err - (tab_detector.threshold - 0.001), abs=1e-12)


def test_select_effective_dims_examples():
    assert select_effective_dims(np.array([1.0, 1.0]),
                                 np.array([0.1, 0.9]), 1).tolist() == [1]
    # all-zero products tie-break to the lowest index
    assert select_effective_dims(np.zeros(4), np.ones(4), 1).tolist() == [0]


def test_select_effective_dims_matches_brute_force(rng):
    for _ in range(20):
        grad = rng.normal(size=15)
        x = rng.random(15)
        got = select_effective_dims(grad, x, 3)
        products = grad * x
        best = sorted(range(15), key=lambda i: (-products[i], i))[:3]
        assert got.tolist() == best


def test_two_dim_toy_matches_grid_oracle(toy_line_detector):
    det, _ = toy_line_detector
    x0 = np.array([0.1, 0.9])
    assert det.score(x0)[1]
    cfg = TabularInterpConfig(k=1)
    interp = interpret_tabular(x0, det, cfg)
    assert len(interp.entries) == 1
    assert not det.score(interp.reference)[1]

    # brute-force grid over single-dimension edits at resolution 0.01
    best = (np.inf, None)
    for d in range(2):
        for v in np.arange(0.0, 1.0001, 0.01):
            cand = x0.copy()
            cand[d] = v
            if det.score(cand)[1]:
                continue
            val = objective_dtab(cand, x0, det, cfg)
            if val < best[0]:
                best = (val, d)
    assert interp.entries[0].dim == best[1]
    assert objective_dtab(interp.reference, x0, det, cfg) <= best[0] + 1e-3


def test_determinism_without_noise(tab_detector, tab_bench):
    x = tab_bench.all_anomaly_rows()[0]
    cfg = TabularInterpConfig(k=6)
    a = interpret_tabular(x, tab_detector, cfg)
    b = interpret_tabular(x, tab_detector, cfg)
    assert a.dims == b.dims
    assert np.array_equal(a.reference, b.reference)


def test_interpretation_contract(tab_detector, tab_bench):
    cfg = TabularInterpConfig(k=6)
    for x in tab_bench.all_anomaly_rows()[:10]:
        interp = interpret_tabular(x, tab_detector, cfg)
        assert interp.k == 6
        diff = np.nonzero(interp.reference != interp.anomaly)[0]
        assert set(diff.tolist()) == set(interp.dims)       # exactly K differ
        effs = [e.effectiveness for e in interp.entries]
        assert effs == sorted(effs, reverse=True)
        for e in interp.entries:
            assert 0.0 < e.reference_value < 1.0            # strictly inside


def test_fidelity_flips_label(tab_detector, tab_bench):
    cfg = TabularInterpConfig(k=6)
    flips = 0
    rows = tab_bench.all_anomaly_rows()[:20]
    for x in rows:
        interp = interpret_tabular(x, tab_detector, cfg)
        flips += not tab_detector.score(interp.reference)[1]
    assert flips >= 0.9 * len(rows)


def test_rejects_non_anomalous_input(tab_bench):
    # identity autoencoder with a huge threshold flags nothing
    det = ReconstructionDetector([np.eye(40)], [np.zeros(40)], [0], 5.0, 0.995)
    with pytest.raises(NotAnomalyError):
        interpret_tabular(tab_bench.normal_rows[0], det,
                          TabularInterpConfig(k=2))


def test_noise_initialization_reproducible_per_seed(tab_detector, tab_bench):
    x = tab_bench.all_anomaly_rows()[1]
    cfg = TabularInterpConfig(k=6, sigma_n=0.02)
    a = interpret_tabular(x, tab_detector, cfg, seed=11)
    b = interpret_tabular(x, tab_detector, cfg, seed=11)
    assert a.dims == b.dims and np.array_equal(a.reference, b.reference)


def test_replace_mode_runs_and_flags(tab_detector, tab_bench):
    x = tab_bench.all_anomaly_rows()[2]
    cfg = TabularInterpConfig(k=4, update_mode="replace")
    interp = interpret_tabular(x, tab_detector, cfg)
    assert interp.k <= 4
    assert isinstance(interp.converged, bool)


def test_categorical_dims_snap_to_codes(toy_line_detector):
    det, _ = toy_line_detector
    x0 = np.array([0.1, 0.9])
    codes = np.arange(0.0, 1.01, 0.25)
    cfg = TabularInterpConfig(k=1, categorical={0: codes, 1: codes})
    interp = interpret_tabular(x0, det, cfg)
    for e in interp.entries:
        assert min(abs(codes - e.reference_value)) < 1e-12


def test_config_validation():
    with pytest.raises(DataFormatError):
        TabularInterpConfig(lam=0.0)
    with pytest.raises(DataFormatError):
        TabularInterpConfig(bounds=(1.0, 0.0))
    with pytest.raises(DataFormatError):
        TabularInterpConfig(sigma_n=-1.0)
    with pytest.raises(DataFormatError):
        TabularInterpConfig(update_mode="banana")


def test_k_larger_than_dims_rejected(tab_detector, tab_bench):
    with pytest.raises(DataFormatError, match="exceeds"):
        interpret_tabular(tab_bench.all_anomaly_rows()[0], tab_detector,
                          TabularInterpConfig(k=41))
