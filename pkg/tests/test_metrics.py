import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from b2s import metrics
from b2s.metrics import (cer, collapse_unvoiced, dtw_exact, dtw_mse, fastdtw,
                         levenshtein)
from b2s.suite import oracle_dtw, oracle_levenshtein


def test_cer_identity():
    assert cer([1, 2, 3], [1, 2, 3]) == 0.0


def test_cer_empty_hypothesis():
    assert cer([], [1, 2, 3, 4, 5]) == 1.0


def test_cer_empty_reference_rejected():
    with pytest.raises(ValueError):
        cer([1], [])


def test_cer_against_quadratic_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        hyp = rng.integers(0, 5, size=int(rng.integers(0, 12))).tolist()
        ref = rng.integers(0, 5, size=int(rng.integers(1, 12))).tolist()
        assert levenshtein(hyp, ref) == oracle_levenshtein(hyp, ref)


def test_cer_relabeling_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        hyp = rng.integers(0, 6, size=8).tolist()
        ref = rng.integers(0, 6, size=7).tolist()
        relabel = {i: 100 - i for i in range(6)}
        assert cer(hyp, ref) == cer([relabel[h] for h in hyp],
                                    [relabel[r] for r in ref])


def test_cer_upper_bound():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.integers(0, 3, size=int(rng.integers(0, 10))).tolist()
        b = rng.integers(0, 3, size=int(rng.integers(1, 10))).tolist()
        assert cer(a, b) <= (len(a) + len(b)) / len(b)


def test_collapse_identity_when_loud():
    frames = np.ones((5, 3)) * 4.0
    out = collapse_unvoiced(frames, 1.0)
    assert np.array_equal(out, frames)


def test_collapse_all_quiet():
    frames = np.full((6, 3), 1e-4)
    out = collapse_unvoiced(frames, 1.0)
    assert out.shape == (1, 3)
    assert np.allclose(out[0], frames.mean(axis=0))


def test_collapse_constructed_runs():
    loud = np.ones((1, 2)) * 5.0
    quiet = np.ones((1, 2)) * 1e-3
    frames = np.concatenate([loud] * 3 + [quiet] * 5 + [loud] * 2)
    out = collapse_unvoiced(frames, 0.5)
    assert out.shape[0] == 6      # 3 loud + 1 collapsed + 2 loud


def test_fastdtw_identity():
    a = np.random.default_rng(3).normal(size=(9, 4))
    cost, path = fastdtw(a, a, radius=10)
    assert cost == 0.0
    assert path == [(i, i) for i in range(9)]


def test_fastdtw_equals_oracle_when_radius_large():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = rng.normal(size=(int(rng.integers(1, 21)), 3))
        b = rng.normal(size=(int(rng.integers(1, 21)), 3))
        cost, path = fastdtw(a, b, radius=25)
        assert cost == pytest.approx(oracle_dtw(a, b), abs=1e-9)


def test_fastdtw_radius1_never_undershoots():
    rng = np.random.default_rng(5)
    for _ in range(60):
        a = rng.normal(size=(int(rng.integers(2, 50)), 3))
        b = rng.normal(size=(int(rng.integers(2, 50)), 3))
        cost, _ = fastdtw(a, b, radius=1)
        assert cost >= oracle_dtw(a, b) - 1e-9


def test_dtw_symmetry_equal_lengths():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(12, 3))
    b = rng.normal(size=(12, 3))
    ca, _ = fastdtw(a, b, radius=20)
    cb, _ = fastdtw(b, a, radius=20)
    assert ca == pytest.approx(cb, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=25), st.integers(min_value=1, max_value=25),
       st.integers(min_value=0, max_value=3), st.integers(min_value=0, max_value=2**31 - 1))
def test_path_validity_property(n, m, radius, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 2))
    b = rng.normal(size=(m, 2))
    cost, path = fastdtw(a, b, radius=radius)
    assert path[0] == (0, 0)
    assert path[-1] == (n - 1, m - 1)
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in ((1, 0), (0, 1), (1, 1))
    assert cost >= 0.0


def test_dtw_mse_identity():
    a = np.random.default_rng(7).normal(size=(14, 5))
    assert dtw_mse(a, a, energy_threshold=0.0) == 0.0


def test_dtw_mse_constant_offset():
    # strictly increasing rows force the diagonal alignment
    ref = np.arange(10, dtype=np.float64)[:, None] * np.ones((1, 4)) * 3.0
    delta = 0.25
    pred = ref + delta
    got = dtw_mse(pred, ref, energy_threshold=0.0)
    assert got == pytest.approx(delta**2, rel=1e-9)
    # cross-check against the independent full-table oracle
    assert oracle_dtw(pred, ref) / (10 * 4) == pytest.approx(delta**2, rel=1e-9)


def test_dtw_mse_uses_exact_for_short_sequences():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(20, 3))
    b = rng.normal(size=(25, 3))
    got = dtw_mse(a, b, energy_threshold=0.0, radius=0)
    cost, path = dtw_exact(a, b)
    assert got == pytest.approx(cost / (len(path) * 3), rel=1e-12)


def test_metric_report_aggregation():
    rep = metrics.MetricReport.from_samples("x", [0.0, 0.5], [1.0, 0.0], [0.1, 0.3])
    assert rep.cer == 0.25
    assert rep.cer_ex == 0.5
    assert rep.dtw_mse == pytest.approx(0.2)
    assert rep.n == 2
