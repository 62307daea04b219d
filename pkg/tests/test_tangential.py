import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intrinsic_dim.datasets import DatasetSpec, generate
from intrinsic_dim.errors import DegenerateError, ParameterError
from intrinsic_dim.geometry import PointCloud
from intrinsic_dim.tangential import (THRESHOLDS, ThresholdMethod, broken_stick_lengths, cone_rank,
                                      conical_dimension, local_pca_spectrum, lpca_estimate, lpca_local,
                                      participation_ratio, threshold_dimension)


def test_segment_has_one_positive_eigenvalue():
    t = np.linspace(0, 1, 7)[:, None]
    spec = local_pca_spectrum(t * np.array([[1.0, 2.0, -1.0]]))
    assert spec.values.size == 3
    assert np.count_nonzero(spec.values > 1e-12) == 1


def test_cross_spectrum():
    spec = local_pca_spectrum([[1, 0], [-1, 0], [0, 1], [0, -1]])
    assert np.allclose(spec.values, [2 / 3, 2 / 3], atol=1e-14)


def test_spectrum_rotation_invariant():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(12, 4))
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert np.allclose(local_pca_spectrum(P).values, local_pca_spectrum(P @ Q.T + 5).values, atol=1e-10)


def test_spectrum_padding_and_degenerate():
    spec = local_pca_spectrum(np.random.default_rng(1).normal(size=(3, 6)))
    assert spec.values.size == 6 and np.all(spec.values[2:] < 1e-12)
    flat = local_pca_spectrum(np.ones((4, 3)))
    assert flat.degenerate and threshold_dimension(flat) == 0
    with pytest.raises(ParameterError):
        local_pca_spectrum([[0.0, 1.0]])


def test_threshold_examples():
    assert threshold_dimension([10, 5, 0.4], ThresholdMethod("fo", alpha=0.05)) == 2
    assert threshold_dimension([3, 2, 1], ThresholdMethod("kaiser", proportion=1.0)) == 1
    assert np.allclose(broken_stick_lengths(3), [11 / 18, 5 / 18, 2 / 18])
    assert threshold_dimension([0.7, 0.2, 0.1], ThresholdMethod("brokenstick")) == 1
    assert participation_ratio([1, 1, 0]) == 2.0
    assert threshold_dimension([1, 1, 0], ThresholdMethod("pr")) == 2


def test_gap_and_ratio_thresholds():
    lam = [100.0, 90.0, 1.0, 0.5]
    assert threshold_dimension(lam, ThresholdMethod("maxgap")) == 2
    assert threshold_dimension([4.0, 1.0, 0.0], ThresholdMethod("maxgap")) == 1  # zero tail excluded
    assert threshold_dimension(lam, ThresholdMethod("fan", gap=10.0, cumulative=0.8)) == 2
    # cumulative share 100/191.5 = 0.52 < 0.95, 190/191.5 = 0.992 > 0.95
    assert threshold_dimension(lam, ThresholdMethod("ratio", alpha=0.05)) == 2


def test_threshold_method_validation():
    with pytest.raises(ParameterError):
        ThresholdMethod("minka")
    with pytest.raises(ParameterError):
        ThresholdMethod("fo", alpha=1.5)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8), st.integers(-20, 20),
       st.sampled_from(THRESHOLDS))
def test_threshold_scale_invariant(lam, power, kind):
    # powers of two scale exactly in floating point, so every comparison is preserved
    lam = np.sort(np.array(lam))[::-1]
    m = ThresholdMethod(kind)
    d = threshold_dimension(lam, m)
    assert 0 <= d <= lam.size
    assert threshold_dimension(lam * 2.0**power, m) == d


def test_threshold_scale_invariant_generic_factor():
    rng = np.random.default_rng(2)
    for _ in range(200):
        lam = np.sort(rng.exponential(size=6) ** 3)[::-1]
        c = rng.uniform(0.01, 100)
        for kind in THRESHOLDS:
            m = ThresholdMethod(kind)
            assert threshold_dimension(lam * c, m) == threshold_dimension(lam, m)


def test_flat_data_is_exact():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 7))
    cloud = PointCloud(rng.uniform(size=(400, 3)) @ A + 1.0)
    rep = lpca_estimate(cloud, 30, ThresholdMethod("fo"))
    assert rep.estimate == 3.0 and np.all(rep.locals == 3)
    assert "throttled" not in rep.flags


def test_local_bound_and_throttle_flag():
    cloud = generate(DatasetSpec("Sphere", 300, 0, {"d": 10}))
    for k in (3, 6, 20):
        rep = lpca_estimate(cloud, k, ThresholdMethod("fo"))
        assert np.all(rep.locals <= min(k, 11))
        assert ("throttled" in rep.flags) == (rep.estimate >= k - 1)


def test_eps_neighbourhood():
    cloud = PointCloud(np.random.default_rng(4).uniform(size=(300, 2)) @ np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    rep = lpca_estimate(cloud, 15, ThresholdMethod("fo"), nbhd="eps")
    assert rep.diagnostics["eps"] > 0
    assert rep.estimate == pytest.approx(2.0, abs=0.05)
    local, eps, _ = lpca_local(cloud, 15, ThresholdMethod("fo"), "eps", eps=1e-9)
    assert np.all(np.isnan(local))
    with pytest.raises(DegenerateError):
        lpca_estimate(cloud, 15, nbhd="eps", eps=1e-9)


def test_cone_examples():
    cross = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    assert cone_rank(cross)[:2] == (2, 4)
    assert cone_rank(np.array([[0.6, 0.8]]))[:2] == (1, 1)
    # all directions inside a narrow cone: no non-acute pair
    rng = np.random.default_rng(5)
    U = np.array([1.0, 0, 0]) + 0.2 * rng.normal(size=(8, 3))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    assert cone_rank(U)[:2] == (1, 1)


def test_conical_on_cloud_examples():
    star = PointCloud([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])
    rep = conical_dimension(star, 4)
    assert rep.locals[0] == 2
    pair = PointCloud([[0.0, 0.0], [1.0, 0.0]])
    assert conical_dimension(pair, 1).estimate == 1.0
    dup = PointCloud([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    assert conical_dimension(dup, 2).diagnostics["zero_directions_skipped"] == 2


def brute_force_subset(U):
    G = U @ U.T <= 1e-12
    n = len(U)
    for size in range(n, 0, -1):
        for sub in itertools.combinations(range(n), size):
            if all(G[a, b] for a, b in itertools.combinations(sub, 2)):
                return size
    return 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10), st.integers(2, 4))
def test_cone_exact_matches_brute_force(seed, n, dim):
    U = np.random.default_rng(seed).normal(size=(n, dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    rank, size, approx = cone_rank(U)
    assert not approx
    assert size == brute_force_subset(U)
    assert 1 <= rank <= min(size, dim)


def test_cone_greedy_is_flagged_and_bounded():
    rng = np.random.default_rng(6)
    U = rng.normal(size=(30, 3))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    rank, size, approx = cone_rank(U)
    assert approx and rank <= 3 and size <= 30
    exact = cone_rank(U, exact_limit=30)
    assert not exact[2] and size <= exact[1]


def test_conical_local_bound():
    cloud = generate(DatasetSpec("Sphere", 200, 1, {"d": 4}))
    rep = conical_dimension(cloud, 8)
    assert np.all(rep.locals <= 8) and np.all(rep.locals >= 1)
    assert rep.diagnostics["mean_subset_size"] >= rep.estimate
