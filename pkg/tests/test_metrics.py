import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppcr.geometry import RigidTransform, apply, compose, params_to_transform
from ppcr.metrics import DegenerateCloudError, aggregate, mse_to_ground_truth, resolution


def naive_mse(src, a, b):
    total = 0.0
    for p in src:
        d = apply(a, p) - apply(b, p)
        total += float(d @ d)
    return total / len(src)


def test_mse_to_ground_truth_examples():
    src = np.random.default_rng(0).random((40, 3))
    t = params_to_transform([0.2, 0.1, -0.3, 1, 2, 3])
    assert mse_to_ground_truth(src, t, t) == 0.0
    shifted = compose(t, RigidTransform.from_translation([0, 0, 0.1]))
    assert mse_to_ground_truth(src, shifted, t) == pytest.approx(0.01, rel=1e-12)


def test_mse_to_ground_truth_naive_oracle():
    rng = np.random.default_rng(1)
    src = rng.normal(size=(60, 3))
    for _ in range(5):
        a, b = params_to_transform(rng.normal(size=6)), params_to_transform(rng.normal(size=6))
        assert mse_to_ground_truth(src, a, b) == pytest.approx(naive_mse(src, a, b), rel=1e-12)


def test_resolution_examples():
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    assert resolution(g) == 1.0
    assert resolution([[0, 0, 0], [0.5, 0, 0]]) == 0.5
    with pytest.raises(DegenerateCloudError):
        resolution([[1.0, 2.0, 3.0]])


def test_resolution_skips_duplicates():
    pts = np.array([[0, 0, 0], [0, 0, 0], [0, 0, 0], [2.0, 0, 0]])
    assert resolution(pts) == 2.0


def test_resolution_brute_force():
    pts = np.random.default_rng(2).random((500, 3))
    nn = []
    for i, p in enumerate(pts):
        d = np.sqrt(((pts - p) ** 2).sum(axis=1))
        d[i] = np.inf
        nn.append(d.min())
    assert resolution(pts) == pytest.approx(float(np.median(nn)), rel=1e-12)


def test_resolution_rigid_invariance():
    pts = np.random.default_rng(3).random((300, 3))
    t = params_to_transform([0.5, -1.0, 0.2, 10, -4, 3])
    assert resolution(apply(t, pts)) == pytest.approx(resolution(pts), rel=1e-9)


def test_aggregate_examples():
    s = aggregate([5.0], [7])
    assert (s.median, s.q75, s.q95, s.mean_iterations) == (5.0, 5.0, 5.0, 7.0)
    assert aggregate([1, 2, 3, 4], [1, 1, 1, 1]).median == 2.5
    with pytest.raises(ValueError):
        aggregate([], [])


def sorted_quantile(values, q):
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def test_aggregate_sort_oracle():
    v = list(np.random.default_rng(4).random(100))
    s = aggregate(v, range(100))
    assert s.median == pytest.approx(sorted_quantile(v, 0.5), rel=1e-12)
    assert s.q75 == pytest.approx(sorted_quantile(v, 0.75), rel=1e-12)
    assert s.q95 == pytest.approx(sorted_quantile(v, 0.95), rel=1e-12)
    assert s.mean_iterations == 49.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.randoms(use_true_random=False))
def test_aggregate_monotone_and_permutation_invariant(values, rnd):
    s = aggregate(values, [1] * len(values))
    assert s.median <= s.q75 <= s.q95
    shuffled = list(values)
    rnd.shuffle(shuffled)
    s2 = aggregate(shuffled, [1] * len(values))
    assert (s.median, s.q75, s.q95) == (s2.median, s2.q75, s2.q95)
