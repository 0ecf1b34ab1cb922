import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phased_dmd.schedule import RADICAND_TOL, NoiseSchedule, get_schedule

RF = get_schedule("rectified_flow")
VP = get_schedule("variance_preserving_cosine")
BOTH = [RF, VP]


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        NoiseSchedule("ddpm")


@pytest.mark.parametrize("t, expected", [(0.0, (1.0, 0.0)), (1.0, (0.0, 1.0)), (0.25, (0.75, 0.25))])
def test_rectified_flow_coeffs(t, expected):
    assert RF.coeffs(t) == expected


@pytest.mark.parametrize("sch", BOTH, ids=lambda s: s.kind)
def test_endpoints(sch):
    a0, s0 = sch.coeffs(0.0)
    a1, s1 = sch.coeffs(1.0)
    assert (a0, s0) == (1.0, 0.0)
    assert a1 <= 1e-6 and s1 == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_out_of_range_time_rejected(t):
    with pytest.raises(ValueError):
        RF.coeffs(t)


@pytest.mark.parametrize("sch", BOTH, ids=lambda s: s.kind)
def test_snr_strictly_decreasing(sch):
    t = np.linspace(0.0, 1.0, 10_000)[1:-1]
    assert np.all(np.diff(sch.snr(t)) < 0)
    alpha, sigma = sch.coeffs(t)
    assert np.all(alpha > 0) and np.all(sigma > 0)


def test_bridge_examples():
    br = RF.bridge_coeffs(0.5, 0.75)
    assert br.alpha_ts == pytest.approx(0.5, abs=1e-15)
    # 0.75^2 - 0.5^2 * 0.5^2 = 0.5
    assert br.sigma_ts == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert RF.bridge_coeffs(0.5, 0.5).alpha_ts == 1.0
    assert RF.bridge_coeffs(0.5, 0.5).sigma_ts == 0.0
    for t in (0.1, 0.6, 1.0):
        br = RF.bridge_coeffs(0.0, t)
        assert (br.alpha_ts, br.sigma_ts) == pytest.approx(RF.coeffs(t), abs=1e-15)


@pytest.mark.parametrize("sch", BOTH, ids=lambda s: s.kind)
def test_identity_bridge_is_exact(sch):
    s = np.linspace(0.0, 0.99, 101)
    br = sch.bridge_coeffs(s, s)
    assert np.all(br.alpha_ts == 1.0) and np.all(br.sigma_ts == 0.0)


def test_bridge_rejects_reversed_times_and_dead_signal():
    with pytest.raises(ValueError):
        RF.bridge_coeffs(0.6, 0.5)
    with pytest.raises(ValueError):
        RF.bridge_coeffs(1.0, 1.0)


class _RatioSchedule(NoiseSchedule):
    """alpha = 1 - t with sigma / alpha following ``ratio`` (a deliberately broken schedule)."""

    def __init__(self, ratio):
        object.__setattr__(self, "kind", "variance_preserving_cosine")
        object.__setattr__(self, "ratio", ratio)

    def coeffs(self, t):
        t = np.asarray(t, dtype=np.float64)
        alpha = 1.0 - t
        sigma = alpha * self.ratio(t)
        return (float(alpha), float(sigma)) if t.ndim == 0 else (alpha, sigma)


def test_bridge_rejects_clearly_negative_radicand():
    bad = _RatioSchedule(lambda t: 0.5 * (1.0 - 0.5 * t))
    with pytest.raises(ValueError, match="negative bridge variance"):
        bad.bridge_coeffs(0.2, 0.8)


def test_bridge_clamps_rounding_level_radicand():
    almost = _RatioSchedule(lambda t: 0.5 * (1.0 - 1e-13 * t))
    alpha_s, sigma_s = almost.coeffs(0.2)
    alpha_t, sigma_t = almost.coeffs(0.8)
    radicand = sigma_t ** 2 - (alpha_t / alpha_s) ** 2 * sigma_s ** 2
    assert -RADICAND_TOL < radicand < 0
    assert almost.bridge_coeffs(0.2, 0.8).sigma_ts == 0.0


@pytest.mark.parametrize("sch", BOTH, ids=lambda s: s.kind)
def test_semigroup_on_dense_grid(sch):
    g = np.linspace(0.0, 0.999, 50)
    r, s, t = np.meshgrid(g, g, g, indexing="ij")
    keep = (r <= s) & (s <= t)
    r, s, t = r[keep], s[keep], t[keep]
    ts = sch.bridge_coeffs(s, t)
    sr = sch.bridge_coeffs(r, s)
    tr = sch.bridge_coeffs(r, t)
    assert np.max(np.abs(ts.alpha_ts * sr.alpha_ts - tr.alpha_ts)) <= 1e-12
    lhs = tr.sigma_ts ** 2
    rhs = ts.sigma_ts ** 2 + ts.alpha_ts ** 2 * sr.sigma_ts ** 2
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 0.999), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_bridge_variance_nonnegative(s, u, v):
    for sch in BOTH:
        t = s + (0.999 - s) * u
        mid = s + (t - s) * v
        br = sch.bridge_coeffs(s, t)
        assert br.sigma_ts >= 0.0
        a = sch.bridge_coeffs(s, mid).alpha_ts * sch.bridge_coeffs(mid, t).alpha_ts
        assert a == pytest.approx(br.alpha_ts, abs=1e-12)


def test_diffuse_examples():
    assert RF.diffuse(np.array([[2.0]]), np.array([[0.0]]), 0.5)[0, 0] == 1.0
    x0 = np.random.default_rng(0).standard_normal((5, 2))
    e = np.random.default_rng(1).standard_normal((5, 2))
    np.testing.assert_array_equal(RF.diffuse(x0, e, 0.0), x0)
    np.testing.assert_array_equal(RF.diffuse(x0, e, 1.0), e)
    with pytest.raises(ValueError):
        RF.diffuse(x0, e[:, :1], 0.5)


def test_diffuse_from_examples():
    one, zero = np.array([[1.0]]), np.array([[0.0]])
    assert RF.diffuse_from(one, zero, 0.5, 0.75)[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert RF.diffuse_from(zero, one, 0.5, 1.0)[0, 0] == pytest.approx(1.0, abs=1e-15)
    xs = np.random.default_rng(0).standard_normal((4, 1))
    np.testing.assert_array_equal(RF.diffuse_from(xs, np.ones_like(xs), 0.3, 0.3), xs)


def test_per_sample_times():
    x0 = np.ones((3, 2))
    e = np.zeros((3, 2))
    out = RF.diffuse(x0, e, np.array([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(out, [[1, 1], [0.5, 0.5], [0, 0]])


@pytest.mark.parametrize("sch", BOTH, ids=lambda s: s.kind)
def test_distributional_consistency(sch):
    n = 100_000
    rng = np.random.default_rng(7)
    x0 = np.full((n, 1), 1.3)
    s, t = 0.35, 0.8
    two_hop = sch.diffuse_from(sch.diffuse(x0, rng.standard_normal((n, 1)), s), rng.standard_normal((n, 1)), s, t)
    one_hop = sch.diffuse(x0, rng.standard_normal((n, 1)), t)
    for a, b in ((two_hop, one_hop),):
        se_mean = math.sqrt(a.var() / n + b.var() / n)
        assert abs(a.mean() - b.mean()) < 3 * se_mean
        # var of the sample variance for a Gaussian is 2 sigma^4 / (n - 1)
        se_var = math.sqrt(2 * a.var() ** 2 / (n - 1) + 2 * b.var() ** 2 / (n - 1))
        assert abs(a.var() - b.var()) < 3 * se_var
