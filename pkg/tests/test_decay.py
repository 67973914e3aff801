import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gruwe.decay import (
    DecayParams,
    DecayRegime,
    apply_decay,
    classify_regimes,
    gamma,
    gamma_backward,
    lipschitz_constant,
)
from gruwe.errors import DomainError

real = st.floats(-5, 5, allow_nan=False)
dt_s = st.floats(0, 100, allow_nan=False)


def dp(w, b):
    return DecayParams(np.atleast_1d(np.asarray(w, float)), np.atleast_1d(np.asarray(b, float)))


def test_gamma_closed_form():
    assert gamma(dp(0.5, 0.0), 2.0)[0] == pytest.approx(0.3678794, abs=1e-7)


def test_gamma_no_decay_clamp():
    p = dp(-1.0, 1.0)
    assert gamma(p, 0.0)[0] == pytest.approx(math.exp(-1))
    assert gamma(p, 2.0)[0] == 1.0


def test_gamma_constant_case_nonpositive_bias():
    p = dp(0.0, -1.0)
    for dt in (0.0, 1.0, 1e6):
        assert gamma(p, dt)[0] == 1.0


def test_gamma_negative_dt():
    with pytest.raises(DomainError):
        gamma(dp(1.0, 0.0), -1e-9)


def test_gamma_vector_of_dts_shape():
    p = dp([1.0, 0.0, -1.0], [0.0, 0.5, 0.2])
    out = gamma(p, np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out[1, 0], gamma(p, 2.0))


def test_backward_dead_branch():
    gw, gb, gdt = gamma_backward(dp(-1.0, 0.0), 3.0, np.ones(1))
    assert gw[0] == 0.0 and gb[0] == 0.0 and gdt == 0.0


def test_backward_closed_form():
    gw, gb, _ = gamma_backward(dp(0.5, 0.0), 2.0, np.ones(1))
    assert gw[0] == pytest.approx(-2 * math.exp(-1))
    assert gb[0] == pytest.approx(-math.exp(-1))


def test_backward_zero_at_kink():
    # w*dt + b == 0 exactly
    gw, gb, _ = gamma_backward(dp(1.0, -2.0), 2.0, np.ones(1))
    assert gw[0] == 0.0 and gb[0] == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    H = 6
    w, b = rng.normal(size=H), rng.normal(size=H)
    dt = float(rng.uniform(0.1, 3.0))
    up = rng.normal(size=H)
    pre = w * dt + b
    if np.min(np.abs(pre)) < 1e-3:
        pytest.skip("too close to the kink for a finite difference")
    gw, gb, gdt = gamma_backward(dp(w, b), dt, up)
    h = 1e-5

    def f(w_, b_, dt_):
        return float(up @ gamma(dp(w_, b_), dt_))

    for i in range(H):
        e = np.zeros(H)
        e[i] = h
        fw = (f(w + e, b, dt) - f(w - e, b, dt)) / (2 * h)
        fb = (f(w, b + e, dt) - f(w, b - e, dt)) / (2 * h)
        for an, fd in ((gw[i], fw), (gb[i], fb)):
            assert abs(an - fd) <= 1e-6 * max(abs(an), abs(fd), 1e-8)
    fdt = (f(w, b, dt + h) - f(w, b, dt - h)) / (2 * h)
    assert abs(float(gdt) - fdt) <= 1e-6 * max(abs(fdt), 1e-8)


def test_apply_decay_examples():
    h = np.array([-0.4, 0.8])
    np.testing.assert_array_equal(apply_decay(np.ones(2), h), h)
    np.testing.assert_array_equal(apply_decay(np.array([0.3, 0.9]), np.zeros(2)), [0, 0])
    np.testing.assert_array_equal(apply_decay(np.array([0.5, 1.0]), h), [-0.2, 0.8])


def test_classify_three_cases():
    assert classify_regimes(dp([1.0, 0.0, -1.0], [0, 0, 0]), 1e-6) == [
        DecayRegime.STATE_RESET, DecayRegime.CONSTANT_DECAY, DecayRegime.NO_DECAY]
    assert classify_regimes(dp(5e-7, 0.0), 1e-6) == [DecayRegime.CONSTANT_DECAY]
    assert set(classify_regimes(dp([0.1, 2.0, 7.0], [0, 0, 0]))) == {DecayRegime.STATE_RESET}


def test_lipschitz_values():
    assert lipschitz_constant(1.0, 0.0) == 1.0
    assert lipschitz_constant(2.0, 1.0) == pytest.approx(0.7357589, abs=1e-7)
    assert lipschitz_constant(0.5, -1.0) == pytest.approx(1.3591409, abs=1e-7)


@pytest.mark.parametrize("w", [0.0, -0.5])
def test_lipschitz_requires_positive_weight(w):
    with pytest.raises(DomainError):
        lipschitz_constant(w, 0.0)


def test_lipschitz_against_difference_quotients():
    # w=0.5, b=-1: the largest difference quotient approaches the constant
    # from below as the pair closes in on the kink at dt = 2
    p = dp(0.5, -1.0)
    a = np.linspace(2.0, 2.01, 1001)
    q = np.abs(np.diff(gamma(p, a)[:, 0])) / np.diff(a)
    L = lipschitz_constant(0.5, -1.0)
    assert np.all(q <= 0.5 + 1e-9)  # above the kink the slope is at most w
    assert np.all(q <= L)


@given(real, real, dt_s)
def test_boundedness(w, b, dt):
    g = gamma(dp(w, b), dt)[0]
    assert 0.0 <= g <= 1.0
    if w * dt + b < 700:
        assert g > 0.0


@given(st.floats(1e-3, 5), real, dt_s, dt_s)
def test_monotone_when_decaying(w, b, t1, t2):
    lo, hi = sorted((t1, t2))
    p = dp(w, b)
    assert gamma(p, lo)[0] >= gamma(p, hi)[0]


@given(st.floats(1e-3, 5), real, dt_s, dt_s)
def test_lipschitz_property(w, b, t1, t2):
    p = dp(w, b)
    diff = abs(gamma(p, t1)[0] - gamma(p, t2)[0])
    assert diff <= lipschitz_constant(w, b) * abs(t1 - t2) + 1e-12


def test_case1_state_reset_limit():
    assert gamma(dp(1.0, 0.0), 50.0)[0] < 1e-20


@given(real, dt_s)
def test_case2_constant(b, dt):
    p = dp(0.0, b)
    assert gamma(p, dt)[0] == gamma(p, 0.0)[0]
    assert gamma(p, dt)[0] == pytest.approx(math.exp(-max(0.0, b)), rel=1e-15)


@given(st.floats(-5, -1e-3), st.floats(-5, 5), st.floats(0, 100))
def test_case3_no_decay(w, b, extra):
    start = max(0.0, -b / w) if b > 0 else 0.0
    assert gamma(dp(w, b), start + extra)[0] == 1.0


@given(real, real, dt_s, st.floats(-1, 1))
def test_decayed_state_moves_toward_zero(w, b, dt, h):
    g = apply_decay(gamma(dp(w, b), dt), np.array([h]))[0]
    if h > 0:
        assert g <= h
    elif h < 0:
        assert g >= h
    assert abs(g) <= abs(h)
