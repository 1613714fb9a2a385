import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksmpc.koopman import (
    ConditioningWarning,
    KoopmanModel,
    LiftingDictionary,
    NotReadyError,
    ObservationBuffer,
    ObstacleTracker,
    extract_position,
    fit,
    lift,
    min_pairs,
    predict,
)

T = 0.01
finite = st.floats(-50, 50, allow_nan=False)


def circle(r, omega, n, k0=0):
    k = np.arange(k0, k0 + n)
    return r * np.column_stack([np.cos(omega * k * T), np.sin(omega * k * T)])


def test_lift_examples():
    assert np.array_equal(lift((0.0, 0.0)), [0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0])
    a = math.pi / 2
    g = lift((a, 0.0))
    assert g[:6] == pytest.approx([a, a * a, 1.0, 0.0, a * a, 0.0], abs=1e-15)
    assert len(lift((1.0, 2.0, 3.0))) == 18


def test_lift_rejects_bad_dimension():
    with pytest.raises(ValueError):
        lift((1.0,))
    with pytest.raises(ValueError):
        lift((1.0, 2.0, 3.0, 4.0))


def test_extract_examples():
    g = np.zeros(12)
    g[0], g[6] = 3.0, -2.0
    assert np.array_equal(extract_position(g), [3.0, -2.0])
    with pytest.raises(ValueError):
        extract_position(np.zeros(11))
    with pytest.raises(ValueError):
        extract_position(np.zeros(12), dims=3)


@given(st.lists(finite, min_size=2, max_size=3))
def test_extract_lift_roundtrip(p):
    assert np.array_equal(extract_position(lift(p)), p)


def test_lift_many_matches_rowwise():
    d = LiftingDictionary(3)
    pts = np.random.default_rng(0).normal(size=(20, 3))
    assert np.allclose(d.lift_many(pts), np.array([d.lift(p) for p in pts]), atol=0, rtol=0)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_fit_circle_one_step_exact(r):
    L = 12
    z = circle(r, 0.5, 2 * L + 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        model = fit(z[:-1], ridge=0.0)
    nxt = predict(model, z[-2], 1).positions[0]
    assert np.linalg.norm(nxt - z[-1]) <= 1e-8 * r


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_fit_circle_one_step_default_ridge(r):
    # The default ridge trades a small bias for conditioning.
    z = circle(r, 0.5, 26)
    model = fit(z[:-1])
    assert model.ridge > 0
    nxt = predict(model, z[-2], 1).positions[0]
    assert np.linalg.norm(nxt - z[-1]) <= 1e-4 * r


def test_fit_constant_buffer_fixed_point():
    z = np.tile([0.7, -1.2], (30, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        for ridge in (0.0, None):
            model = fit(z, ridge=ridge)
            g = lift(z[0])
            assert np.abs(model.K @ g - g).max() <= 1e-8


def test_fit_not_ready():
    d = LiftingDictionary(2)
    with pytest.raises(NotReadyError):
        fit(circle(1.0, 0.5, d.size))
    with pytest.raises(NotReadyError):
        fit(circle(1.0, 0.5, min_pairs(d)))
    fit(circle(1.0, 0.5, min_pairs(d) + 1))


def test_fit_negative_ridge():
    with pytest.raises(ValueError):
        fit(circle(1.0, 0.5, 40), ridge=-1.0)


def test_zero_ridge_rank_deficiency_warns():
    with pytest.warns(ConditioningWarning):
        fit(np.tile([1.0, 1.0], (30, 1)), ridge=0.0)


def test_predict_identity():
    d = LiftingDictionary(2)
    model = KoopmanModel(np.eye(d.size), d, 0.0)
    out = predict(model, (1.5, -0.5), 5)
    assert np.array_equal(out.positions, np.tile([1.5, -0.5], (5, 1)))
    assert out.reliable and out.from_model


def test_predict_circle_four_steps():
    r, omega = 1.5, 0.5
    z = circle(r, omega, 26)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        model = fit(z, ridge=0.0)
    out = predict(model, z[-1], 4)
    truth = circle(r, omega, 4, k0=26)
    assert np.abs(out.positions - truth).max() <= 1e-6 * r


def test_predict_single_step_definition():
    z = circle(1.0, 0.3, 40)
    model = fit(z)
    latest = z[-1]
    assert np.array_equal(predict(model, latest, 1).positions[0], extract_position(model.K @ lift(latest)))


def test_predict_rejects_zero_horizon():
    d = LiftingDictionary(2)
    with pytest.raises(ValueError):
        predict(KoopmanModel(np.eye(12), d, 0.0), (0, 0), 0)


def test_magnitude_guard_flags_only():
    d = LiftingDictionary(2)
    model = KoopmanModel(10.0 * np.eye(d.size), d, 0.0)
    out = predict(model, (5.0, 0.0), 4)
    assert not out.reliable
    assert out.positions[-1, 0] == pytest.approx(5e4)
    ok = predict(model, (5.0, 0.0), 4, magnitude_bound=1e6)
    assert ok.reliable


def test_fit_ignores_timestamps():
    z = circle(1.0, 0.4, 60)
    b1, b2 = ObservationBuffer(T), ObservationBuffer(T)
    for k, p in enumerate(z):
        b1.append(k * T, p)
        b2.append(123.0 + k * T, p)
    assert np.array_equal(fit(b1).K, fit(b2).K)


def test_exactly_consistent_data_has_zero_residual():
    # A quarter-turn (x, y) -> (-y, x) permutes the observables up to sign,
    # so the lifted data is generated by an exact linear map.
    rng = np.random.default_rng(3)
    starts = rng.uniform(-2, 2, size=(8, 2))
    pairs_x, pairs_y = [], []
    d = LiftingDictionary(2)
    for s in starts:
        z = [s]
        for _ in range(4):
            z.append(np.array([-z[-1][1], z[-1][0]]))
        for a, b in zip(z[:-1], z[1:]):
            pairs_x.append(d.lift(a))
            pairs_y.append(d.lift(b))
    X, Y = np.array(pairs_x), np.array(pairs_y)
    Kt, *_ = np.linalg.lstsq(X, Y, rcond=None)
    assert np.linalg.norm(Y - X @ Kt) <= 1e-8 * np.linalg.norm(Y)
    # The same dynamics as one trajectory through fit().
    z = [starts[0]]
    for _ in range(30):
        z.append(np.array([-z[-1][1], z[-1][0]]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        model = fit(np.array(z), ridge=0.0)
    scale = np.sqrt(np.mean(np.sum(d.lift_many(np.array(z)) ** 2, axis=1)))
    assert model.residual <= 1e-8 * scale


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ridge_monotone_residual(seed):
    rng = np.random.default_rng(seed)
    z = circle(1.0, 0.5, 40) + rng.normal(scale=0.01, size=(40, 2))
    res = [fit(z, ridge=lam).residual for lam in (0.0, 1e-6, 1e-3, 1e-1, 1.0, 10.0)]
    assert all(b >= a - 1e-12 for a, b in zip(res, res[1:]))


def test_buffer_gap_restarts_and_order():
    b = ObservationBuffer(T, capacity=5)
    for k in range(7):
        b.append(k * T, (k, 0))
    assert len(b) == 5
    assert b.times[0] == pytest.approx(2 * T)
    b.append(10 * T, (0, 0))
    assert len(b) == 1
    with pytest.raises(ValueError):
        b.append(10 * T, (0, 0))


def test_tracker_holds_then_models():
    tr = ObstacleTracker(0, T, dims=2)
    with pytest.raises(NotReadyError):
        tr.forecast(4)
    z = circle(1.0, 0.5, 40)
    for k, p in enumerate(z[:5]):
        tr.observe(k * T, p)
    f = tr.forecast(4)
    assert not f.from_model
    assert np.array_equal(f.positions, np.tile(z[4], (4, 1)))
    for k in range(5, 40):
        tr.observe(k * T, z[k])
    f = tr.forecast(4)
    assert f.from_model
    assert np.abs(f.positions - circle(1.0, 0.5, 4, k0=40)).max() < 1e-4


def test_two_dim_model_holds_extra_coordinate():
    z = np.column_stack([circle(1.0, 0.5, 40), np.linspace(0.9, 1.1, 40)])
    model = fit(z, dictionary=LiftingDictionary(2))
    out = predict(model, z[-1], 3)
    assert np.allclose(out.positions[:, 2], 1.0)
