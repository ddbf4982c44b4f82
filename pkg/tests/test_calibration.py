import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coco.calibration import IDENTITY, CalibrationParams, log_odds, platt_apply, platt_fit, platt_loss
from coco.errors import ConvergenceError, DegenerateFitError
from coco.metrics import cce_hat, ece_hat
from coco.optim import OptimizerSettings


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def test_log_odds_examples():
    assert log_odds(0.5) == 0.0
    assert log_odds(0.8) == pytest.approx(np.log(4))
    assert log_odds(1.0, 1e-6) == pytest.approx(13.8155, abs=1e-4)
    assert log_odds(0.0) == pytest.approx(-log_odds(1.0))


def test_platt_apply_examples():
    assert platt_apply(CalibrationParams(-1, 0), 0.8) == pytest.approx(0.8)
    assert platt_apply(CalibrationParams(-2, 0), 0.5) == pytest.approx(0.5)
    assert platt_apply(CalibrationParams(-2, 0), 0.8) == pytest.approx(16 / 17)


def test_identity_exact():
    m = np.linspace(1e-6, 1 - 1e-6, 1001)
    assert np.allclose(platt_apply(IDENTITY, m), m, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.floats(-3, 3))
def test_monotone(c, d):
    m = np.linspace(0.01, 0.99, 99)
    out = platt_apply(CalibrationParams(c, d), m)
    diffs = np.diff(out)
    assert np.all(diffs < 0) if c > 0 else np.all(diffs > 0)
    assert np.all((out > 0) & (out < 1))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(5, 60))
        ms = rng.random(n)
        labels = rng.random(n) < 0.5
        p = CalibrationParams(float(rng.uniform(-3, 1)), float(rng.uniform(-2, 2)), float(rng.uniform(0.1, 0.9)))
        _, grad = platt_loss(p, ms, labels)
        h = 1e-5
        num = []
        for dc, dd in ((h, 0), (0, h)):
            up = platt_loss(CalibrationParams(p.c + dc, p.d + dd, p.lam), ms, labels)[0]
            down = platt_loss(CalibrationParams(p.c - dc, p.d - dd, p.lam), ms, labels)[0]
            num.append((up - down) / (2 * h))
        assert np.allclose(grad, num, rtol=1e-6, atol=1e-8)


def test_loss_at_half_lambda_is_half_cross_entropy():
    rng = np.random.default_rng(1)
    ms, labels = rng.random(200), rng.random(200) < 0.4
    p = CalibrationParams(-1.3, 0.2, 0.5)
    q = platt_apply(p, ms)
    ce = -np.sum(labels * np.log(q) + (~labels) * np.log(1 - q))
    assert platt_loss(p, ms, labels)[0] == pytest.approx(ce / 2, rel=1e-10)


def test_recovery_oracle():
    rng = np.random.default_rng(2)
    m = rng.random(50_000)
    labels = rng.random(m.size) < sigmoid(2 * log_odds(m))
    p = platt_fit(m, labels)
    assert abs(p.c + 2) <= 0.15 and abs(p.d) <= 0.15


def test_calibrated_data_stays_calibrated():
    rng = np.random.default_rng(3)
    m = rng.random(50_000)
    labels = rng.random(m.size) < m
    p = platt_fit(m, labels)
    assert ece_hat(platt_apply(p, m), labels) <= 0.02


def test_higher_lambda_less_overconfident():
    rng = np.random.default_rng(4)
    m = rng.random(20_000)
    labels = rng.random(m.size) < m**1.5
    conf = {lam: platt_apply(platt_fit(m, labels, lam), m) for lam in (0.5, 0.8)}
    assert cce_hat(conf[0.8], labels) <= cce_hat(conf[0.5], labels)


def test_minimiser_matches_standard_platt():
    from scipy.optimize import minimize

    rng = np.random.default_rng(5)
    m = rng.random(2000)
    labels = rng.random(m.size) < sigmoid(1.5 * log_odds(m) - 0.3)
    p = platt_fit(m, labels)
    x = log_odds(m)

    def ce(theta):
        q = np.clip(1 / (1 + np.exp(theta[0] * x + theta[1])), 1e-300, 1 - 1e-16)
        return -np.mean(labels * np.log(q) + (~labels) * np.log(1 - q))

    ref = minimize(ce, [-1.0, 0.0], method="BFGS", options={"gtol": 1e-10}).x
    assert np.allclose([p.c, p.d], ref, atol=1e-4)


def test_degenerate_labels():
    with pytest.raises(DegenerateFitError):
        platt_fit([0.2, 0.4, 0.6], [True, True, True])
    with pytest.raises(DegenerateFitError):
        platt_fit([0.2], [True])


def test_convergence_error_reports_gradient():
    rng = np.random.default_rng(6)
    m = rng.random(500)
    with pytest.raises(ConvergenceError) as exc:
        platt_fit(m, rng.random(500) < 0.3, opt=OptimizerSettings(max_iter=1, precondition="none"))
    assert exc.value.grad_norm > 0


def test_binary_monitor_outputs_converge():
    rng = np.random.default_rng(7)
    m = (rng.random(5000) < 0.5).astype(float)
    labels = np.where(m == 1, rng.random(m.size) < 0.8, rng.random(m.size) < 0.3)
    p = platt_fit(m, labels)
    assert platt_apply(p, 1.0) == pytest.approx(labels[m == 1].mean(), abs=1e-6)
    assert platt_apply(p, 0.0) == pytest.approx(labels[m == 0].mean(), abs=1e-6)


def test_json_round_trip(tmp_path):
    p = CalibrationParams(-1.7, 0.25, 0.8)
    assert CalibrationParams.from_json(p.to_json()) == p
    p.save(tmp_path / "p.json")
    assert CalibrationParams.load(tmp_path / "p.json") == p
    assert '"lambda": 0.8' in p.to_json()
