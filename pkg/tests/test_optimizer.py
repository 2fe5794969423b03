"""SGD loop tests: determinism, trace bookkeeping, schedules, reference fits.

Runs here are small and exact: the loop takes consecutive slices in stored
order with no reshuffling, so everything is reproducible without seeds.
"""

import math
import warnings

import numpy as np
import pytest

from ldpdebias.errors import BudgetMismatchError, ConfigError, DataError
from ldpdebias.losses import ExponentialLoss, LogisticLoss, QuadraticLoss
from ldpdebias.mechanisms import LdpRecord, PrivacyBudget, RawRecord
from ldpdebias.optimizer import (
    SgdConfig,
    TrainTrace,
    evaluate,
    fit_reference,
    iwp_sgd,
    project_ball,
    ridge_solution,
    sgd_plain,
)

BUDGET = PrivacyBudget(epsilon_x=2.0, epsilon_y=2.0, delta=1e-5, feature_norm_bound=1.0)


def _toy_data(n=64, p=2, seed=0):
    rng = np.random.default_rng(seed)
    direction = np.array([1.0, -0.5] + [0.0] * (p - 2))[:p]
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    x = y[:, None] * direction[None, :] + rng.normal(0.0, 0.4, size=(n, p))
    return x, y


def _released(x, y, seed=1):
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(BUDGET.sigma_squared())
    x_tilde = x + rng.normal(0.0, sigma, size=x.shape)
    s = 1.0 / (1.0 + math.exp(-BUDGET.epsilon_y))
    flip = rng.random(len(y)) >= s
    return x_tilde, np.where(flip, -y, y)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(schedule="cosine"),
        dict(step_size=0.0),
        dict(batch_size=0),
        dict(radius=-1.0),
        dict(lam=-0.1),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SgdConfig(**kwargs)


def test_project_ball():
    np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), 2.5), [1.5, 2.0])
    inside = np.array([0.3, -0.1])
    np.testing.assert_array_equal(project_ball(inside, 1.0), inside)


def test_trace_row_count_and_columns():
    x, y = _toy_data(n=10)
    _, trace = sgd_plain((x, y), QuadraticLoss(), SgdConfig(batch_size=3))
    assert len(trace) == 4  # ceil(10 / 3)
    assert isinstance(trace, TrainTrace)
    rows = list(trace.rows())
    assert len(rows) == 4
    assert all(len(r) == len(TrainTrace.COLUMNS) for r in rows)
    assert [r[0] for r in rows] == [0, 1, 2, 3]
    # no test set supplied: the evaluation columns stay NaN
    assert all(math.isnan(r[2]) and math.isnan(r[3]) for r in rows)


def test_trace_estimator_value_includes_ridge_term():
    x, y = _toy_data(n=8)
    theta0 = np.array([1.0, 0.0])
    config = SgdConfig(batch_size=8, lam=2.0, step_size=1e-9, theta0=theta0)
    _, trace = sgd_plain((x, y), QuadraticLoss(), config)
    z = (x @ theta0) * y
    expected = float(np.mean(0.5 * (z - 1.0) ** 2)) + 0.5 * 2.0 * 1.0
    assert trace.mean_train_estimator_value[0] == pytest.approx(expected, rel=1e-12)


def test_evaluate_strict_margin_accuracy():
    glm = QuadraticLoss()
    test_set = (np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]), np.array([1.0, 1.0, 1.0]))
    risk, acc = evaluate(np.array([1.0, 0.0]), test_set, glm)
    # margins are 1, 0, -1: the zero margin counts as a miss
    assert acc == pytest.approx(1.0 / 3.0)
    assert risk == pytest.approx((0.0 + 0.5 + 2.0) / 3.0)
    risk0, acc0 = evaluate(np.zeros(2), test_set, glm)
    assert acc0 == 0.0
    assert risk0 == pytest.approx(0.5)


def test_record_list_inputs():
    x, y = _toy_data(n=6)
    raw = [RawRecord(x[i], y[i]) for i in range(6)]
    released = [LdpRecord(x[i], y[i]) for i in range(6)]
    cfg = SgdConfig(batch_size=2)
    state_arrays, _ = sgd_plain((x, y), QuadraticLoss(), cfg)
    state_raw, _ = sgd_plain(raw, QuadraticLoss(), cfg)
    state_rel, _ = sgd_plain(released, QuadraticLoss(), cfg)
    np.testing.assert_allclose(state_raw.theta, state_arrays.theta)
    np.testing.assert_allclose(state_rel.theta, state_arrays.theta)


def test_empty_and_misshapen_datasets():
    with pytest.raises(DataError):
        sgd_plain([], QuadraticLoss(), SgdConfig())
    with pytest.raises(DataError):
        sgd_plain((np.ones((4, 2)), np.ones(3)), QuadraticLoss(), SgdConfig())
    with pytest.raises(DataError):
        sgd_plain((np.ones(4), np.ones(4)), QuadraticLoss(), SgdConfig())


def test_run_is_deterministic_and_stays_in_ball():
    x, y = _toy_data(n=100)
    x_tilde, y_tilde = _released(x, y)
    config = SgdConfig(step_size=5e-3, batch_size=16, radius=0.7)
    state_a, trace_a = iwp_sgd((x_tilde, y_tilde), QuadraticLoss(), BUDGET, config)
    state_b, trace_b = iwp_sgd((x_tilde, y_tilde), QuadraticLoss(), BUDGET, config)
    np.testing.assert_array_equal(state_a.theta, state_b.theta)
    np.testing.assert_array_equal(
        trace_a.mean_train_estimator_value, trace_b.mean_train_estimator_value
    )
    assert np.all(trace_a.theta_norm <= 0.7 * (1 + 1e-12))
    np.testing.assert_allclose(state_a.theta, trace_a.final_theta)


def test_theta0_is_projected_before_the_first_step():
    x, y = _toy_data(n=4)
    config = SgdConfig(step_size=1e-12, batch_size=4, radius=2.5, theta0=np.array([3.0, 4.0]))
    state, trace = sgd_plain((x, y), QuadraticLoss(), config)
    np.testing.assert_allclose(state.theta, [1.5, 2.0], atol=1e-9)
    assert trace.theta_norm[0] == pytest.approx(2.5)


def test_test_set_columns_track_the_post_update_iterate():
    x, y = _toy_data(n=12)
    test_set = _toy_data(n=40, seed=3)
    config = SgdConfig(step_size=0.05, batch_size=4)
    state, trace = sgd_plain((x, y), QuadraticLoss(), config, test_set=test_set)
    assert not np.any(np.isnan(trace.test_risk))
    final_risk, final_acc = evaluate(state.theta, test_set, QuadraticLoss())
    assert trace.test_risk[-1] == pytest.approx(final_risk)
    assert trace.test_accuracy[-1] == pytest.approx(final_acc)


def test_constant_step_warns_above_stability_threshold():
    x, y = _toy_data(n=8)
    config = SgdConfig(step_size=1.0, batch_size=8, smoothness=1.0)
    with pytest.warns(RuntimeWarning, match="expect divergence"):
        sgd_plain((x, y), QuadraticLoss(), config)
    quiet = SgdConfig(step_size=0.4, batch_size=8, smoothness=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sgd_plain((x, y), QuadraticLoss(), quiet)


def test_log_over_n_schedule_requirements():
    x, y = _toy_data(n=16)
    with pytest.raises(ConfigError, match="mu and smoothness"):
        sgd_plain((x, y), QuadraticLoss(), SgdConfig(schedule="log_over_n"))
    with pytest.raises(ConfigError, match="noise_constant"):
        sgd_plain(
            (x, y),
            QuadraticLoss(),
            SgdConfig(schedule="log_over_n", mu=1.0, smoothness=4.0),
        )
    # a logistic loss has no closed-form envelope, so the budget cannot fill in A
    x_tilde, y_tilde = _released(x, y)
    with pytest.raises(ConfigError, match="variance envelope"):
        iwp_sgd(
            (x_tilde, y_tilde),
            LogisticLoss(),
            BUDGET,
            SgdConfig(schedule="log_over_n", mu=1.0, smoothness=4.0),
        )


def test_log_over_n_converges_to_the_ridge_optimum():
    x, y = _toy_data(n=5000, seed=7)
    lam = 1.0
    target = ridge_solution((x, y), lam)
    gram_eigs = np.linalg.eigvalsh(x.T @ x / len(y))
    config = SgdConfig(
        schedule="log_over_n",
        batch_size=1,
        radius=5.0,
        lam=lam,
        mu=lam + float(gram_eigs[0]),
        smoothness=lam + float(gram_eigs[-1]),
        noise_constant=10.0,
    )
    state, _ = sgd_plain((x, y), QuadraticLoss(), config, test_set=None)
    assert np.linalg.norm(state.theta - target) < 0.15
    assert np.linalg.norm(state.theta - target) < 0.2 * np.linalg.norm(target)


def test_manifest_guard():
    x, y = _toy_data(n=16)
    x_tilde, y_tilde = _released(x, y)
    config = SgdConfig(batch_size=8)
    manifest = {
        "epsilon_x": 2.0,
        "epsilon_y": 2.0,
        "delta": 1e-5,
        "feature_norm_bound": 1.0,
    }
    iwp_sgd((x_tilde, y_tilde), QuadraticLoss(), BUDGET, config, manifest=manifest)
    with pytest.raises(BudgetMismatchError, match="epsilon_y"):
        iwp_sgd(
            (x_tilde, y_tilde),
            QuadraticLoss(),
            BUDGET,
            config,
            manifest={**manifest, "epsilon_y": 1.0},
        )
    # keys absent from the manifest are not checked
    iwp_sgd((x_tilde, y_tilde), QuadraticLoss(), BUDGET, config, manifest={"delta": 1e-5})


def test_ridge_solution_hand_case():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, 1.0]])
    y = np.array([1.0, 1.0, 1.0, -1.0])
    # X^T X / n = diag(1/2, 1/2); mean(x y) = (0, 0); degenerate but exact
    np.testing.assert_allclose(ridge_solution((x, y), 0.5), np.zeros(2), atol=1e-14)
    x2 = np.array([[1.0, 0.0], [0.0, 1.0]])
    y2 = np.array([1.0, -1.0])
    # diag(1/2) + 1/2 = I; rhs = (1/2, -1/2)
    np.testing.assert_allclose(ridge_solution((x2, y2), 0.5), [0.5, -0.5], rtol=1e-12)


def test_fit_reference_quadratic_matches_ridge():
    x, y = _toy_data(n=300, seed=11)
    lam = 0.8
    closed = ridge_solution((x, y), lam)
    assert np.linalg.norm(closed) < 5.0
    np.testing.assert_allclose(fit_reference((x, y), QuadraticLoss(), 5.0, lam=lam), closed)
    # with no ridge term the descent path must find the same optimum
    unregularized = np.linalg.solve(x.T @ x / len(y), (x * y[:, None]).mean(axis=0))
    pgd = fit_reference((x, y), QuadraticLoss(), 50.0, lam=0.0)
    np.testing.assert_allclose(pgd, unregularized, atol=1e-7)


def test_fit_reference_exponential_hits_the_boundary_when_separable():
    # Separable data drives the exponential loss to the ball boundary.
    x = np.array([[1.0, 0.0], [0.8, 0.1], [-1.0, 0.05], [-0.9, -0.1]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    theta = fit_reference((x, y), ExponentialLoss(), 0.5)
    assert np.linalg.norm(theta) == pytest.approx(0.5, rel=1e-6)
    assert theta[0] > 0.4
