"""Projected SGD on debiased gradient estimates, plus a clean reference fit.

The training loop is a single pass over the dataset in stored order:
batches are consecutive slices, never reshuffled, so a run is determined
entirely by the data, the budget, and the config. Per batch it takes

    theta <- Pi_R( theta - gamma (g_batch + lambda theta) )

where g_batch is the batch mean of the debiased gradient estimator and
the ridge term is added after the correction (the regularizer sees no
private data and needs no debiasing).

Two step-size schedules exist. "constant" uses the configured gamma
as-is. "log_over_n" derives one constant step from curvature info,

    gamma = min( 1/(2 K), ln(max(2, mu^2 D^2 n / A)) / (mu n) ),

with K the smoothness, mu the strong convexity, D the initial distance
and A the gradient-variance envelope; with it the expected squared
distance to the optimum decays like A log(n)/ (mu^2 n).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetMismatchError, ConfigError, DataError
from .losses import GlmLoss, ModelState, QuadraticLoss, grad, iwp_grad, iwp_loss, loss
from .losses import estimate_gradient_constant, gradient_variance_bound
from .mechanisms import LdpRecord, PrivacyBudget, RawRecord

__all__ = [
    "SgdConfig",
    "TrainTrace",
    "project_ball",
    "iwp_sgd",
    "sgd_plain",
    "evaluate",
    "fit_reference",
    "ridge_solution",
]

_SCHEDULES = ("constant", "log_over_n")


@dataclass
class SgdConfig:
    """Hyperparameters for one SGD run.

    radius is the projection radius R. mu / smoothness are optional
    curvature constants: required by the log_over_n schedule, and used
    under the constant schedule only to warn when gamma > 1/(2*smoothness).
    noise_constant overrides the variance envelope A (computed from the
    loss and budget when absent); init_distance overrides the distance
    guess D (default 2R, the ball diameter).
    """

    step_size: float = 1e-4
    schedule: str = "constant"
    batch_size: int = 128
    radius: float = 1.0
    lam: float = 0.0
    seed: int = 0
    mu: float | None = None
    smoothness: float | None = None
    noise_constant: float | None = None
    init_distance: float | None = None
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if self.schedule not in _SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {_SCHEDULES}")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.radius <= 0:
            raise ConfigError(f"radius must be positive, got {self.radius}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.theta0 is not None:
            self.theta0 = np.asarray(self.theta0, dtype=float)


@dataclass
class TrainTrace:
    """Per-batch training record; one row per batch, ceil(n / batch_size) rows.

    mean_train_estimator_value is the batch mean of the training objective
    estimate (debiased loss plus ridge term) at the pre-update iterate;
    test_risk / test_accuracy are clean-test-set evaluations of the
    post-update iterate (NaN when no test set was supplied).
    """

    batch_index: np.ndarray
    mean_train_estimator_value: np.ndarray
    test_risk: np.ndarray
    test_accuracy: np.ndarray
    theta_norm: np.ndarray
    final_theta: np.ndarray

    COLUMNS = (
        "batch_index",
        "mean_train_estimator_value",
        "test_risk",
        "test_accuracy",
        "theta_norm",
    )

    def __len__(self) -> int:
        return len(self.batch_index)

    def rows(self):
        for i in range(len(self)):
            yield (
                int(self.batch_index[i]),
                float(self.mean_train_estimator_value[i]),
                float(self.test_risk[i]),
                float(self.test_accuracy[i]),
                float(self.theta_norm[i]),
            )


def project_ball(theta: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of the given radius."""
    theta = np.asarray(theta, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm <= radius:
        return theta
    return theta * (radius / norm)


def _to_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Accept (X, y) arrays or a list of Raw/Ldp records; return float arrays."""
    if isinstance(dataset, tuple) and len(dataset) == 2:
        x = np.asarray(dataset[0], dtype=float)
        y = np.asarray(dataset[1], dtype=float)
    else:
        records = list(dataset)
        if records and isinstance(records[0], LdpRecord):
            x = np.asarray([r.features_noisy for r in records], dtype=float)
            y = np.asarray([r.label_noisy for r in records], dtype=float)
        elif records and isinstance(records[0], RawRecord):
            x = np.asarray([r.features for r in records], dtype=float)
            y = np.asarray([r.label for r in records], dtype=float)
        else:
            x = np.asarray([r[0] for r in records], dtype=float) if records else np.empty((0, 0))
            y = np.asarray([r[1] for r in records], dtype=float) if records else np.empty((0,))
    if x.shape[0] == 0:
        raise DataError("dataset is empty")
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DataError(f"expected features (n, p) with labels (n,), got {x.shape} and {y.shape}")
    return x, y


def evaluate(theta, test_set, glm: GlmLoss) -> tuple[float, float]:
    """Mean clean loss and strict-margin accuracy on a test set.

    Accuracy counts y * theta.x > 0 only; a zero margin is wrong, so the
    zero model scores accuracy 0 by definition rather than by luck.
    """
    x, y = _to_arrays(test_set)
    theta = np.asarray(theta, dtype=float)
    margins = (x @ theta) * y
    risk = float(np.mean(glm.value_at(margins)))
    accuracy = float(np.mean(margins > 0.0))
    return risk, accuracy


def _resolve_step(config: SgdConfig, n: int, glm: GlmLoss, budget: PrivacyBudget | None, p: int) -> float:
    if config.schedule == "constant":
        if config.smoothness is not None and config.step_size > 1.0 / (2.0 * config.smoothness):
            warnings.warn(
                f"constant step {config.step_size:g} exceeds 1/(2*smoothness) = "
                f"{1.0 / (2.0 * config.smoothness):g}; expect divergence",
                RuntimeWarning,
                stacklevel=3,
            )
        return config.step_size
    # log_over_n
    if config.mu is None or config.smoothness is None:
        raise ConfigError("log_over_n schedule needs both mu and smoothness")
    if config.noise_constant is not None:
        a_const = config.noise_constant
    else:
        if budget is None:
            raise ConfigError("log_over_n without noise_constant needs a privacy budget")
        try:
            c = estimate_gradient_constant(glm, config.radius, p, budget)
        except NotImplementedError as exc:
            raise ConfigError(
                "no closed-form variance envelope for this loss; set noise_constant"
            ) from exc
        a_const = gradient_variance_bound(c, budget)
    d = config.init_distance if config.init_distance is not None else 2.0 * config.radius
    arg = max(2.0, config.mu**2 * d**2 * n / a_const)
    return min(1.0 / (2.0 * config.smoothness), math.log(arg) / (config.mu * n))


def _run_sgd(x, y, glm, config, gamma, grad_fn, value_fn, test_set):
    n, p = x.shape
    theta = np.zeros(p) if config.theta0 is None else config.theta0.copy()
    theta = project_ball(theta, config.radius)

    if test_set is not None:
        x_test, y_test = _to_arrays(test_set)
    n_batches = math.ceil(n / config.batch_size)
    idx = np.zeros(n_batches, dtype=int)
    est_val = np.zeros(n_batches)
    test_risk = np.full(n_batches, np.nan)
    test_acc = np.full(n_batches, np.nan)
    theta_norm = np.zeros(n_batches)

    for b in range(n_batches):
        sl = slice(b * config.batch_size, min(n, (b + 1) * config.batch_size))
        xb, yb = x[sl], y[sl]
        reg_val = 0.5 * config.lam * float(theta @ theta)
        est_val[b] = float(np.mean(value_fn(theta, xb, yb))) + reg_val
        g = np.mean(grad_fn(theta, xb, yb), axis=0) + config.lam * theta
        theta = project_ball(theta - gamma * g, config.radius)
        idx[b] = b
        theta_norm[b] = float(np.linalg.norm(theta))
        if test_set is not None:
            margins = (x_test @ theta) * y_test
            test_risk[b] = float(np.mean(glm.value_at(margins)))
            test_acc[b] = float(np.mean(margins > 0.0))

    trace = TrainTrace(idx, est_val, test_risk, test_acc, theta_norm, theta.copy())
    return ModelState(theta, config.radius), trace


def iwp_sgd(
    dataset,
    glm: GlmLoss,
    budget: PrivacyBudget,
    config: SgdConfig,
    test_set=None,
    manifest: dict | None = None,
) -> tuple[ModelState, TrainTrace]:
    """Single-pass projected SGD on the debiased gradient estimator.

    dataset holds released records (list of LdpRecord, or an (X, y) array
    pair); test_set, when given, holds clean records for per-batch
    evaluation. A release manifest can be passed alongside to assert that
    the budget used for training matches the one the data was released
    under; any mismatch in epsilons, delta or norm bound raises.
    """
    if manifest is not None:
        for key, have in (
            ("epsilon_x", budget.epsilon_x),
            ("epsilon_y", budget.epsilon_y),
            ("delta", budget.delta),
            ("feature_norm_bound", budget.feature_norm_bound),
        ):
            want = manifest.get(key)
            if want is not None and not math.isclose(float(want), have, rel_tol=1e-9):
                raise BudgetMismatchError(
                    f"{key} mismatch: release manifest says {want}, training budget has {have}"
                )
    x, y = _to_arrays(dataset)
    gamma = _resolve_step(config, x.shape[0], glm, budget, x.shape[1])

    def grad_fn(theta, xb, yb):
        return iwp_grad(glm, theta, xb, yb, budget)

    def value_fn(theta, xb, yb):
        return iwp_loss(glm, theta, xb, yb, budget)

    return _run_sgd(x, y, glm, config, gamma, grad_fn, value_fn, test_set)


def sgd_plain(
    dataset,
    glm: GlmLoss,
    config: SgdConfig,
    test_set=None,
) -> tuple[ModelState, TrainTrace]:
    """Single-pass projected SGD on the plain (uncorrected) gradient.

    Used both for the clean baseline (clean records in, the oracle
    comparison) and for the naive baseline (released records in, noise
    ignored). The trace's estimator column is the plain batch loss plus
    the ridge term.
    """
    x, y = _to_arrays(dataset)
    gamma = _resolve_step(config, x.shape[0], glm, None, x.shape[1])

    def grad_fn(theta, xb, yb):
        return grad(glm, theta, xb, yb)

    def value_fn(theta, xb, yb):
        return loss(glm, theta, xb, yb)

    return _run_sgd(x, y, glm, config, gamma, grad_fn, value_fn, test_set)


def ridge_solution(dataset, lam: float = 1.0) -> np.ndarray:
    """Closed-form minimizer of the quadratic margin loss plus ridge.

    Solves (X^T X / n + lam I) theta = mean(x y); with labels in {-1, +1}
    this is the unconstrained optimum of mean (theta.x y - 1)^2 / 2
    + lam ||theta||^2 / 2.
    """
    x, y = _to_arrays(dataset)
    n, p = x.shape
    gram = x.T @ x / n + lam * np.eye(p)
    rhs = (x * y[:, None]).mean(axis=0)
    return np.linalg.solve(gram, rhs)


def fit_reference(
    dataset,
    glm: GlmLoss,
    radius: float,
    lam: float = 0.0,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> np.ndarray:
    """Reference optimum theta* on clean data, to projected-gradient tolerance.

    Full-batch projected gradient descent run until successive iterates
    move less than tol. For the quadratic loss the closed-form ridge
    solution is used directly whenever it lies inside the ball. The step
    size comes from a smoothness upper bound for the loss at hand.
    """
    x, y = _to_arrays(dataset)
    n, p = x.shape
    if isinstance(glm, QuadraticLoss) and lam > 0:
        theta = ridge_solution((x, y), lam)
        if np.linalg.norm(theta) <= radius:
            return theta
    row_sq = float(np.max(np.sum(x * x, axis=1)))
    if glm.name == "quadratic":
        smooth = float(np.linalg.eigvalsh(x.T @ x / n)[-1]) + lam
    elif glm.name == "exponential":
        bound = math.sqrt(row_sq)
        smooth = math.exp(radius * bound) * row_sq + lam
    else:
        smooth = 0.25 * row_sq + lam
    step = 1.0 / smooth
    theta = np.zeros(p)
    for _ in range(max_iter):
        g = np.mean(grad(glm, theta, x, y), axis=0) + lam * theta
        new = project_ball(theta - step * g, radius)
        if np.linalg.norm(new - theta) <= tol:
            return new
        theta = new
    return theta
