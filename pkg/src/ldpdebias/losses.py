"""GLM margin losses and their debiased (inverse-transform) estimators.

Every loss here has the form f(theta.x * y). For such losses the iterated
Laplacian in x collapses to scalar derivatives,

    Lap^k_x f(theta.x y) = ||theta||^(2k) f^(2k)(theta.x y),

so the inverse smoothing transform acts at the margin with variance
v = sigma^2 ||theta||^2. Quadratic and exponential losses have exact
closed-form inverses; the logistic loss only has a truncated series with
empirically controlled bias (it sits outside the convergence class).

The debiased loss estimator on a released pair (x~, y~) is

    S~ * Winv[f](theta.x~ y~) + (1 - S~) * Winv[f](-theta.x~ y~),

and the gradient estimator follows from

    grad_theta Winv_v[f](z) = -sigma^2 theta * Winv[f''](z) + x~ y~ * Winv[f'](z),

where the first term accounts for the theta-dependence of the margin
variance itself. For the truncated logistic series the f'-part keeps K
terms and the f''-part K-1, which is exactly the theta-gradient of the
K-truncated loss (this is what makes finite-difference checks pass).

The l2 regularizer is never debiased: it touches no private data, so
lambda*||theta||^2/2 and lambda*theta are added by the optimizer after the
correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DimensionError, ModeError
from .mechanisms import PrivacyBudget, flip_retention_probability, inverse_weight
from .transforms import DerivativeShift, SeriesConfig, weierstrass_series_scalar

__all__ = [
    "GlmLoss",
    "QuadraticLoss",
    "ExponentialLoss",
    "LogisticLoss",
    "ModelState",
    "RegularizerConfig",
    "loss",
    "grad",
    "w_inv_glm",
    "iwp_loss",
    "iwp_grad",
    "regression_debiased_grad",
    "noisy_risk_closed_form_exponential",
    "estimate_gradient_constant",
    "gradient_variance_bound",
]

# Highest series order the logistic derivative table supports. Orders near
# the top lose digits to cancellation in the sigmoid-polynomial evaluation;
# the estimators here use K <= 3 where precision is ample.
_LOGISTIC_K_MAX = 14


@lru_cache(maxsize=None)
def _sigmoid_poly(order: int) -> tuple[int, ...]:
    """Integer coefficients c_j with f^(order)(z) = sum_j c_j s^j, s = sigmoid(z).

    Built from f'(z) = s - 1 by d/dz s^j = j (s^j - s^(j+1)); kept as exact
    Python integers so the table itself carries no rounding.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if order == 1:
        return (-1, 1)
    prev = _sigmoid_poly(order - 1)
    out = [0] * (len(prev) + 1)
    for j, c in enumerate(prev):
        if c == 0 or j == 0:
            continue
        out[j] += j * c
        out[j + 1] -= j * c
    return tuple(out)


@lru_cache(maxsize=None)
def _sigmoid_poly_float(order: int) -> np.ndarray:
    return np.asarray(_sigmoid_poly(order), dtype=float)


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class GlmLoss:
    """Base margin loss; concrete losses fill in the derivative stack.

    Instances satisfy the DerivativeStack protocol of the transforms
    module (value_at / deriv_at / k_max / growth_rate) and additionally
    provide the inverse-smoothed f, f', f'' at a given margin variance,
    which is all the debiased estimators need. Loss objects are immutable
    after construction.
    """

    name: str = "base"
    has_exact_inverse: bool = False
    k_max: int = 0
    growth_rate = None

    def value_at(self, z):
        raise NotImplementedError

    def deriv_at(self, z, order: int):
        raise NotImplementedError

    def inverse_value(self, z, variance: float):
        """Inverse-smoothed loss Winv_v[f](z)."""
        raise NotImplementedError

    def inverse_d1(self, z, variance: float):
        """Inverse-smoothed first derivative Winv_v[f'](z)."""
        raise NotImplementedError

    def inverse_d2(self, z, variance: float):
        """Inverse-smoothed second derivative Winv_v[f''](z)."""
        raise NotImplementedError

    def mixed_inverse_curvature(self, theta, x, y, s: float) -> np.ndarray:
        """Closed-form d/dx d/dtheta of the Winv_{2s}-smoothed loss (p x p)."""
        raise NotImplementedError(f"no closed-form curvature for {self.name}")


class QuadraticLoss(GlmLoss):
    """f(z) = (z - 1)^2 / 2; the inverse smoothing just subtracts v/2."""

    name = "quadratic"
    has_exact_inverse = True
    k_max = 512
    growth_rate = 0.0

    def value_at(self, z):
        z = np.asarray(z, dtype=float)
        return 0.5 * (z - 1.0) ** 2

    def deriv_at(self, z, order: int):
        z = np.asarray(z, dtype=float)
        if order == 0:
            return self.value_at(z)
        if order == 1:
            return z - 1.0
        if order == 2:
            return np.ones_like(z)
        return np.zeros_like(z)

    def inverse_value(self, z, variance: float):
        return self.value_at(z) - variance / 2.0

    def inverse_d1(self, z, variance: float):
        # f' is linear, a fixed point of the transform.
        return np.asarray(z, dtype=float) - 1.0

    def inverse_d2(self, z, variance: float):
        return np.ones_like(np.asarray(z, dtype=float))

    def mixed_inverse_curvature(self, theta, x, y, s: float) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        margin = float(theta @ x) * y
        return np.outer(theta, x) + y * (margin - 1.0) * np.eye(theta.size)


class ExponentialLoss(GlmLoss):
    """f(z) = e^(-z); every derivative is (-1)^k e^(-z).

    The smoothing series of e^(-z) at variance v is e^(v/2) e^(-z), so the
    inverse multiplies by e^(-v/2) and is valid at every variance (the
    growth certificate holds for arbitrarily small rate, hence the 0.0).
    Exponents are always combined into a single sum before exponentiation
    so the factors cannot under/overflow separately.
    """

    name = "exponential"
    has_exact_inverse = True
    k_max = 512
    growth_rate = 0.0

    def value_at(self, z):
        return np.exp(-np.asarray(z, dtype=float))

    def deriv_at(self, z, order: int):
        sign = -1.0 if order % 2 else 1.0
        return sign * np.exp(-np.asarray(z, dtype=float))

    def inverse_value(self, z, variance: float):
        return np.exp(-variance / 2.0 - np.asarray(z, dtype=float))

    def inverse_d1(self, z, variance: float):
        return -np.exp(-variance / 2.0 - np.asarray(z, dtype=float))

    def inverse_d2(self, z, variance: float):
        return np.exp(-variance / 2.0 - np.asarray(z, dtype=float))

    def mixed_inverse_curvature(self, theta, x, y, s: float) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        tt = float(theta @ theta)
        margin = float(theta @ x) * y
        scale = math.exp(-s * tt - margin)
        return scale * (
            np.outer(theta, x) + 2.0 * s * y * np.outer(theta, theta) - y * np.eye(theta.size)
        )


class LogisticLoss(GlmLoss):
    """f(z) = ln(1 + e^(-z)), with derivatives as polynomials in sigmoid(z).

    No exact inverse exists (the loss is outside the convergence class),
    so the inverse-smoothed values are K-truncated series and the
    estimators carry a measured, not analytic, bias. The truncation order
    is either pinned at construction or chosen per call by the default
    rule: K=1 when the margin variance exceeds 8, else K=2.
    """

    name = "logistic"
    has_exact_inverse = False
    k_max = _LOGISTIC_K_MAX
    growth_rate = None

    def __init__(self, truncation: int | None = None):
        if truncation is not None and not 0 <= truncation <= self.k_max:
            raise ValueError(
                f"truncation must lie in [0, {self.k_max}], got {truncation}"
            )
        self.truncation = truncation

    def truncation_for(self, variance: float) -> int:
        if self.truncation is not None:
            return self.truncation
        return 1 if variance > 8.0 else 2

    def value_at(self, z):
        return np.logaddexp(0.0, -np.asarray(z, dtype=float))

    def deriv_at(self, z, order: int):
        if order == 0:
            return self.value_at(z)
        if order > 2 * self.k_max + 3:
            raise ValueError(f"derivative order {order} beyond supported table")
        s = _sigmoid(z)
        return npoly.polyval(s, _sigmoid_poly_float(order))

    def inverse_value(self, z, variance: float):
        k = self.truncation_for(variance)
        return weierstrass_series_scalar(self, z, variance, SeriesConfig(k, "inverse"))

    def inverse_d1(self, z, variance: float):
        k = self.truncation_for(variance)
        return weierstrass_series_scalar(
            DerivativeShift(self, 1), z, variance, SeriesConfig(k, "inverse")
        )

    def inverse_d2(self, z, variance: float):
        # One order lower than the f' series: together they form the exact
        # theta-gradient of the K-truncated loss series.
        k = self.truncation_for(variance) - 1
        if k < 0:
            return np.zeros_like(np.asarray(z, dtype=float))
        return weierstrass_series_scalar(
            DerivativeShift(self, 2), z, variance, SeriesConfig(k, "inverse")
        )


@dataclass
class ModelState:
    """Parameter vector constrained to the ball of radius R."""

    theta: np.ndarray
    radius: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        norm = float(np.linalg.norm(self.theta))
        if norm > self.radius * (1.0 + 1e-12):
            raise ValueError(
                f"||theta|| = {norm:.6g} exceeds the radius {self.radius:.6g}"
            )


@dataclass(frozen=True)
class RegularizerConfig:
    """l2 penalty lambda * ||theta||^2 / 2."""

    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


def _as_batch(theta, x, y):
    """Promote (x, y) to batch shape (m, p), (m,); remember if input was single."""
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != theta.shape[0]:
        raise DimensionError(
            f"features of shape {np.asarray(x).shape} incompatible with "
            f"theta of length {theta.shape[0]}"
        )
    y = np.broadcast_to(y, x.shape[:1]).astype(float)
    return theta, x, y, single


def _check_binary(y: np.ndarray) -> None:
    if not np.all(np.abs(y) == 1.0):
        raise ModeError("classification estimator received non-binary labels")


def loss(glm: GlmLoss, theta, x, y):
    """Plain margin loss f(theta.x * y); no regularizer.

    Broadcasts over a batch: x of shape (m, p) with y of shape (m,)
    returns (m,) values.
    """
    theta, x, y, single = _as_batch(theta, x, y)
    vals = glm.value_at((x @ theta) * y)
    return float(vals[0]) if single else vals


def grad(glm: GlmLoss, theta, x, y):
    """Plain gradient f'(theta.x y) * x * y."""
    theta, x, y, single = _as_batch(theta, x, y)
    z = (x @ theta) * y
    g = glm.deriv_at(z, 1)[:, None] * x * y[:, None]
    return g[0] if single else g


def w_inv_glm(glm: GlmLoss, theta, z, sigma_squared: float):
    """Inverse-smoothed loss at margin z, noise variance sigma^2 ||theta||^2.

    Quadratic: f(z) - sigma^2||theta||^2/2. Exponential:
    e^(-sigma^2||theta||^2/2) f(z). Logistic: K-truncated inverse series.
    """
    theta = np.asarray(theta, dtype=float)
    v = sigma_squared * float(theta @ theta)
    out = glm.inverse_value(np.asarray(z, dtype=float), v)
    return float(out) if np.ndim(z) == 0 else out


def iwp_loss(glm: GlmLoss, theta, x_tilde, y_tilde, budget: PrivacyBudget, _inverse_weight: float | None = None):
    """Debiased loss estimate on released pairs (x~, y~).

    Computes S~ Winv[f](z) + (1 - S~) Winv[f](-z) with z = theta.x~ y~ and
    the inverse smoothing at variance sigma^2(budget) ||theta||^2; for
    quadratic and exponential losses its expectation over fresh releases
    is exactly the clean loss. Accepts batches like :func:`loss`.

    ``_inverse_weight`` overrides S~(epsilon_y); it exists as a test hook
    for the validation suite's corruption check and is not part of the
    public contract.
    """
    theta, x, y, single = _as_batch(theta, x_tilde, y_tilde)
    _check_binary(y)
    v = budget.sigma_squared() * float(theta @ theta)
    s_inv = inverse_weight(budget.epsilon_y) if _inverse_weight is None else _inverse_weight
    z = (x @ theta) * y
    vals = s_inv * glm.inverse_value(z, v) + (1.0 - s_inv) * glm.inverse_value(-z, v)
    return float(vals[0]) if single else vals


def iwp_grad(glm: GlmLoss, theta, x_tilde, y_tilde, budget: PrivacyBudget, _inverse_weight: float | None = None):
    """Debiased gradient estimate on released pairs.

    For each label branch sign in {+, -},

        G(sign) = -sigma^2 theta * Winv[f''](sign z) + sign x~ y~ * Winv[f'](sign z),

    and the estimate is S~ G(+) + (1 - S~) G(-). Shapes follow
    :func:`grad`: (p,) for a single record, (m, p) for a batch.
    """
    theta, x, y, single = _as_batch(theta, x_tilde, y_tilde)
    _check_binary(y)
    sigma_sq = budget.sigma_squared()
    v = sigma_sq * float(theta @ theta)
    s_inv = inverse_weight(budget.epsilon_y) if _inverse_weight is None else _inverse_weight
    z = (x @ theta) * y
    xy = x * y[:, None]
    out = np.zeros_like(x)
    for sign, weight in ((1.0, s_inv), (-1.0, 1.0 - s_inv)):
        zz = sign * z
        d1 = glm.inverse_d1(zz, v)
        d2 = glm.inverse_d2(zz, v)
        out += weight * (
            -sigma_sq * d2[:, None] * theta[None, :] + sign * d1[:, None] * xy
        )
    return out[0] if single else out


def regression_debiased_grad(theta, x_tilde, y_tilde, sigma_sq_x: float):
    """Debiased MSE gradient for regression releases.

    The plain gradient x~(theta.x~) - x~ y~ has feature-noise bias
    sigma_x^2 theta (from E[x~ x~^T] = x x^T + sigma_x^2 I); subtracting it
    is the whole correction. The label term x~ y~ is linear in the label,
    so Gaussian label noise needs no correction at all. y~ is a real
    response here, not a class sign.
    """
    if sigma_sq_x < 0:
        raise ModeError(f"sigma_sq_x must be nonnegative, got {sigma_sq_x}")
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x_tilde, dtype=float)
    y = np.asarray(y_tilde, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != theta.shape[0]:
        raise DimensionError(
            f"features of shape {np.asarray(x_tilde).shape} incompatible with "
            f"theta of length {theta.shape[0]}"
        )
    y = np.broadcast_to(y, x.shape[:1]).astype(float)
    g = x * (x @ theta)[:, None] - sigma_sq_x * theta[None, :] - x * y[:, None]
    return g[0] if single else g


def noisy_risk_closed_form_exponential(theta, risk_plus: float, risk_minus: float, budget: PrivacyBudget) -> float:
    """Closed-form noisy population risk of the exponential loss.

    Given clean risks R(theta) and R(-theta), the risk seen on released
    data is e^(sigma^2 ||theta||^2 / 2) (S R(theta) + (1-S) R(-theta)):
    the smoothing inflates by the even-derivative series (a pure
    exponential factor here) and Randomized Response mixes in the
    mirrored risk.
    """
    theta = np.asarray(theta, dtype=float)
    v = budget.sigma_squared() * float(theta @ theta)
    s = flip_retention_probability(budget.epsilon_y)
    return float(np.exp(v / 2.0) * (s * risk_plus + (1.0 - s) * risk_minus))


def estimate_gradient_constant(
    glm: GlmLoss,
    radius: float,
    n_features: int,
    budget: PrivacyBudget,
    n_theta: int = 10,
    n_x: int = 10,
    n_s: int = 5,
    rng: np.random.Generator | None = None,
) -> float:
    """Grid estimate of the envelope constant C in the variance bound.

    C is the supremum over models on the Theta-sphere (radius R), features
    on the X-ball boundary, both labels, and smoothing scales
    s in (0, sigma^2/2], of the larger of two norms: the clean gradient
    norm |f'(z)| ||x|| and the Frobenius norm of the closed-form mixed
    curvature d/dx d/dtheta of the Winv_{2s}-smoothed loss. Only losses
    with closed-form curvature (quadratic, exponential) are supported.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sigma_sq = budget.sigma_squared()
    bound = budget.feature_norm_bound

    def sphere(n: int, scale: float) -> np.ndarray:
        v = rng.standard_normal((n, n_features))
        return scale * v / np.linalg.norm(v, axis=1, keepdims=True)

    thetas = sphere(n_theta, radius)
    xs = sphere(n_x, bound)
    s_grid = np.linspace(sigma_sq / 2.0 / n_s, sigma_sq / 2.0, n_s)

    c = 0.0
    for theta in thetas:
        for x in xs:
            for y in (1.0, -1.0):
                z = float(theta @ x) * y
                c = max(c, abs(float(glm.deriv_at(np.asarray(z), 1))) * float(np.linalg.norm(x)))
                for s in s_grid:
                    m = glm.mixed_inverse_curvature(theta, x, y, float(s))
                    c = max(c, float(np.linalg.norm(m, "fro")))
    return c


def gradient_variance_bound(c_constant: float, budget: PrivacyBudget) -> float:
    """Variance envelope C^2 (sigma^2 + 4 S~(S~-1)(1 + sigma^2))."""
    sigma_sq = budget.sigma_squared()
    s_inv = inverse_weight(budget.epsilon_y)
    return c_constant**2 * (sigma_sq + 4.0 * s_inv * (s_inv - 1.0) * (1.0 + sigma_sq))
