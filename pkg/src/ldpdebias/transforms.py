"""Gaussian-smoothing and label-flip transforms with their inverses.

The forward smoothing transform of a function f at noise variance v is

    W_v[f](z) = E[f(z + w)],  w ~ N(0, v),

which for smooth f admits the series sum_k v^k/(2^k k!) f^(2k)(z); the
inverse carries an extra (-1)^k. The label-side analogue under Randomized
Response at budget eps is

    B_eps[g](y)    = S(eps) g(y) + (1 - S(eps)) g(-y),
    B_eps^-1[g](y) = S~(eps) g(y) + (1 - S~(eps)) g(-y),

with S~ = 1/(1 - e^(-eps)). Composing the two inverses on a released pair
(x~, y~) yields the debiased loss estimator used downstream.

Responsibilities
----------------
* Scalar series evaluation for both directions, driven by a
  :class:`DerivativeStack` supplying exact analytic derivatives.
* Monte-Carlo evaluation of the forward transform (the ground-truth
  oracle for every series claim).
* Truncation-bias estimation for losses where the inverse series does not
  converge (empirical bias control, sup over an evaluation grid).

The multivariate Laplacian route is deliberately not implemented: all
callers reduce to scalar margins via d^k/dx applied to f(theta.x y)
collapsing to ||theta||^(2k) f^(2k).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import LabelError, SeriesOrderError
from .mechanisms import PrivacyBudget, flip_retention_probability, inverse_weight

__all__ = [
    "DerivativeStack",
    "PolynomialStack",
    "DerivativeShift",
    "SeriesConfig",
    "weierstrass_series_scalar",
    "weierstrass_mc",
    "bernoulli_forward",
    "bernoulli_inverse",
    "composed_inverse",
    "truncation_bias_estimate",
    "optimal_truncation",
    "default_eval_points",
    "validity_thresholds",
]


class DerivativeStack(Protocol):
    """Exact derivative oracle for a scalar function.

    Implementations provide ``value_at(z)``, ``deriv_at(z, order)`` with
    analytic (never finite-difference) derivatives for all orders up to
    2*k_max + 3, and satisfy ``deriv_at(z, 0) == value_at(z)``. Both
    methods must broadcast over ndarray inputs.

    ``growth_rate`` is the exponential-growth certificate of the function:
    0.0 for polynomials, the rate a for functions bounded by M*exp(a z^2),
    or None when no certificate is declared (inverse-series use then only
    has empirical bias control, and a warning is emitted).
    """

    k_max: int
    growth_rate: float | None

    def value_at(self, z): ...

    def deriv_at(self, z, order: int): ...


def validity_thresholds(growth_rate: float) -> tuple[float, float]:
    """Variance thresholds (forward, inverse) for a growth certificate a.

    The forward series is valid for variance < 1/(2a) and the inverse for
    variance < 1/(4a); a = 0 means both are unrestricted.
    """
    if growth_rate < 0:
        raise ValueError(f"growth_rate must be nonnegative, got {growth_rate}")
    if growth_rate == 0.0:
        return math.inf, math.inf
    return 1.0 / (2.0 * growth_rate), 1.0 / (4.0 * growth_rate)


class PolynomialStack:
    """DerivativeStack for a polynomial given by ascending coefficients."""

    def __init__(self, coefficients: Sequence[float]):
        self._poly = np.polynomial.Polynomial(np.asarray(coefficients, dtype=float))
        self._derivs = [self._poly]
        self.k_max = 512
        self.growth_rate = 0.0

    @property
    def degree(self) -> int:
        return self._poly.degree()

    def value_at(self, z):
        return self._poly(np.asarray(z, dtype=float))

    def deriv_at(self, z, order: int):
        if order < 0:
            raise SeriesOrderError(f"derivative order must be >= 0, got {order}")
        z = np.asarray(z, dtype=float)
        if order > self._poly.degree():
            return np.zeros_like(z)
        while len(self._derivs) <= order:
            self._derivs.append(self._derivs[-1].deriv())
        return self._derivs[order](z)


class DerivativeShift:
    """View of a stack shifted by a fixed derivative order.

    ``DerivativeShift(f, s)`` behaves as the function f^(s): its k-th
    derivative is ``f.deriv_at(z, k + s)``. Used to run the scalar series
    on f' and f'' without re-deriving coefficient tables.
    """

    def __init__(self, base: DerivativeStack, shift: int):
        if shift < 0:
            raise SeriesOrderError(f"shift must be >= 0, got {shift}")
        self._base = base
        self._shift = shift
        self.k_max = max(0, base.k_max - (shift + 1) // 2)
        self.growth_rate = base.growth_rate

    def value_at(self, z):
        return self._base.deriv_at(z, self._shift)

    def deriv_at(self, z, order: int):
        return self._base.deriv_at(z, order + self._shift)


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation order K and direction of a series evaluation."""

    truncation_order: int
    direction: str = "inverse"

    def __post_init__(self):
        if self.truncation_order < 0:
            raise SeriesOrderError(
                f"truncation_order must be >= 0, got {self.truncation_order}"
            )
        if self.direction not in ("forward", "inverse"):
            raise ValueError(
                f"direction must be 'forward' or 'inverse', got {self.direction!r}"
            )


def _check_order(stack, order: int) -> None:
    if order > stack.k_max:
        raise SeriesOrderError(
            f"series order {order} exceeds the stack's k_max={stack.k_max}"
        )


def weierstrass_series_scalar(f: DerivativeStack, z, variance: float, config: SeriesConfig):
    """Truncated smoothing series sum_{k<=K} (+-v/2)^k / k! * f^(2k)(z).

    Sign is +1 per term for the forward direction and (-1)^k for the
    inverse. K = 0 returns f(z); variance 0 returns f(z) exactly in either
    direction. Accepts scalar or ndarray z (broadcasts).

    Coefficients are built by the recurrence c_{k+1} = c_k * (+-v/2)/(k+1),
    never through explicit factorials, and accumulation is compensated
    (Kahan) because terms span many orders of magnitude once K grows past
    the mid-teens.
    """
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    _check_order(f, config.truncation_order)
    value = np.asarray(f.deriv_at(z, 0), dtype=float)
    if variance == 0.0 or config.truncation_order == 0:
        return value if value.ndim else float(value)
    half = variance / 2.0 if config.direction == "forward" else -variance / 2.0
    if f.growth_rate is None and config.direction == "inverse":
        warnings.warn(
            "inverse series on a stack without a growth certificate: "
            "convergence is not guaranteed, bias control is empirical only",
            RuntimeWarning,
            stacklevel=2,
        )
    total = value.copy()
    comp = np.zeros_like(total)
    coef = 1.0
    for k in range(1, config.truncation_order + 1):
        coef *= half / k
        term = coef * np.asarray(f.deriv_at(z, 2 * k), dtype=float)
        # Kahan step: carry the low-order bits lost by the running sum.
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total if total.ndim else float(total)


def weierstrass_mc(
    f: Callable,
    z: float,
    variance: float,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo forward transform: mean and standard error of f(z+w).

    ``f`` must accept an ndarray. This is the ground-truth oracle the
    series implementations are tested against; variance 0 short-circuits
    to (f(z), 0.0) exactly.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if variance == 0.0:
        return float(np.asarray(f(np.asarray(z, dtype=float)))), 0.0
    w = rng.normal(0.0, math.sqrt(variance), size=n_samples)
    vals = np.asarray(f(z + w), dtype=float)
    mean = float(vals.mean())
    if n_samples == 1:
        return mean, 0.0
    std_error = float(vals.std(ddof=1) / math.sqrt(n_samples))
    return mean, std_error


def _check_label(y) -> int:
    if y not in (-1, 1, -1.0, 1.0):
        raise LabelError(f"label must be -1 or +1, got {y!r}")
    return int(y)


def bernoulli_forward(g: Callable, y, epsilon_y: float) -> float:
    """Expected value of g under Randomized Response of the label y."""
    y = _check_label(y)
    s = flip_retention_probability(epsilon_y)
    return s * float(g(y)) + (1.0 - s) * float(g(-y))


def bernoulli_inverse(g: Callable, y_tilde, epsilon_y: float) -> float:
    """Inverse label transform S~ g(y~) + (1 - S~) g(-y~).

    Exact two-point inverse of :func:`bernoulli_forward`. Weights diverge
    as epsilon_y -> 0; budgets below 1e-6 trigger a warning because the
    resulting estimator variance is astronomically large.
    """
    y_tilde = _check_label(y_tilde)
    if epsilon_y < 1e-6:
        warnings.warn(
            f"epsilon_y={epsilon_y:.3g} gives inverse weight ~{1.0/epsilon_y:.3g}; "
            "estimates will be dominated by variance",
            RuntimeWarning,
            stacklevel=2,
        )
    s_inv = inverse_weight(epsilon_y)
    return s_inv * float(g(y_tilde)) + (1.0 - s_inv) * float(g(-y_tilde))


def composed_inverse(
    f: DerivativeStack,
    theta: np.ndarray,
    x_tilde: np.ndarray,
    y_tilde,
    budget: PrivacyBudget,
    config: SeriesConfig,
) -> float:
    """Composed inverse transform of a margin loss on one released pair.

    For h(x, y) = f(theta.x * y) this evaluates

        B^-1_{eps_y}[ y -> W^-1_{sigma^2}[h(., y)](x~) ](y~),

    using the scalar reduction: the inner inverse at label y is the
    inverse series of f at variance sigma^2 ||theta||^2 evaluated at the
    released margin theta.x~ * y. The config must request the inverse
    direction.
    """
    if config.direction != "inverse":
        raise ValueError("composed_inverse requires an inverse-direction config")
    theta = np.asarray(theta, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    margin_variance = budget.sigma_squared() * float(theta @ theta)
    base_margin = float(theta @ x_tilde)

    def inner(label: int) -> float:
        return weierstrass_series_scalar(f, base_margin * label, margin_variance, config)

    return bernoulli_inverse(inner, y_tilde, budget.epsilon_y)


def default_eval_points(margin_bound: float, count: int = 41) -> np.ndarray:
    """Uniform bias-evaluation grid on [-margin_bound, +margin_bound].

    Margins of a model with ||theta|| <= R on features with ||x|| <= B live
    in [-R*B, R*B], so that product is the natural bound.
    """
    if margin_bound <= 0:
        raise ValueError(f"margin_bound must be positive, got {margin_bound}")
    return np.linspace(-margin_bound, margin_bound, count)


def truncation_bias_estimate(
    f: DerivativeStack,
    truncation_order: int,
    variance: float,
    eval_points: Sequence[float],
    mc_samples: int,
    rng: np.random.Generator,
) -> float:
    """Sup-over-grid estimate of the truncation bias of the K-cut inverse.

    Estimates max over the grid of |W_v[g_K](z) - f(z)| where g_K is the
    K-truncated inverse series of f at variance v; the forward transform is
    evaluated by Monte-Carlo. This is the empirical bias-control quantity
    for losses whose inverse series does not converge.
    """
    eval_points = np.asarray(eval_points, dtype=float)
    if eval_points.size == 0:
        raise ValueError("eval_points must be nonempty")
    cfg = SeriesConfig(truncation_order, "inverse")
    worst = 0.0
    for z0 in eval_points:
        w = rng.normal(0.0, math.sqrt(variance), size=mc_samples) if variance > 0 else np.zeros(mc_samples)
        approx = np.mean(weierstrass_series_scalar(f, z0 + w, variance, cfg))
        worst = max(worst, abs(float(approx) - float(f.value_at(z0))))
    return worst


def optimal_truncation(
    f: DerivativeStack,
    variance: float,
    k_max: int,
    eval_points: Sequence[float],
    mc_samples: int,
    rng: np.random.Generator,
) -> int:
    """Truncation order in {0..k_max} minimizing the estimated bias.

    Ties break toward the smaller K. All candidate orders are scored on
    the same noise draws (common random numbers), which makes the argmin
    stable under re-runs far beyond what independent estimates would give.
    """
    eval_points = np.asarray(eval_points, dtype=float)
    if eval_points.size == 0:
        raise ValueError("eval_points must be nonempty")
    _check_order(f, k_max)
    sigma = math.sqrt(variance) if variance > 0 else 0.0
    noise = rng.normal(0.0, sigma, size=(eval_points.size, mc_samples)) if sigma else np.zeros((eval_points.size, mc_samples))
    shifted = eval_points[:, None] + noise
    clean = np.array([float(f.value_at(z0)) for z0 in eval_points])

    # Incremental series accumulation shared across K: running the k-th
    # term once serves every candidate order >= k.
    running = np.asarray(f.deriv_at(shifted, 0), dtype=float).copy()
    best_k = 0
    best_bias = float(np.max(np.abs(running.mean(axis=1) - clean)))
    coef = 1.0
    for k in range(1, k_max + 1):
        coef *= (-variance / 2.0) / k
        running += coef * np.asarray(f.deriv_at(shifted, 2 * k), dtype=float)
        bias_k = float(np.max(np.abs(running.mean(axis=1) - clean)))
        if bias_k < best_bias:
            best_bias = bias_k
            best_k = k
    return best_k
