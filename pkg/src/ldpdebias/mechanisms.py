"""One-shot local-privacy release of examples.

Features are privatized with the Gaussian mechanism at noise scale

    sigma^2 = 8 * ln(1.25/delta) * ||X||^2 / epsilon_x^2,

where ``||X||`` is the L2 bound on feature vectors, and binary labels with
Randomized Response, which keeps the label with probability
``S(eps) = 1 / (1 + exp(-eps))``. The total guarantee of the joint release
is ``epsilon_x + epsilon_y`` (delta is attributed entirely to the feature
mechanism in classification mode; Randomized Response is pure epsilon-DP).

Each record is released exactly once per budget object: re-releasing the
same record requires a fresh :class:`PrivacyBudget`. This keeps the
one-shot contract auditable at the API level.

No attempt is made at floating-point side-channel hardening (discrete
Gaussians etc.); the noise model here is the statistical one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, LabelError, NormBoundError, OneShotError

__all__ = [
    "PrivacyBudget",
    "RawRecord",
    "LdpRecord",
    "gaussian_sigma_squared",
    "flip_retention_probability",
    "inverse_weight",
    "gaussian_release",
    "randomized_response",
    "ldp_release",
]

# Relative slack when checking ||x|| <= feature_norm_bound, so records scaled
# exactly onto the boundary upstream are not rejected for float round-off.
_NORM_CHECK_RTOL = 1e-9


@dataclass
class PrivacyBudget:
    """Privacy parameters of a one-shot release.

    Parameters
    ----------
    epsilon_x : float
        Feature budget (Gaussian mechanism), > 0.
    epsilon_y : float
        Label budget (Randomized Response), > 0.
    delta : float
        Gaussian-mechanism delta, in (0, 1).
    feature_norm_bound : float
        L2 bound ||X|| on raw feature vectors, > 0.

    Notes
    -----
    The budget also tracks which records it has already released so that a
    single-budget double release is rejected (one-shot contract).
    """

    epsilon_x: float
    epsilon_y: float
    delta: float
    feature_norm_bound: float = 1.0
    _spent_ids: set = field(default_factory=set, repr=False, compare=False)
    _exhausted: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.epsilon_x > 0 and self.epsilon_y > 0):
            raise BudgetError(
                f"epsilon_x and epsilon_y must be positive, got "
                f"({self.epsilon_x}, {self.epsilon_y})"
            )
        if not 0.0 < self.delta < 1.0:
            raise BudgetError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.feature_norm_bound > 0:
            raise BudgetError(
                f"feature_norm_bound must be positive, got {self.feature_norm_bound}"
            )

    @classmethod
    def split(
        cls,
        total_epsilon: float,
        delta: float,
        feature_norm_bound: float = 1.0,
        feature_share: float = 0.5,
    ) -> "PrivacyBudget":
        """Split a total epsilon between features and labels.

        The default 50/50 split is a symmetric convention; nothing in the
        release mechanism prescribes one.
        """
        if not 0.0 < feature_share < 1.0:
            raise BudgetError(f"feature_share must lie in (0, 1), got {feature_share}")
        return cls(
            epsilon_x=total_epsilon * feature_share,
            epsilon_y=total_epsilon * (1.0 - feature_share),
            delta=delta,
            feature_norm_bound=feature_norm_bound,
        )

    def total_epsilon(self) -> float:
        """Total guarantee of the joint release, epsilon_x + epsilon_y."""
        return self.epsilon_x + self.epsilon_y

    def sigma_squared(self) -> float:
        """Gaussian noise variance per feature coordinate."""
        return (
            8.0
            * math.log(1.25 / self.delta)
            * self.feature_norm_bound**2
            / self.epsilon_x**2
        )

    def _mark_released(self, record: "RawRecord") -> None:
        if self._exhausted:
            raise OneShotError(
                "budget already spent on a dataset-level release; "
                "use a fresh PrivacyBudget"
            )
        if id(record) in self._spent_ids:
            raise OneShotError(
                "record already released under this budget; one-shot release "
                "requires a fresh PrivacyBudget per re-release"
            )
        self._spent_ids.add(id(record))

    def _mark_exhausted(self) -> None:
        if self._exhausted:
            raise OneShotError(
                "budget already spent on a dataset-level release; "
                "use a fresh PrivacyBudget"
            )
        self._exhausted = True


@dataclass
class RawRecord:
    """One clean example (x, y); label is +-1 in classification mode."""

    features: np.ndarray
    label: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 1:
            raise LabelError(
                f"features must be a 1-d vector, got shape {self.features.shape}"
            )


@dataclass
class LdpRecord:
    """One released example (x_tilde, y_tilde), produced once per RawRecord."""

    features_noisy: np.ndarray
    label_noisy: float


def gaussian_sigma_squared(budget: PrivacyBudget) -> float:
    """Noise variance of the Gaussian mechanism for this budget.

    Returns ``8 * ln(1.25/delta) * feature_norm_bound^2 / epsilon_x^2``.
    Strictly decreasing in epsilon_x and growing as delta shrinks.
    """
    return budget.sigma_squared()


def flip_retention_probability(epsilon_y: float) -> float:
    """Randomized Response retention probability S(eps) = 1/(1+e^(-eps)).

    Lies in (1/2, 1) for every positive budget.
    """
    if not epsilon_y > 0:
        raise BudgetError(f"epsilon_y must be positive, got {epsilon_y}")
    return 1.0 / (1.0 + math.exp(-epsilon_y))


def inverse_weight(epsilon_y: float) -> float:
    """Inverse-transform weight S~(eps) = 1/(1-e^(-eps)); always > 1.

    Satisfies S~(eps) * (S~(eps) - 1) = e^eps / (e^eps - 1)^2.

    Diverges as eps -> 0+: below eps ~ 1e-6 the weight exceeds 1e6 and
    estimators built from it carry correspondingly huge variance. This is
    inherent to inverting Randomized Response, not a numerical defect; the
    value returned stays finite for any positive eps.
    """
    if not epsilon_y > 0:
        raise BudgetError(f"epsilon_y must be positive, got {epsilon_y}")
    # -expm1(-eps) = 1 - e^(-eps), accurate for tiny eps.
    return 1.0 / (-math.expm1(-epsilon_y))


def gaussian_release(x, sigma_squared: float, rng: np.random.Generator):
    """Add i.i.d. N(0, sigma_squared) noise to every coordinate of x.

    Parameters
    ----------
    x : array_like
        Feature vector of shape (p,), or a batch of shape (n, p); noise is
        independent per coordinate either way.
    sigma_squared : float
        Noise variance, > 0 (a zero limit is handled exactly).
    rng : numpy.random.Generator

    Returns
    -------
    numpy.ndarray of the same shape as x.
    """
    if sigma_squared < 0:
        raise BudgetError(f"sigma_squared must be nonnegative, got {sigma_squared}")
    x = np.asarray(x, dtype=float)
    if sigma_squared == 0.0:
        return x.copy()
    return x + rng.normal(0.0, math.sqrt(sigma_squared), size=x.shape)


def randomized_response(y, epsilon_y: float, rng: np.random.Generator):
    """Release a +-1 label, kept with probability S(epsilon_y).

    Accepts a scalar label or a vector of labels; flips are independent.
    """
    s = flip_retention_probability(epsilon_y)
    y_arr = np.asarray(y)
    if not np.all(np.isin(y_arr, (-1, 1))):
        raise LabelError(f"labels must be in {{-1, +1}}, got {y!r}")
    keep = rng.random(size=y_arr.shape) < s
    out = np.where(keep, y_arr, -y_arr)
    if np.ndim(y) == 0:
        return float(out)
    return out.astype(float)


def ldp_release(
    record: RawRecord, budget: PrivacyBudget, rng: np.random.Generator
) -> LdpRecord:
    """One-shot release of a single record under the given budget.

    Features go through the Gaussian mechanism at ``budget.sigma_squared()``;
    the binary label through Randomized Response at ``budget.epsilon_y``.
    Raises :class:`NormBoundError` if the feature norm exceeds the budget's
    bound (records are rejected, not clipped: clipping belongs to the data
    preparation step, keeping the privacy-critical operation total and
    auditable), and :class:`OneShotError` on a repeated release under the
    same budget object.
    """
    norm = float(np.linalg.norm(record.features))
    bound = budget.feature_norm_bound
    if norm > bound * (1.0 + _NORM_CHECK_RTOL):
        raise NormBoundError(
            f"feature norm {norm:.6g} exceeds the budget bound {bound:.6g}"
        )
    budget._mark_released(record)
    x_noisy = gaussian_release(record.features, budget.sigma_squared(), rng)
    y_noisy = randomized_response(record.label, budget.epsilon_y, rng)
    return LdpRecord(features_noisy=x_noisy, label_noisy=y_noisy)
