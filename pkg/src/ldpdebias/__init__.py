"""Bias-corrected learning from one-shot locally private data releases.

The library covers the full pipeline: privacy mechanisms that release
features and labels once under a fixed budget, smoothing transforms
whose inverses undo the noise in expectation, debiased loss/gradient
estimators for GLM margin losses, a projected SGD that trains directly
on released data, and Monte Carlo self-checks for every closed form.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, config_hash, load_config, save_config
from .data import (
    ColumnSchema,
    ColumnSpec,
    DatasetSpec,
    generate_synthetic,
    ingest_csv,
    release_dataset,
    split,
)
from .errors import (
    BudgetError,
    BudgetMismatchError,
    ConfigError,
    DataError,
    DimensionError,
    LabelError,
    LdpDebiasError,
    ModeError,
    NormBoundError,
    OneShotError,
    SeriesOrderError,
)
from .losses import (
    ExponentialLoss,
    GlmLoss,
    LogisticLoss,
    ModelState,
    QuadraticLoss,
    RegularizerConfig,
    grad,
    iwp_grad,
    iwp_loss,
    loss,
    noisy_risk_closed_form_exponential,
    regression_debiased_grad,
    w_inv_glm,
)
from .mechanisms import (
    LdpRecord,
    PrivacyBudget,
    RawRecord,
    flip_retention_probability,
    gaussian_release,
    gaussian_sigma_squared,
    inverse_weight,
    ldp_release,
    randomized_response,
)
from .optimizer import SgdConfig, TrainTrace, evaluate, fit_reference, iwp_sgd, sgd_plain
from .transforms import (
    SeriesConfig,
    bernoulli_forward,
    bernoulli_inverse,
    composed_inverse,
    optimal_truncation,
    truncation_bias_estimate,
    weierstrass_mc,
    weierstrass_series_scalar,
)
from .validation import McReport, Z_THRESHOLD
