"""Conditional autoencoder factor models with spline-edge beta networks.

Asset returns are modeled as beta(Z) f where beta is a learned function of
lagged characteristics (spline-edge KAN layers, a ReLU MLP baseline, or a
plain bilinear map) and f is a linear readout of ridge-regressed
characteristic-portfolio returns. Both parts train jointly on mean squared
reconstruction error and are evaluated by a recursive rolling backtest.
"""

from .backtest import (
    BacktestReport,
    LossCurves,
    SplitPlan,
    TrainConfig,
    predictive_r2,
    rolling_backtest,
    select_lambda,
    sharpe_long_short,
    total_r2,
    train_model,
)
from .data import (
    Month,
    PanelDataset,
    RawPanel,
    Slice,
    SyntheticConfig,
    apply_lags,
    build_dataset,
    generate_synthetic,
    load_panel,
    normalize_slice,
    save_panel,
)
from .factor_model import (
    ConditionalAutoencoder,
    ModelSpec,
    build_model,
    characteristic_portfolios,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
)
from .nets import BetaNetwork, GradientSet, KanLayer, LinearLayer, MlpLayer, build_beta_network
from .spline import SplineFunction, SplineGrid, init_spline, spline_eval, spline_grad

__version__ = "0.1.0"

__all__ = [
    "BacktestReport",
    "BetaNetwork",
    "ConditionalAutoencoder",
    "GradientSet",
    "KanLayer",
    "LinearLayer",
    "LossCurves",
    "MlpLayer",
    "ModelSpec",
    "Month",
    "PanelDataset",
    "RawPanel",
    "Slice",
    "SplineFunction",
    "SplineGrid",
    "SplitPlan",
    "SyntheticConfig",
    "TrainConfig",
    "apply_lags",
    "build_beta_network",
    "build_dataset",
    "build_model",
    "characteristic_portfolios",
    "generate_synthetic",
    "init_spline",
    "load_checkpoint",
    "load_panel",
    "mse_loss",
    "normalize_slice",
    "predictive_r2",
    "rolling_backtest",
    "save_checkpoint",
    "save_panel",
    "select_lambda",
    "sharpe_long_short",
    "spline_eval",
    "spline_grad",
    "total_r2",
    "train_model",
]
