"""The conditional autoencoder: beta network times estimated factor returns.

For one month with returns r (N,) and lagged characteristics z (N, P):

    x      = (z'z + lambda I)^-1 z' r     characteristic-portfolio returns
    f_hat  = w0 @ x                       linear factor network
    beta   = beta_net(z)                  exposures from characteristics
    r_hat  = beta @ f_hat                 reconstructed cross-section

The mean squared error between r_hat and r trains both networks jointly.
x is treated as a fixed encoding of (z, r): no gradient flows through the
ridge solve.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .linalg import as_matrix, as_vector, ridge_solve
from .nets import BetaNetwork, GradientSet, LinearLayer, beta_from_payload, beta_to_payload, build_beta_network
from .spline import SplineGrid

__all__ = [
    "FactorNetwork",
    "ConditionalAutoencoder",
    "SlicePrediction",
    "ModelSpec",
    "characteristic_portfolios",
    "mse_loss",
    "build_model",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "kanfactor-checkpoint"


def characteristic_portfolios(z, r, lam: float) -> np.ndarray:
    """Cross-sectional regression coefficients of returns on characteristics.

    These are the returns of the P characteristic portfolios; with lam = 0
    they are the plain OLS coefficients. Warns when the cross-section is
    smaller than the number of characteristics.
    """
    z = as_matrix(z)
    r = as_vector(r, length=z.shape[0])
    if z.shape[0] < z.shape[1]:
        warnings.warn(
            f"cross-section has {z.shape[0]} assets for {z.shape[1]} characteristics; "
            "portfolio returns will be poorly determined",
            stacklevel=2,
        )
    return ridge_solve(z, r, lam)


def mse_loss(pred, actual) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to the prediction."""
    pred = as_vector(pred)
    actual = as_vector(actual, length=pred.shape[0])
    if pred.shape[0] == 0:
        raise ValueError("mse_loss needs at least one observation")
    diff = pred - actual
    loss = float(diff @ diff) / pred.shape[0]
    return loss, (2.0 / pred.shape[0]) * diff


@dataclass
class SlicePrediction:
    """Model outputs for one month: by construction r_hat = beta @ f_hat."""

    r_hat: np.ndarray
    f_hat: np.ndarray
    x_t: np.ndarray
    beta: np.ndarray


@dataclass
class ModelCache:
    beta_cache: list
    beta: np.ndarray
    f_hat: np.ndarray
    x_t: np.ndarray


class FactorNetwork:
    """One bias-free linear map from portfolio returns to K factor returns."""

    def __init__(self, w0: LinearLayer):
        self.w0 = w0

    @property
    def n_factors(self) -> int:
        return self.w0.n_out

    @property
    def n_chars(self) -> int:
        return self.w0.n_in


class ConditionalAutoencoder:
    def __init__(self, beta_net: BetaNetwork, factor_net: FactorNetwork, ridge_lambda: float):
        if beta_net.n_factors != factor_net.n_factors:
            raise ShapeError(
                f"beta network yields {beta_net.n_factors} factors, "
                f"factor network has {factor_net.n_factors}"
            )
        if beta_net.n_chars != factor_net.n_chars:
            raise ShapeError(
                f"beta network reads {beta_net.n_chars} characteristics, "
                f"factor network reads {factor_net.n_chars}"
            )
        if ridge_lambda < 0:
            raise ValueError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
        self.beta_net = beta_net
        self.factor_net = factor_net
        self.ridge_lambda = ridge_lambda

    @property
    def n_chars(self) -> int:
        return self.beta_net.n_chars

    @property
    def n_factors(self) -> int:
        return self.beta_net.n_factors

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"beta.{k}": v for k, v in self.beta_net.parameters().items()}
        out["factor.w0"] = self.factor_net.w0.weight
        return out

    def forward(self, z, r, x_t: np.ndarray | None = None):
        """Predict one month. ``x_t`` may be supplied to reuse a cached solve."""
        z = as_matrix(z, cols=self.n_chars)
        r = as_vector(r, length=z.shape[0])
        if x_t is None:
            x_t = characteristic_portfolios(z, r, self.ridge_lambda)
        f_hat = self.factor_net.w0.weight @ x_t
        beta, beta_cache = self.beta_net.forward(z)
        r_hat = beta @ f_hat
        pred = SlicePrediction(r_hat=r_hat, f_hat=f_hat, x_t=x_t, beta=beta)
        return pred, ModelCache(beta_cache=beta_cache, beta=beta, f_hat=f_hat, x_t=x_t)

    def backward(self, cache, dpred: np.ndarray) -> GradientSet:
        """Gradients of every parameter given d(loss)/d(r_hat).

        Product rule: the beta path sees dpred f_hat', the factor path sees
        beta' dpred pushed onto w0 against the fixed x_t.
        """
        if not isinstance(cache, ModelCache):
            raise ValueError("backward needs the cache returned by forward")
        dpred = as_vector(dpred, length=cache.beta.shape[0])
        dbeta = np.outer(dpred, cache.f_hat)
        _, beta_grads = self.beta_net.backward(cache.beta_cache, dbeta)
        df_hat = cache.beta.T @ dpred
        dw0 = np.outer(df_hat, cache.x_t)
        grads = {f"beta.{k}": v for k, v in beta_grads.items()}
        grads["factor.w0"] = dw0
        return GradientSet(grads)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description, enough to build a model deterministically."""

    kind: str = "kan"
    n_factors: int = 1
    embed_dim: int = 16
    kan_dims: tuple[int, ...] = (16,)
    mlp_dims: tuple[int, ...] = (32, 16)
    grid: SplineGrid = field(default_factory=SplineGrid)
    init_noise: float = 0.1


def build_model(spec: ModelSpec, n_chars: int, ridge_lambda: float, seed: int) -> ConditionalAutoencoder:
    """Build and initialize a model; bit-reproducible for a fixed seed."""
    rng = np.random.default_rng(seed)
    beta_net = build_beta_network(
        spec.kind,
        n_chars,
        spec.n_factors,
        embed_dim=spec.embed_dim,
        kan_dims=spec.kan_dims,
        mlp_dims=spec.mlp_dims,
        grid=spec.grid,
        init_noise=spec.init_noise,
        rng=rng,
    )
    bound = np.sqrt(6.0 / (spec.n_factors + n_chars))
    w0 = LinearLayer(rng.uniform(-bound, bound, size=(spec.n_factors, n_chars)))
    return ConditionalAutoencoder(beta_net, FactorNetwork(w0), ridge_lambda)


def model_to_payload(model: ConditionalAutoencoder) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "ridge_lambda": model.ridge_lambda,
        "beta": beta_to_payload(model.beta_net),
        "factor_w0": model.factor_net.w0.weight.tolist(),
    }


def model_from_payload(payload: dict) -> ConditionalAutoencoder:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: format={payload.get('format')!r}")
    beta_net = beta_from_payload(payload["beta"])
    w0 = LinearLayer(np.array(payload["factor_w0"], dtype=np.float64))
    return ConditionalAutoencoder(beta_net, FactorNetwork(w0), payload["ridge_lambda"])


def save_checkpoint(model: ConditionalAutoencoder, path) -> None:
    """Write the model as JSON; floats round-trip bit-exactly."""
    Path(path).write_text(json.dumps(model_to_payload(model), indent=1) + "\n")


def load_checkpoint(path) -> ConditionalAutoencoder:
    return model_from_payload(json.loads(Path(path).read_text()))
