"""Training, hyperparameter selection, the rolling protocol, and metrics.

The protocol: starting at the first test month, refit the model every
``refit_step`` months. Each refit trains on an expanding window from
``train_start`` up to the start of a fixed-length validation window that
ends just before the refit date, picks the ridge penalty by validation
loss, then predicts the next ``refit_step`` test months out of sample.

Metrics follow the pooled, un-demeaned convention: R2 = 1 - SSE / sum r^2
over all test asset-months. Total R2 scores the reconstruction from
contemporaneous fitted factors; predictive R2 scores beta times the
prevailing historical mean of fitted factors. The long-short Sharpe ranks
assets each month by that premium prediction, trades the top against the
bottom decile equal-weighted, and annualizes by sqrt(12).
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Month, PanelDataset, Slice
from .errors import (
    DegenerateSeriesError,
    PlanError,
    ShapeError,
    TrainingDivergedError,
)
from .factor_model import (
    ConditionalAutoencoder,
    ModelSpec,
    build_model,
    characteristic_portfolios,
    model_to_payload,
    mse_loss,
)
from .nets import GradientSet

__all__ = [
    "TrainConfig",
    "SplitPlan",
    "OptimizerState",
    "LossCurves",
    "RefitRecord",
    "MonthPrediction",
    "BacktestReport",
    "adam_step",
    "train_model",
    "select_lambda",
    "rolling_backtest",
    "total_r2",
    "predictive_r2",
    "sharpe_long_short",
    "write_report_files",
    "load_report",
]

log = logging.getLogger(__name__)

REPORT_FORMAT = "kanfactor-report"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    batch_months: int = 4
    seed: int = 0
    lambda_grid: tuple[float, ...] = (0.01, 0.1, 1.0)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.batch_months < 1:
            raise ValueError("batch_months must be >= 1")
        if not self.lambda_grid:
            raise ValueError("lambda_grid must be non-empty")
        if any(lam < 0 for lam in self.lambda_grid):
            raise ValueError("lambda candidates must be >= 0")


@dataclass(frozen=True)
class SplitPlan:
    """Date layout of the recursive protocol.

    Training runs from train_start to the validation window, which spans
    the val_months immediately before each refit date; refits occur every
    refit_step months from test_start through test_end (inclusive).
    """

    train_start: Month
    val_months: int
    test_start: Month
    test_end: Month
    refit_step: int = 12

    def __post_init__(self):
        if self.val_months < 1 or self.refit_step < 1:
            raise ValueError("val_months and refit_step must be >= 1")
        if not self.train_start < self.test_start.plus(-self.val_months):
            raise ValueError("training window is empty: move test_start later")
        if self.test_end < self.test_start:
            raise ValueError("test_end precedes test_start")

    def refit_dates(self) -> list[Month]:
        dates = []
        d = self.test_start
        while d <= self.test_end:
            dates.append(d)
            d = d.plus(self.refit_step)
        return dates


class OptimizerState:
    """Adam first/second moment estimates plus the step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: GradientSet,
    state: OptimizerState,
    cfg: TrainConfig,
) -> None:
    """One in-place Adam update with bias correction."""
    grads.check_congruent(params)
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class LossCurves:
    """Mean train/validation loss per epoch and the restored epoch index."""

    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    best_epoch: int = -1


def _portfolio_returns(slices: Sequence[Slice], lam: float) -> list[np.ndarray]:
    return [characteristic_portfolios(s.z, s.r, lam) for s in slices]


def _slice_loss(model: ConditionalAutoencoder, s: Slice, x: np.ndarray):
    pred, cache = model.forward(s.z, s.r, x_t=x)
    if not np.all(np.isfinite(pred.r_hat)):
        raise TrainingDivergedError(f"non-finite prediction for month {s.month}")
    loss, dpred = mse_loss(pred.r_hat, s.r)
    return loss, dpred, cache


def _mean_loss(model: ConditionalAutoencoder, slices: Sequence[Slice], xs: Sequence[np.ndarray]) -> float:
    total = 0.0
    for s, x in zip(slices, xs):
        loss, _, _ = _slice_loss(model, s, x)
        total += loss
    return total / len(slices)


def train_model(
    model: ConditionalAutoencoder,
    train_slices: Sequence[Slice],
    val_slices: Sequence[Slice],
    cfg: TrainConfig,
) -> tuple[ConditionalAutoencoder, LossCurves]:
    """Minibatch training with early stopping on validation loss.

    Each epoch visits the training months once in a freshly shuffled order
    (seeded), in batches of batch_months slices with equal month weights.
    After each epoch the mean train and validation losses are recorded; the
    parameters from the best validation epoch are restored at the end.
    """
    if not train_slices or not val_slices:
        raise ValueError("train and validation slice lists must be non-empty")
    curves = LossCurves()
    if cfg.max_epochs == 0:
        return model, curves

    lam = model.ridge_lambda
    train_x = _portfolio_returns(train_slices, lam)
    val_x = _portfolio_returns(val_slices, lam)

    params = model.parameters()
    state = OptimizerState(params)
    rng = np.random.default_rng(cfg.seed)
    best_val = np.inf
    best_params: dict[str, np.ndarray] | None = None
    stall = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_slices))
        for lo in range(0, len(order), cfg.batch_months):
            batch = order[lo : lo + cfg.batch_months]
            grads = GradientSet.zeros_like(params)
            for idx in batch:
                s = train_slices[idx]
                loss, dpred, cache = _slice_loss(model, s, train_x[idx])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, month {s.month}"
                    )
                grads.add_scaled(model.backward(cache, dpred), 1.0 / len(batch))
            adam_step(params, grads, state, cfg)

        train_loss = _mean_loss(model, train_slices, train_x)
        val_loss = _mean_loss(model, val_slices, val_x)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(f"non-finite epoch loss at epoch {epoch}")
        curves.train.append(train_loss)
        curves.val.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            curves.best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break

    if best_params is not None:
        for name, arr in params.items():
            arr[...] = best_params[name]
    return model, curves


def _fit_lambda_grid(
    model_factory: Callable[[float], ConditionalAutoencoder],
    train_slices: Sequence[Slice],
    val_slices: Sequence[Slice],
    cfg: TrainConfig,
) -> tuple[float, ConditionalAutoencoder, LossCurves]:
    """Train one model per ridge candidate; keep the best validation loss.

    Ties go to the smaller candidate (the grid is scanned in ascending
    order with strict improvement).
    """
    best: tuple[float, ConditionalAutoencoder, LossCurves] | None = None
    best_val = np.inf
    for lam in sorted(cfg.lambda_grid):
        model, curves = train_model(model_factory(lam), train_slices, val_slices, cfg)
        final_val = curves.val[curves.best_epoch] if curves.val else np.inf
        if final_val < best_val:
            best_val = final_val
            best = (lam, model, curves)
    assert best is not None
    return best


def select_lambda(
    model_factory: Callable[[float], ConditionalAutoencoder],
    train_slices: Sequence[Slice],
    val_slices: Sequence[Slice],
    cfg: TrainConfig,
) -> float:
    """The ridge penalty whose trained model validates best."""
    lam, _, _ = _fit_lambda_grid(model_factory, train_slices, val_slices, cfg)
    return lam


def pooled_r2(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """100 * (1 - SSE / sum of squared returns), pooled over all pairs."""
    if not pairs:
        raise ValueError("no prediction pairs supplied")
    sse = 0.0
    denom = 0.0
    for pred, actual in pairs:
        pred = np.asarray(pred, dtype=np.float64)
        actual = np.asarray(actual, dtype=np.float64)
        if pred.shape != actual.shape:
            raise ShapeError(f"prediction shape {pred.shape} != {actual.shape}")
        sse += float(np.sum((actual - pred) ** 2))
        denom += float(np.sum(actual**2))
    if denom == 0.0:
        raise DegenerateSeriesError("all realized returns are zero; R2 is undefined")
    return 100.0 * (1.0 - sse / denom)


def total_r2(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Explanatory R2 of reconstructions from contemporaneous fitted factors."""
    return pooled_r2(pairs)


def predictive_r2(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """R2 of premium predictions beta @ mean(fitted factors to date)."""
    return pooled_r2(pairs)


def sharpe_long_short(
    months: Sequence[tuple[Month, Sequence[str], np.ndarray, np.ndarray]],
    min_assets: int = 10,
) -> float:
    """Annualized Sharpe of the monthly top-minus-bottom decile spread.

    Each entry is (month, asset_ids, predicted, realized). Assets are
    ranked by prediction, ties broken by asset_id; each side holds
    max(1, N // 10) names equal-weighted. Months with fewer than
    ``min_assets`` assets are skipped with a warning.
    """
    spreads = []
    for month, asset_ids, predicted, realized in months:
        n = len(asset_ids)
        if n < min_assets:
            log.warning("month %s has %d assets (< %d); skipped in Sharpe", month, n, min_assets)
            continue
        order = sorted(range(n), key=lambda i: (-float(predicted[i]), asset_ids[i]))
        n_dec = max(1, n // 10)
        long_leg = float(np.mean([realized[i] for i in order[:n_dec]]))
        short_leg = float(np.mean([realized[i] for i in order[-n_dec:]]))
        spreads.append(long_leg - short_leg)
    if len(spreads) < 2:
        raise DegenerateSeriesError(f"need >= 2 usable months for a Sharpe ratio, got {len(spreads)}")
    series = np.array(spreads)
    std = float(series.std())
    if std == 0.0:
        raise DegenerateSeriesError("long-short spread has zero variance")
    return float(series.mean() / std * np.sqrt(12.0))


@dataclass
class MonthPrediction:
    """Out-of-sample outputs for one test month."""

    month: Month
    asset_ids: list[str]
    fitted: np.ndarray   # beta @ f_hat, contemporaneous factor realization
    premium: np.ndarray  # beta @ mean of fitted factors up to the refit
    realized: np.ndarray


@dataclass
class RefitRecord:
    refit_date: Month
    chosen_lambda: float
    train_months: int
    val_months: int
    curves: LossCurves
    model: ConditionalAutoencoder


@dataclass
class BacktestReport:
    model_kind: str
    num_factors: int
    per_refit: list[RefitRecord]
    predictions: list[MonthPrediction]
    total_r2_pct: float
    predictive_r2_pct: float
    sharpe_annualized: float


def _pooled_metrics(predictions: Sequence[MonthPrediction]) -> tuple[float, float, float]:
    tot = total_r2([(p.fitted, p.realized) for p in predictions])
    prd = predictive_r2([(p.premium, p.realized) for p in predictions])
    shp = sharpe_long_short([(p.month, p.asset_ids, p.premium, p.realized) for p in predictions])
    return tot, prd, shp


def rolling_backtest(
    panel: PanelDataset,
    plan: SplitPlan,
    cfg: TrainConfig,
    spec: ModelSpec,
) -> BacktestReport:
    """Run the recursive protocol over the panel and pool the test metrics."""
    if not panel.months:
        raise PlanError("panel has no slices")
    first, last = panel.months[0].month, panel.months[-1].month
    if plan.train_start < first or last < plan.test_end:
        raise PlanError(
            f"plan spans {plan.train_start}..{plan.test_end} but panel covers {first}..{last}"
        )

    refits: list[RefitRecord] = []
    predictions: list[MonthPrediction] = []
    for refit_date in plan.refit_dates():
        val_start = refit_date.plus(-plan.val_months)
        train_slices = panel.window(plan.train_start, val_start)
        val_slices = panel.window(val_start, refit_date)
        if not train_slices or not val_slices:
            raise PlanError(f"refit {refit_date}: empty train or validation window")

        def factory(lam: float, _spec=spec, _n=panel.n_chars) -> ConditionalAutoencoder:
            return build_model(_spec, _n, lam, seed=cfg.seed)

        lam, model, curves = _fit_lambda_grid(factory, train_slices, val_slices, cfg)
        refits.append(RefitRecord(
            refit_date=refit_date,
            chosen_lambda=lam,
            train_months=len(train_slices),
            val_months=len(val_slices),
            curves=curves,
            model=model,
        ))

        history = train_slices + val_slices
        fitted_factors = np.stack([
            model.factor_net.w0.weight @ x for x in _portfolio_returns(history, lam)
        ])
        premium = fitted_factors.mean(axis=0)

        test_end_excl = min(refit_date.plus(plan.refit_step), plan.test_end.plus(1))
        for s in panel.window(refit_date, test_end_excl):
            pred, _ = model.forward(s.z, s.r)
            predictions.append(MonthPrediction(
                month=s.month,
                asset_ids=list(s.asset_ids),
                fitted=pred.r_hat,
                premium=pred.beta @ premium,
                realized=s.r.copy(),
            ))

    tot, prd, shp = _pooled_metrics(predictions)
    return BacktestReport(
        model_kind=spec.kind,
        num_factors=spec.n_factors,
        per_refit=refits,
        predictions=predictions,
        total_r2_pct=tot,
        predictive_r2_pct=prd,
        sharpe_annualized=shp,
    )


def _write_predictions_csv(path: Path, predictions: Sequence[MonthPrediction], column: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "asset_id", "predicted", "realized"])
        for p in predictions:
            values = getattr(p, column)
            for asset_id, pred, realized in zip(p.asset_ids, values, p.realized):
                writer.writerow([str(p.month), asset_id, repr(float(pred)), repr(float(realized))])


def write_report_files(report: BacktestReport, out_dir) -> None:
    """Emit report.json, both predictions CSVs, loss curves, and checkpoints.

    predictions.csv holds the contemporaneous reconstructions that back
    total R2; premium_predictions.csv holds the beta-times-premium
    forecasts that back predictive R2 and the Sharpe portfolio.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_refit = []
    for rec in report.per_refit:
        curve_name = f"loss_curve_{rec.refit_date}.csv"
        ckpt_name = f"checkpoint_{rec.refit_date}.json"
        with open(out_dir / curve_name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, (tr, va) in enumerate(zip(rec.curves.train, rec.curves.val)):
                writer.writerow([epoch, repr(tr), repr(va)])
        (out_dir / ckpt_name).write_text(
            json.dumps(model_to_payload(rec.model), indent=1) + "\n"
        )
        per_refit.append({
            "refit_date": str(rec.refit_date),
            "chosen_lambda": rec.chosen_lambda,
            "train_months": rec.train_months,
            "val_months": rec.val_months,
            "best_epoch": rec.curves.best_epoch,
            "epochs_run": len(rec.curves.train),
            "curve_csv": curve_name,
            "checkpoint": ckpt_name,
        })
    payload = {
        "format": REPORT_FORMAT,
        "version": 1,
        "model_kind": report.model_kind,
        "num_factors": report.num_factors,
        "pooled": {
            "total_r2_pct": report.total_r2_pct,
            "predictive_r2_pct": report.predictive_r2_pct,
            "sharpe_annualized": report.sharpe_annualized,
        },
        "test_months": len(report.predictions),
        "per_refit": per_refit,
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=1) + "\n")
    _write_predictions_csv(out_dir / "predictions.csv", report.predictions, "fitted")
    _write_predictions_csv(out_dir / "premium_predictions.csv", report.predictions, "premium")


def load_report(path) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != REPORT_FORMAT:
        raise ValueError(f"not a backtest report: format={payload.get('format')!r}")
    return payload
