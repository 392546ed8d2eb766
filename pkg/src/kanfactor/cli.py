"""Command-line entry point: synth, train, backtest, report, export-splines.

Runs are driven by a single JSON config file (all keys optional, defaults
below) plus a few flag overrides. Outputs are staged in a temporary
directory and moved into place only on success, so failed runs leave no
partial artifacts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backtest import (
    SplitPlan,
    TrainConfig,
    _fit_lambda_grid,
    load_report,
    rolling_backtest,
    write_report_files,
)
from .data import (
    Month,
    SyntheticConfig,
    apply_lags,
    build_dataset,
    generate_synthetic,
    load_panel,
    save_panel,
)
from .errors import DataError, KanFactorError, NumericError
from .factor_model import ModelSpec, build_model, load_checkpoint, save_checkpoint
from .nets import KanLayer
from .spline import SplineGrid, spline_eval

log = logging.getLogger(__name__)

SPLINE_CURVE_SAMPLES = 201
SPLINE_CURVE_MARGIN = 0.5


class UsageError(KanFactorError, ValueError):
    """Bad flags or config contents; maps to exit code 1."""


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitPlan = field(default_factory=lambda: SplitPlan(
        train_start=Month(2000, 2),
        val_months=24,
        test_start=Month(2006, 1),
        test_end=Month(2007, 12),
    ))
    synth: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(
        n_assets=50, n_chars=5, n_factors=1, n_months=96, seed=0,
        beta_fn="sine", factor_mean=0.02, factor_vol=0.05, noise_std=0.05,
    ))
    panel: str = "panel.csv"
    out: str = "runs/out"


def _take(section: dict, known: dict, where: str) -> dict:
    unknown = set(section) - set(known)
    if unknown:
        raise UsageError(f"unknown keys in {where}: {sorted(unknown)}")
    merged = dict(known)
    merged.update(section)
    return merged


def _parse_config(payload: dict) -> RunConfig:
    base = RunConfig()
    top = _take(payload, {
        "seed": base.seed, "model": {}, "train": {}, "split": {}, "synth": {},
        "panel": base.panel, "out": base.out,
    }, "config")

    m = _take(top["model"], {
        "kind": base.model.kind, "factors": base.model.n_factors,
        "embed_dim": base.model.embed_dim, "kan_dims": list(base.model.kan_dims),
        "mlp_dims": list(base.model.mlp_dims), "init_noise": base.model.init_noise,
        "grid": {},
    }, "config.model")
    g = _take(m["grid"], {"lo": -1.0, "hi": 1.0, "intervals": 5, "degree": 3}, "config.model.grid")
    model = ModelSpec(
        kind=m["kind"], n_factors=int(m["factors"]), embed_dim=int(m["embed_dim"]),
        kan_dims=tuple(int(d) for d in m["kan_dims"]),
        mlp_dims=tuple(int(d) for d in m["mlp_dims"]),
        grid=SplineGrid(lo=float(g["lo"]), hi=float(g["hi"]),
                        intervals=int(g["intervals"]), degree=int(g["degree"])),
        init_noise=float(m["init_noise"]),
    )

    t = _take(top["train"], {
        "learning_rate": base.train.learning_rate, "max_epochs": base.train.max_epochs,
        "patience": base.train.patience, "batch_months": base.train.batch_months,
        "lambda_grid": list(base.train.lambda_grid), "adam_beta1": base.train.adam_beta1,
        "adam_beta2": base.train.adam_beta2, "adam_eps": base.train.adam_eps,
    }, "config.train")
    train = TrainConfig(
        learning_rate=float(t["learning_rate"]), max_epochs=int(t["max_epochs"]),
        patience=int(t["patience"]), batch_months=int(t["batch_months"]),
        seed=int(top["seed"]), lambda_grid=tuple(float(x) for x in t["lambda_grid"]),
        adam_beta1=float(t["adam_beta1"]), adam_beta2=float(t["adam_beta2"]),
        adam_eps=float(t["adam_eps"]),
    )

    s = _take(top["split"], {
        "train_start": str(base.split.train_start), "val_months": base.split.val_months,
        "test_start": str(base.split.test_start), "test_end": str(base.split.test_end),
        "refit_step": base.split.refit_step,
    }, "config.split")
    split = SplitPlan(
        train_start=Month.parse(s["train_start"]), val_months=int(s["val_months"]),
        test_start=Month.parse(s["test_start"]), test_end=Month.parse(s["test_end"]),
        refit_step=int(s["refit_step"]),
    )

    y = _take(top["synth"], {
        "n_assets": base.synth.n_assets, "n_chars": base.synth.n_chars,
        "n_factors": base.synth.n_factors, "n_months": base.synth.n_months,
        "beta_fn": base.synth.beta_fn, "factor_mean": base.synth.factor_mean,
        "factor_vol": base.synth.factor_vol, "noise_std": base.synth.noise_std,
        "signal_r2": base.synth.signal_r2, "start": str(base.synth.start),
    }, "config.synth")
    synth = SyntheticConfig(
        n_assets=int(y["n_assets"]), n_chars=int(y["n_chars"]),
        n_factors=int(y["n_factors"]), n_months=int(y["n_months"]),
        seed=int(top["seed"]), beta_fn=y["beta_fn"],
        factor_mean=tuple(y["factor_mean"]) if isinstance(y["factor_mean"], list) else float(y["factor_mean"]),
        factor_vol=tuple(y["factor_vol"]) if isinstance(y["factor_vol"], list) else float(y["factor_vol"]),
        noise_std=float(y["noise_std"]),
        signal_r2=None if y["signal_r2"] is None else float(y["signal_r2"]),
        start=Month.parse(y["start"]),
    )

    return RunConfig(seed=int(top["seed"]), model=model, train=train, split=split,
                     synth=synth, panel=top["panel"], out=top["out"])


def load_config(args: argparse.Namespace) -> RunConfig:
    payload: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise UsageError(f"config file {path} is not valid JSON: {err}") from None
    if getattr(args, "seed", None) is not None:
        payload["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        payload["out"] = args.out
    if getattr(args, "panel", None) is not None:
        payload["panel"] = args.panel
    if getattr(args, "model", None) is not None:
        payload.setdefault("model", {})["kind"] = args.model
    if getattr(args, "factors", None) is not None:
        payload.setdefault("model", {})["factors"] = args.factors
    try:
        cfg = _parse_config(payload)
    except (ValueError, TypeError) as err:
        if isinstance(err, UsageError):
            raise
        raise UsageError(f"invalid config: {err}") from None
    return cfg


@contextlib.contextmanager
def staged_output(out_dir):
    """Stage files in a temp dir; move them into out_dir only on success."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.partial-", dir=out_dir.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    out_dir.mkdir(parents=True, exist_ok=True)
    for item in sorted(tmp.iterdir()):
        os.replace(item, out_dir / item.name)
    tmp.rmdir()


def _load_dataset(cfg: RunConfig):
    raw = load_panel(cfg.panel)
    return build_dataset(apply_lags(raw))


def _truth_payload(truth) -> dict:
    return {
        "beta_fn": truth.beta_fn,
        "factor_mean": truth.factor_mean.tolist(),
        "factor_cov": truth.factor_cov.tolist(),
        "noise_std": truth.noise_std,
        "signal_r2": truth.signal_r2,
        "gamma": None if truth.gamma is None else truth.gamma.tolist(),
    }


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    panel, truth = generate_synthetic(cfg.synth)
    with staged_output(cfg.out) as tmp:
        save_panel(panel, tmp / "panel.csv", tmp / "panel.meta.json")
        (tmp / "truth.json").write_text(json.dumps(_truth_payload(truth), indent=1) + "\n")
    print(f"wrote synthetic panel ({cfg.synth.n_assets} assets x {cfg.synth.n_months} months) "
          f"to {cfg.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    dataset = _load_dataset(cfg)
    split = cfg.split
    val_start = split.test_start.plus(-split.val_months)
    train_slices = dataset.window(split.train_start, val_start)
    val_slices = dataset.window(val_start, split.test_start)
    if not train_slices or not val_slices:
        raise DataError("empty train or validation window; check the split against the panel")

    def factory(lam: float):
        return build_model(cfg.model, dataset.n_chars, lam, seed=cfg.seed)

    lam, model, curves = _fit_lambda_grid(factory, train_slices, val_slices, cfg.train)
    with staged_output(cfg.out) as tmp:
        save_checkpoint(model, tmp / "checkpoint.json")
        with open(tmp / "loss_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, (tr, va) in enumerate(zip(curves.train, curves.val)):
                writer.writerow([epoch, repr(tr), repr(va)])
        (tmp / "train.json").write_text(json.dumps({
            "chosen_lambda": lam,
            "best_epoch": curves.best_epoch,
            "epochs_run": len(curves.train),
            "train_months": len(train_slices),
            "val_months": len(val_slices),
        }, indent=1) + "\n")
    print(f"trained {cfg.model.kind} model (lambda={lam}) -> {cfg.out}")
    return 0


def cmd_backtest(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    dataset = _load_dataset(cfg)
    report = rolling_backtest(dataset, cfg.split, cfg.train, cfg.model)
    with staged_output(cfg.out) as tmp:
        write_report_files(report, tmp)
    print(f"backtest {cfg.model.kind}/{cfg.model.n_factors}: "
          f"total R2 {report.total_r2_pct:.4g}%, "
          f"predictive R2 {report.predictive_r2_pct:.4g}%, "
          f"Sharpe {report.sharpe_annualized:.4g} -> {cfg.out}")
    return 0


METRIC_ROWS = (
    ("total_r2_pct", "total R2 (%)"),
    ("predictive_r2_pct", "predictive R2 (%)"),
    ("sharpe_annualized", "Sharpe (annualized)"),
)


def cmd_report(args: argparse.Namespace) -> int:
    reports = []
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise DataError(f"report file not found: {p}")
        try:
            reports.append(load_report(p))
        except (ValueError, KeyError) as err:
            raise DataError(f"malformed report {p}: {err}") from None
    try:
        headers = [f"{r['model_kind']}/{r['num_factors']}" for r in reports]
        width = max(len(h) for h in headers) + 2
        lines = ["metric".ljust(24) + "".join(h.rjust(max(width, 12)) for h in headers)]
        for key, label in METRIC_ROWS:
            cells = [f"{r['pooled'][key]:.4g}".rjust(max(width, 12)) for r in reports]
            lines.append(label.ljust(24) + "".join(cells))
    except (KeyError, TypeError) as err:
        raise DataError(f"malformed report: missing field {err}") from None
    print("\n".join(lines))
    return 0


def cmd_export_splines(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    net = model.beta_net
    if net.kind != "kan":
        raise DataError(f"checkpoint holds a {net.kind!r} model; spline export needs kind=kan")
    with staged_output(args.out) as tmp:
        count = 0
        for layer_idx, layer in enumerate(net.hidden):
            assert isinstance(layer, KanLayer)
            grid = layer.grid
            xs = np.linspace(grid.lo - SPLINE_CURVE_MARGIN, grid.hi + SPLINE_CURVE_MARGIN,
                             SPLINE_CURVE_SAMPLES)
            for i in range(layer.n_out):
                for j in range(layer.n_in):
                    edge = layer.edge(i, j)
                    name = f"layer{layer_idx:02d}_out{i:03d}_in{j:03d}.csv"
                    with open(tmp / name, "w", newline="") as fh:
                        writer = csv.writer(fh)
                        writer.writerow(["x", "phi_x"])
                        for x in xs:
                            writer.writerow([repr(float(x)), repr(spline_eval(edge, float(x)))])
                    count += 1
    print(f"exported {count} edge curves to {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are exit 1 here
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="kanfactor", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, panel=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--model", choices=("kan", "mlp", "linear"), help="beta network kind")
        p.add_argument("--factors", type=int, help="number of latent factors")
        if panel:
            p.add_argument("--panel", help="panel CSV path")

    p_synth = sub.add_parser("synth", help="generate a synthetic panel with planted structure")
    add_common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one model on the initial split")
    add_common(p_train, panel=True)
    p_train.set_defaults(func=cmd_train)

    p_back = sub.add_parser("backtest", help="run the recursive rolling backtest")
    add_common(p_back, panel=True)
    p_back.set_defaults(func=cmd_backtest)

    p_rep = sub.add_parser("report", help="print pooled metrics from report files")
    p_rep.add_argument("reports", nargs="+", help="report.json path(s)")
    p_rep.set_defaults(func=cmd_report)

    p_exp = sub.add_parser("export-splines", help="dump each learned edge as a curve CSV")
    p_exp.add_argument("checkpoint", help="model checkpoint (kind=kan)")
    p_exp.add_argument("--out", required=True, help="output directory")
    p_exp.set_defaults(func=cmd_export_splines)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
