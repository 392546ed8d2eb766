"""Panel data model: loading, lagging, normalization, synthetic generation.

A raw panel is a list of (month, asset) observations carrying an excess
return and P named characteristics, each tagged with an observation
frequency. Characteristics become usable with a delay that depends on the
frequency: monthly values one month later, quarterly values four months
later, annual values twelve months later; between availability dates the
most recent available value carries forward. Returns are never lagged.

A dataset is the month-by-month sequence of slices the model consumes:
returns paired with the lagged characteristics, each characteristic
rank-normalized into [-1, 1] cross-sectionally, missing values imputed to
the cross-sectional median rank (zero).

The synthetic generator plants a known exposure structure on the exact
normalized matrices the pipeline will reconstruct, so model recovery can
be measured against ground truth.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DuplicateKeyError, SchemaError

__all__ = [
    "Month",
    "Observation",
    "RawPanel",
    "Slice",
    "PanelDataset",
    "SyntheticConfig",
    "SyntheticTruth",
    "FREQUENCY_LAG_MONTHS",
    "load_panel",
    "save_panel",
    "apply_lags",
    "normalize_slice",
    "build_dataset",
    "generate_synthetic",
]

log = logging.getLogger(__name__)

FREQUENCY_LAG_MONTHS = {"monthly": 1, "quarterly": 4, "annual": 12}


@dataclass(frozen=True, order=True)
class Month:
    """A calendar year-month, ordered, with integer month arithmetic."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be 1..12, got {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        parts = text.strip().split("-")
        if len(parts) != 2:
            raise ValueError(f"expected YYYY-MM, got {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    @property
    def index(self) -> int:
        return self.year * 12 + self.month - 1

    @classmethod
    def from_index(cls, idx: int) -> "Month":
        return cls(idx // 12, idx % 12 + 1)

    def plus(self, months: int) -> "Month":
        return Month.from_index(self.index + months)

    def months_since(self, other: "Month") -> int:
        return self.index - other.index

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


@dataclass
class Observation:
    """One asset-month row; NaN marks a missing return or characteristic."""

    month: Month
    asset_id: str
    ret_excess: float
    chars: np.ndarray


@dataclass
class RawPanel:
    characteristic_names: list[str]
    frequencies: dict[str, str]
    observations: list[Observation]
    lagged: bool = False

    def __post_init__(self):
        for name in self.characteristic_names:
            freq = self.frequencies.get(name)
            if freq not in FREQUENCY_LAG_MONTHS:
                raise DataError(f"characteristic {name!r} has invalid frequency {freq!r}")
        seen: set[tuple[int, str]] = set()
        months: set[int] = set()
        for obs in self.observations:
            key = (obs.month.index, obs.asset_id)
            if key in seen:
                raise DuplicateKeyError(f"duplicate observation ({obs.month}, {obs.asset_id!r})")
            seen.add(key)
            months.add(obs.month.index)
        if months:
            lo, hi = min(months), max(months)
            gaps = [str(Month.from_index(i)) for i in range(lo, hi + 1) if i not in months]
            if gaps:
                raise DataError(f"panel months are not contiguous; missing {gaps[:5]}")

    @property
    def months(self) -> list[Month]:
        return sorted({obs.month for obs in self.observations})


@dataclass
class Slice:
    """One month of model input: returns at t, lagged normalized characteristics."""

    month: Month
    asset_ids: list[str]
    z: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        n = len(self.asset_ids)
        if self.z.shape[0] != n or self.r.shape != (n,):
            raise DataError(f"slice {self.month}: inconsistent sizes")
        if not np.all(np.isfinite(self.z)) or not np.all(np.isfinite(self.r)):
            raise DataError(f"slice {self.month}: non-finite entries after imputation")
        if self.z.size and (self.z.min() < -1.0 or self.z.max() > 1.0):
            raise DataError(f"slice {self.month}: characteristics outside [-1, 1]")


@dataclass
class PanelDataset:
    months: list[Slice]
    characteristic_names: list[str]

    def __post_init__(self):
        for a, b in zip(self.months, self.months[1:]):
            if not a.month < b.month:
                raise DataError("slices must be strictly increasing in date")
        for s in self.months:
            if s.z.shape[1] != len(self.characteristic_names):
                raise DataError(f"slice {s.month} has {s.z.shape[1]} characteristic columns")

    @property
    def n_chars(self) -> int:
        return len(self.characteristic_names)

    def window(self, start: Month, end: Month) -> list[Slice]:
        """Slices with start <= month < end."""
        return [s for s in self.months if start <= s.month < end]


def _format_cell(value: float) -> str:
    return "" if np.isnan(value) else repr(float(value))


def save_panel(panel: RawPanel, path, meta_path=None) -> None:
    """Write the panel CSV and its frequency-metadata sidecar."""
    path = Path(path)
    meta_path = Path(meta_path) if meta_path else path.with_suffix(".meta.json")
    rows = sorted(panel.observations, key=lambda o: (o.month.index, o.asset_id))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "asset_id", "ret_excess", *panel.characteristic_names])
        for obs in rows:
            writer.writerow([
                str(obs.month),
                obs.asset_id,
                _format_cell(obs.ret_excess),
                *(_format_cell(v) for v in obs.chars),
            ])
    meta = {"frequencies": {name: panel.frequencies[name] for name in panel.characteristic_names}}
    meta_path.write_text(json.dumps(meta, indent=1) + "\n")


def _parse_cell(text: str, row_num: int, col: str) -> float:
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"row {row_num}: cannot parse {col}={text!r} as a number") from None


def load_panel(path, meta_path=None) -> RawPanel:
    """Read a panel CSV plus its metadata sidecar; validates the schema."""
    path = Path(path)
    meta_path = Path(meta_path) if meta_path else path.with_suffix(".meta.json")
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    if not meta_path.exists():
        raise DataError(f"panel metadata file not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    frequencies = meta.get("frequencies")
    if not isinstance(frequencies, dict):
        raise SchemaError(f"{meta_path}: expected a 'frequencies' mapping")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header[:3] != ["date", "asset_id", "ret_excess"]:
            raise SchemaError(f"{path}: header must start with date,asset_id,ret_excess")
        char_names = header[3:]
        observations = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"row {row_num}: expected {len(header)} cells, got {len(row)}")
            try:
                month = Month.parse(row[0])
            except ValueError as err:
                raise SchemaError(f"row {row_num}: {err}") from None
            ret = _parse_cell(row[2], row_num, "ret_excess")
            chars = np.array(
                [_parse_cell(cell, row_num, name) for name, cell in zip(char_names, row[3:])]
            )
            observations.append(Observation(month, row[1], ret, chars))
    return RawPanel(
        characteristic_names=char_names,
        frequencies={name: frequencies.get(name) for name in char_names},
        observations=observations,
    )


def apply_lags(raw: RawPanel) -> RawPanel:
    """Shift characteristics to their availability dates.

    A value observed at month s becomes available at s + lag(frequency) and
    carries forward until superseded. Early months with no available value
    stay missing. Returns are untouched.
    """
    if raw.lagged:
        raise DataError("panel is already lagged")
    lags = [FREQUENCY_LAG_MONTHS[raw.frequencies[name]] for name in raw.characteristic_names]

    by_asset: dict[str, list[Observation]] = {}
    for obs in raw.observations:
        by_asset.setdefault(obs.asset_id, []).append(obs)

    new_obs = []
    for asset_id in sorted(by_asset):
        rows = sorted(by_asset[asset_id], key=lambda o: o.month.index)
        # Per characteristic: months (sorted) at which a value was observed.
        observed: list[tuple[list[int], list[float]]] = []
        for p in range(len(raw.characteristic_names)):
            months_p = [o.month.index for o in rows if not np.isnan(o.chars[p])]
            values_p = [o.chars[p] for o in rows if not np.isnan(o.chars[p])]
            observed.append((months_p, values_p))
        for obs in rows:
            lagged = np.full(len(raw.characteristic_names), np.nan)
            for p, lag_p in enumerate(lags):
                months_p, values_p = observed[p]
                # latest s with s + lag <= t
                pos = bisect.bisect_right(months_p, obs.month.index - lag_p)
                if pos > 0:
                    lagged[p] = values_p[pos - 1]
            new_obs.append(Observation(obs.month, obs.asset_id, obs.ret_excess, lagged))
    return RawPanel(
        characteristic_names=list(raw.characteristic_names),
        frequencies=dict(raw.frequencies),
        observations=new_obs,
        lagged=True,
    )


def normalize_slice(values: np.ndarray) -> np.ndarray:
    """Map one characteristic's cross-section to ranks in [-1, 1].

    Non-missing values get averaged ranks scaled so the smallest maps to -1
    and the largest to +1 (a single value maps to 0). Missing values (NaN)
    are imputed to 0, the median rank.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 1:
        raise ValueError("normalize_slice expects a non-empty 1-d array")
    out = np.zeros_like(values)
    mask = ~np.isnan(values)
    n = int(mask.sum())
    if n > 1:
        ranks = rankdata(values[mask], method="average")
        out[mask] = -1.0 + 2.0 * (ranks - 1.0) / (n - 1.0)
    return out


def build_dataset(raw: RawPanel) -> PanelDataset:
    """Assemble monthly slices from a lagged panel.

    Keeps only assets with an observed return each month; normalizes each
    characteristic column cross-sectionally. Months with no eligible assets
    are skipped with a warning.
    """
    if not raw.lagged:
        raise DataError("build_dataset needs a lagged panel; call apply_lags first")
    by_month: dict[int, list[Observation]] = {}
    for obs in raw.observations:
        by_month.setdefault(obs.month.index, []).append(obs)

    slices = []
    for midx in sorted(by_month):
        rows = [o for o in by_month[midx] if not np.isnan(o.ret_excess)]
        if not rows:
            log.warning("month %s has no assets with observed returns; skipped", Month.from_index(midx))
            continue
        rows.sort(key=lambda o: o.asset_id)
        raw_z = np.stack([o.chars for o in rows])
        z = np.column_stack([normalize_slice(raw_z[:, p]) for p in range(raw_z.shape[1])])
        slices.append(Slice(
            month=Month.from_index(midx),
            asset_ids=[o.asset_id for o in rows],
            z=z,
            r=np.array([o.ret_excess for o in rows]),
        ))
    return PanelDataset(months=slices, characteristic_names=list(raw.characteristic_names))


BETA_FUNCTIONS = ("linear", "sine", "quadratic")


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings: panel dimensions plus the planted structure."""

    n_assets: int
    n_chars: int
    n_factors: int
    n_months: int
    seed: int
    beta_fn: str = "linear"
    factor_mean: float | tuple[float, ...] = 0.0
    factor_vol: float | tuple[float, ...] = 0.05
    noise_std: float = 0.05
    signal_r2: float | None = None
    start: Month = Month(2000, 1)

    def __post_init__(self):
        if min(self.n_assets, self.n_chars, self.n_factors, self.n_months) < 1:
            raise DataError("n_assets, n_chars, n_factors, n_months must all be >= 1")
        if self.beta_fn not in BETA_FUNCTIONS:
            raise DataError(f"beta_fn must be one of {BETA_FUNCTIONS}, got {self.beta_fn!r}")
        if self.beta_fn in ("sine", "quadratic") and self.n_chars < self.n_factors:
            raise DataError(f"{self.beta_fn} exposures need n_chars >= n_factors")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.signal_r2 is not None and not 0.0 < self.signal_r2 < 1.0:
            raise DataError("signal_r2 must lie strictly between 0 and 1")


@dataclass
class SyntheticTruth:
    """The planted generator, recorded so recovery can be checked."""

    beta_fn: str
    factor_mean: np.ndarray
    factor_cov: np.ndarray
    noise_std: float
    signal_r2: float | None
    gamma: np.ndarray | None = None

    def exposures(self, z_normalized: np.ndarray) -> np.ndarray:
        """True exposures as a function of the normalized characteristics."""
        k = self.factor_mean.shape[0]
        if self.beta_fn == "linear":
            return z_normalized @ self.gamma
        if self.beta_fn == "sine":
            return np.sin(np.pi * z_normalized[:, :k])
        if self.beta_fn == "quadratic":
            return z_normalized[:, :k] ** 2 - 1.0 / 3.0
        raise ValueError(f"unknown beta_fn {self.beta_fn!r}")


def _as_vector_param(value, k: int) -> np.ndarray:
    arr = np.full(k, float(value)) if np.isscalar(value) else np.asarray(value, dtype=np.float64)
    if arr.shape != (k,):
        raise DataError(f"expected scalar or length-{k} sequence, got shape {arr.shape}")
    return arr


def generate_synthetic(cfg: SyntheticConfig) -> tuple[RawPanel, SyntheticTruth]:
    """Simulate a panel with planted factor structure.

    Characteristics are i.i.d. uniform on [-1, 1] per asset-month, tagged
    monthly (so they lag by one month). Returns at month t are
    beta(Z~_t) f_t + eps_t where Z~_t is the rank-normalized matrix of the
    characteristics observed at t-1, exactly what the pipeline rebuilds.
    The first month has no prior characteristics and carries no returns.

    When signal_r2 is set, the noise level is derived so the planted signal
    explains that fraction of return variance; it overrides noise_std.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p, k, t = cfg.n_assets, cfg.n_chars, cfg.n_factors, cfg.n_months

    chars = rng.uniform(-1.0, 1.0, size=(t, n, p))
    mean = _as_vector_param(cfg.factor_mean, k)
    vol = _as_vector_param(cfg.factor_vol, k)
    cov = np.diag(vol**2)
    factors = mean + rng.standard_normal(size=(t, k)) * vol

    gamma = None
    if cfg.beta_fn == "linear":
        gamma = rng.standard_normal(size=(p, k)) / np.sqrt(p)
    truth = SyntheticTruth(
        beta_fn=cfg.beta_fn,
        factor_mean=mean,
        factor_cov=cov,
        noise_std=cfg.noise_std,
        signal_r2=cfg.signal_r2,
        gamma=gamma,
    )

    signal = np.zeros((t, n))
    for month in range(1, t):
        z_norm = np.column_stack(
            [normalize_slice(chars[month - 1, :, j]) for j in range(p)]
        )
        signal[month] = truth.exposures(z_norm) @ factors[month]

    noise_std = cfg.noise_std
    if cfg.signal_r2 is not None:
        var_signal = float(np.var(signal[1:]))
        noise_std = float(np.sqrt(var_signal * (1.0 - cfg.signal_r2) / cfg.signal_r2))
        truth.noise_std = noise_std
    returns = signal + rng.normal(0.0, noise_std, size=(t, n)) if noise_std > 0 else signal.copy()
    returns[0] = np.nan

    digits = max(4, len(str(n - 1)))
    asset_ids = [f"A{i:0{digits}d}" for i in range(n)]
    names = [f"c{j:02d}" for j in range(p)]
    observations = [
        Observation(cfg.start.plus(month), asset_ids[i], returns[month, i], chars[month, i].copy())
        for month in range(t)
        for i in range(n)
    ]
    panel = RawPanel(
        characteristic_names=names,
        frequencies={name: "monthly" for name in names},
        observations=observations,
    )
    return panel, truth
