"""Scenario data: synthetic generation, CSV ingestion, detrending, losses.

CSV formats (UTF-8, header row, '.' decimal, full-precision repr floats):

  yields.csv     county,year,yield
  weather.csv    county,year,index,m1,...,m12   (one row per weather variable)
  scenarios.csv  id,prob,loss[,w0_m1,...,w{rows-1}_m12]

The synthetic generator draws standard-normal weather grids and builds
losses from a fixed smooth rule of the grid (see synthetic_loss_rule) plus
optional noise that is independent of the grid; the basis_risk_level is
the ratio of the noise standard deviation to the signal standard
deviation, so level 0 makes losses exactly index-measurable.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .choquet import DomainError
from .game import ScenarioSet
from .payoff import MONTHS, softplus

__all__ = [
    "YieldRecord",
    "WeatherRecord",
    "DetrendResult",
    "detrend",
    "to_losses",
    "synthetic_loss_rule",
    "synth_generate",
    "scenarios_from_records",
    "write_scenarios_csv",
    "read_scenarios_csv",
    "write_yields_csv",
    "read_yields_csv",
    "write_weather_csv",
    "read_weather_csv",
]

DEFAULT_ROWS = 6
# row order of the default synthetic grids and of ingested weather matrices
INDEX_NAMES = ("pcpn", "tmax", "tmin", "dpt", "vpdmax", "vpdmin")


@dataclass(frozen=True)
class YieldRecord:
    county: str
    year: int
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise DomainError(f"yield must be >= 0, got {self.value}")


@dataclass(frozen=True)
class WeatherRecord:
    county: str
    year: int
    grid: np.ndarray  # (rows, 12)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 2 or g.shape[1] != MONTHS:
            raise DomainError(f"weather grid must be (rows, {MONTHS}), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DomainError("weather grid entries must be finite")
        object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class DetrendResult:
    """Quadratic-in-time fit of a yield series.

    coefficients (c0, c1, c2) apply to centered time t = year - t_center;
    detrended = residuals + level, where level is the fitted trend value at
    the final observed year (so detrended yields live at the end-of-sample
    technology level).
    """

    detrended: np.ndarray
    residuals: np.ndarray
    coefficients: tuple
    t_center: float
    level: float


def detrend(records) -> DetrendResult:
    """Least-squares quadratic detrend of a single yield series."""
    records = list(records)
    years = np.array([r.year for r in records], dtype=float)
    values = np.array([r.value for r in records], dtype=float)
    if np.unique(years).size < 3:
        raise DomainError("detrend needs at least 3 distinct years")
    t_center = years.mean()
    t = years - t_center
    design = np.column_stack((np.ones_like(t), t, t * t))
    coef, _, _, _ = np.linalg.lstsq(design, values, rcond=None)
    residuals = values - design @ coef
    t_last = years.max() - t_center
    level = float(coef[0] + coef[1] * t_last + coef[2] * t_last**2)
    return DetrendResult(
        detrended=residuals + level,
        residuals=residuals,
        coefficients=tuple(float(c) for c in coef),
        t_center=float(t_center),
        level=level,
    )


def to_losses(detrended_yields, price: float) -> np.ndarray:
    """Shortfall losses (max_yield - yield) * price; >= 0 with a zero at the max."""
    if price <= 0:
        raise DomainError(f"price must be > 0, got {price}")
    y = np.asarray(detrended_yields, dtype=float)
    if y.size == 0:
        raise DomainError("empty yield series")
    return (y.max() - y) * price


def synthetic_loss_rule(weather: np.ndarray) -> np.ndarray:
    """The documented grid-to-loss rule used by the synthetic generator.

    With grid rows (pcpn, tmax, ...) over 12 months:

      heat    = mean of row 1 over months 6-8
      dryness = -(mean of row 0 over months 5-9)
      loss    = 6*softplus(heat) + 4*softplus(dryness)
                + 3*softplus(heat + dryness - 1)

    Smooth, nonnegative, nonlinear with a heat/dryness interaction term.
    Accepts (rows, 12) or (n, rows, 12).
    """
    w = np.asarray(weather, dtype=float)
    if w.shape[-2] < 2 or w.shape[-1] != MONTHS:
        raise DomainError(f"loss rule needs grids with >= 2 rows and {MONTHS} months")
    heat = w[..., 1, 5:8].mean(axis=-1)
    dryness = -w[..., 0, 4:9].mean(axis=-1)
    return (6.0 * softplus(heat) + 4.0 * softplus(dryness)
            + 3.0 * softplus(heat + dryness - 1.0))


def synth_generate(seed: int, n: int, basis_risk_level: float,
                   rows: int = DEFAULT_ROWS) -> ScenarioSet:
    """Seeded synthetic scenario set with equal probabilities 1/n."""
    if n < 2:
        raise DomainError(f"need at least 2 scenarios, got {n}")
    if basis_risk_level < 0:
        raise DomainError(f"basis_risk_level must be >= 0, got {basis_risk_level}")
    rng = np.random.default_rng(seed)
    weather = rng.standard_normal((n, rows, MONTHS))
    signal = synthetic_loss_rule(weather)
    noise = rng.standard_normal(n) * signal.std() * basis_risk_level
    losses = np.maximum(signal + noise, 0.0)
    return ScenarioSet(losses=losses, probs=np.full(n, 1.0 / n), weather=weather)


def scenarios_from_records(yield_records, weather_records=None,
                           price: float = 1.0) -> ScenarioSet:
    """Pool county-year records into one equal-weight empirical distribution.

    Yields are detrended per county, then losses are taken against the
    pooled maximum.  When weather records are given, every county-year must
    have a matching grid.
    """
    yield_records = list(yield_records)
    if not yield_records:
        raise DomainError("no yield records")
    seen = set()
    for r in yield_records:
        key = (r.county, r.year)
        if key in seen:
            raise DomainError(f"duplicate yield record for {key}")
        seen.add(key)

    by_county = {}
    for r in yield_records:
        by_county.setdefault(r.county, []).append(r)
    detrended = {}
    for county, recs in by_county.items():
        res = detrend(recs)
        for r, v in zip(recs, res.detrended):
            detrended[(r.county, r.year)] = v

    pooled = np.array([detrended[(r.county, r.year)] for r in yield_records])
    losses = to_losses(pooled, price)

    weather = None
    if weather_records:
        grids = {(w.county, w.year): w.grid for w in weather_records}
        missing = [(r.county, r.year) for r in yield_records
                   if (r.county, r.year) not in grids]
        if missing:
            raise DomainError(f"missing weather for county-years: {missing[:5]}")
        weather = np.stack([grids[(r.county, r.year)] for r in yield_records])

    n = len(yield_records)
    return ScenarioSet(losses=losses, probs=np.full(n, 1.0 / n), weather=weather)


# -- CSV round trips ----------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scenarios_csv(path, scenarios: ScenarioSet):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        header = ["id", "prob", "loss"]
        rows = 0
        if scenarios.weather is not None:
            rows = scenarios.weather.shape[1]
            header += [f"w{r}_m{m}" for r in range(rows) for m in range(1, MONTHS + 1)]
        w.writerow(header)
        for i in range(len(scenarios)):
            row = [i, _fmt(scenarios.probs[i]), _fmt(scenarios.losses[i])]
            if rows:
                row += [_fmt(v) for v in scenarios.weather[i].ravel()]
            w.writerow(row)


def read_scenarios_csv(path) -> ScenarioSet:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:3] != ["id", "prob", "loss"]:
            raise DomainError(f"scenarios csv must start with id,prob,loss; got {header[:3]}")
        extra = len(header) - 3
        if extra % MONTHS != 0:
            raise DomainError(f"weather columns must come in groups of {MONTHS}")
        rows = extra // MONTHS
        probs, losses, grids = [], [], []
        for rec in reader:
            probs.append(float(rec[1]))
            losses.append(float(rec[2]))
            if rows:
                grids.append(np.array(rec[3:], dtype=float).reshape(rows, MONTHS))
    weather = np.stack(grids) if rows else None
    return ScenarioSet(losses=np.array(losses), probs=np.array(probs), weather=weather)


def write_yields_csv(path, records):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["county", "year", "yield"])
        for r in records:
            w.writerow([r.county, r.year, _fmt(r.value)])


def read_yields_csv(path):
    out = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            out.append(YieldRecord(rec["county"], int(rec["year"]), float(rec["yield"])))
    return out


def write_weather_csv(path, records):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["county", "year", "index"] + [f"m{m}" for m in range(1, MONTHS + 1)])
        for r in records:
            for i in range(r.grid.shape[0]):
                w.writerow([r.county, r.year, i] + [_fmt(v) for v in r.grid[i]])


def read_weather_csv(path):
    rows_by_key = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            key = (rec["county"], int(rec["year"]))
            idx = int(rec["index"])
            vals = [float(rec[f"m{m}"]) for m in range(1, MONTHS + 1)]
            rows_by_key.setdefault(key, {})[idx] = vals
    out = []
    for (county, year), idx_rows in rows_by_key.items():
        grid = np.array([idx_rows[i] for i in sorted(idx_rows)], dtype=float)
        out.append(WeatherRecord(county, year, grid))
    return out
