"""Latitude-weighted evaluation: RMSE and anomaly correlation with the
area weighting alpha(h) = cos(lat)/mean(cos), plus the slicing used in
the analyses (latitude bands, rectangular regions, per-month grouping,
per-grid-point error maps).

All metrics operate on single-variable (H, W) fields.  Every operation
has an unvectorized oracle twin in the test suite.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, StructuralError
from .geometry import Graticule, latitude_weights

BAND_EDGES = {"low": (0.0, 30.0), "mid": (30.0, 60.0), "high": (60.0, 90.0)}


def _check_pair(pred, truth, weights):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise StructuralError(
            f"prediction shape {pred.shape} and truth shape {truth.shape} must be equal 2-d fields")
    if weights.shape != (pred.shape[0],):
        raise StructuralError(
            f"weights shape {weights.shape} does not match {pred.shape[0]} rows")
    return pred, truth, weights


def lat_rmse(pred, truth, weights) -> float:
    """sqrt( (1/(H*W)) sum_{h,w} alpha(h) (pred - truth)^2 )."""
    pred, truth, weights = _check_pair(pred, truth, weights)
    sq = (pred - truth) ** 2
    return float(np.sqrt(np.mean(weights[:, None] * sq)))


def lat_acc(pred, truth, climatology, weights) -> float:
    """Latitude-weighted cosine similarity of anomalies about climatology."""
    pred, truth, weights = _check_pair(pred, truth, weights)
    clim = np.asarray(climatology, dtype=float)
    if clim.shape != pred.shape:
        raise StructuralError(
            f"climatology shape {clim.shape} does not match field shape {pred.shape}")
    pa = pred - clim
    ta = truth - clim
    w = weights[:, None]
    num = float(np.sum(w * pa * ta))
    pn = float(np.sum(w * pa**2))
    tn = float(np.sum(w * ta**2))
    if pn <= 0.0 or tn <= 0.0:
        raise DegenerateInputError("anomaly field has zero weighted norm; ACC undefined")
    return num / np.sqrt(pn * tn)


def band_rows(grid: Graticule, band: str) -> np.ndarray:
    """Boolean row mask for a |latitude| band.

    Bands are half-open on the lower edge: low = [0, 30), mid = [30, 60),
    high = [60, 90].  Together they partition the rows.
    """
    if band not in BAND_EDGES:
        raise ConfigurationError(f"unknown band {band!r}; expected one of {sorted(BAND_EDGES)}")
    lo, hi = BAND_EDGES[band]
    a = np.abs(grid.lat_deg)
    mask = (a >= lo) & (a < hi)
    if hi == 90.0:
        mask |= a == 90.0
    return mask


def _sliced_weights(grid: Graticule, row_mask: np.ndarray, what: str) -> np.ndarray:
    if not row_mask.any():
        raise DegenerateInputError(f"{what} selects no grid rows")
    w = latitude_weights(grid)[row_mask]
    m = w.mean()
    if m <= 0.0:
        raise DegenerateInputError(f"{what} selects only zero-weight rows")
    return w / m


def band_slice(field_2d, grid: Graticule, band: str) -> tuple[np.ndarray, np.ndarray]:
    """Rows of one |latitude| band plus weights renormalized to mean 1."""
    field_2d = np.asarray(field_2d)
    if field_2d.shape[0] != grid.num_lat:
        raise StructuralError(
            f"field has {field_2d.shape[0]} rows, grid has {grid.num_lat}")
    mask = band_rows(grid, band)
    return field_2d[mask], _sliced_weights(grid, mask, f"band {band!r}")


@dataclass(frozen=True)
class RegionBox:
    """Inclusive lat/lon bounding box; lon_min > lon_max wraps the dateline."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def describe(self) -> str:
        return (f"lat [{self.lat_min:g}, {self.lat_max:g}], "
                f"lon [{self.lon_min:g}, {self.lon_max:g}]")


# Package defaults, not standardized boxes; reports always print the
# coordinates actually used.
REGION_PRESETS = {
    "north_america": RegionBox(15.0, 75.0, -170.0, -50.0),
    "europe": RegionBox(35.0, 75.0, -15.0, 45.0),
}


def region_indices(grid: Graticule, box: RegionBox) -> tuple[np.ndarray, np.ndarray]:
    row_mask = (grid.lat_deg >= box.lat_min) & (grid.lat_deg <= box.lat_max)
    lon = grid.lon_deg
    if box.lon_min <= box.lon_max:
        col_mask = (lon >= box.lon_min) & (lon <= box.lon_max)
    else:
        col_mask = (lon >= box.lon_min) | (lon <= box.lon_max)
    return row_mask, np.where(col_mask)[0]


def region_slice(field_2d, grid: Graticule, box: RegionBox) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular crop plus weights renormalized over retained rows."""
    field_2d = np.asarray(field_2d)
    if field_2d.shape[0] != grid.num_lat:
        raise StructuralError(
            f"field has {field_2d.shape[0]} rows, grid has {grid.num_lat}")
    row_mask, cols = region_indices(grid, box)
    if cols.size == 0:
        raise DegenerateInputError(f"region {box.describe()} selects no grid columns")
    sub = field_2d[row_mask][:, cols]
    return sub, _sliced_weights(grid, row_mask, f"region {box.describe()}")


def error_map(preds, truths) -> np.ndarray:
    """Per-grid-point RMSE across a sequence of (H, W) field pairs."""
    preds = [np.asarray(p, dtype=float) for p in preds]
    truths = [np.asarray(t, dtype=float) for t in truths]
    if not preds or len(preds) != len(truths):
        raise DegenerateInputError("error_map needs matching, nonempty sequences")
    shape = preds[0].shape
    for p, t in zip(preds, truths):
        if p.shape != shape or t.shape != shape:
            raise StructuralError("error_map fields must share one shape")
    acc = np.zeros(shape)
    for p, t in zip(preds, truths):
        acc += (p - t) ** 2
    return np.sqrt(acc / len(preds))


# ---------------------------------------------------------------------------
# report assembly

@dataclass
class MetricRecord:
    window: str          # weeks34 | weeks56
    variable: str
    slice_name: str      # global | band:low | region:europe | month:01
    rmse: float
    acc: float | None
    n_samples: int


@dataclass
class EvalReport:
    records: list[MetricRecord] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)
    error_maps: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def add(self, window, variable, slice_name, rmse, acc, n_samples):
        if acc is not None and not -1.0 - 1e-9 <= acc <= 1.0 + 1e-9:
            raise StructuralError(f"ACC {acc!r} outside [-1, 1]")
        if rmse < 0:
            raise StructuralError(f"negative RMSE {rmse!r}")
        self.records.append(MetricRecord(window, variable, slice_name, rmse, acc, n_samples))

    def lookup(self, window, variable, slice_name="global") -> MetricRecord:
        for r in self.records:
            if (r.window, r.variable, r.slice_name) == (window, variable, slice_name):
                return r
        raise KeyError((window, variable, slice_name))

    def mean_rmse(self, slice_name="global") -> float:
        vals = [r.rmse for r in self.records if r.slice_name == slice_name]
        if not vals:
            raise KeyError(slice_name)
        return float(np.mean(vals))

    def to_table_text(self) -> str:
        lines = [f"# {k} = {v}" for k, v in sorted(self.metadata.items())]
        lines.append("window\tvariable\tslice\trmse\tacc\tn_samples")
        for r in self.records:
            acc = "" if r.acc is None else repr(r.acc)
            lines.append(f"{r.window}\t{r.variable}\t{r.slice_name}\t{r.rmse!r}\t{acc}\t{r.n_samples}")
        return "\n".join(lines) + "\n"

    def to_keyvalue_text(self) -> str:
        lines = [f"meta.{k} = {v}" for k, v in sorted(self.metadata.items())]
        for r in self.records:
            slug = r.slice_name.replace(":", "_")
            base = f"{r.window}.{r.variable}.{slug}"
            lines.append(f"{base}.rmse = {r.rmse!r}")
            if r.acc is not None:
                lines.append(f"{base}.acc = {r.acc!r}")
            lines.append(f"{base}.n = {r.n_samples}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table_text(cls, text: str) -> "EvalReport":
        report = cls()
        lines = []
        for ln in text.splitlines():
            if not ln.strip():
                continue
            if ln.startswith("#"):
                body = ln.lstrip("# ")
                if " = " in body:
                    key, value = body.split(" = ", 1)
                    report.metadata[key] = value
                continue
            lines.append(ln)
        if not lines or lines[0].split("\t")[0] != "window":
            raise ConfigurationError("not a metric table: missing header line")
        for ln in lines[1:]:
            window, variable, slice_name, rmse, acc, n = ln.split("\t")
            report.add(window, variable, slice_name, float(rmse),
                       float(acc) if acc else None, int(n))
        return report


@dataclass
class ForecastCase:
    """One evaluated forecast in physical units."""

    init_date: datetime.date
    pred34: np.ndarray
    pred56: np.ndarray
    truth34: np.ndarray
    truth56: np.ndarray


def _per_case_metrics(cases, grid, var_index, climatology, weights, row_mask=None, cols=None):
    rmses, accs = {"weeks34": [], "weeks56": []}, {"weeks34": [], "weeks56": []}
    clim = climatology[..., var_index]
    if row_mask is not None:
        clim = clim[row_mask]
        if cols is not None:
            clim = clim[:, cols]
    for case in cases:
        for window, pred, truth in (("weeks34", case.pred34, case.truth34),
                                    ("weeks56", case.pred56, case.truth56)):
            p = pred[..., var_index]
            t = truth[..., var_index]
            if row_mask is not None:
                p, t = p[row_mask], t[row_mask]
                if cols is not None:
                    p, t = p[:, cols], t[:, cols]
            rmses[window].append(lat_rmse(p, t, weights))
            accs[window].append(lat_acc(p, t, clim, weights))
    return rmses, accs


def evaluate_forecasts(cases, grid: Graticule, var_names, climatology,
                       bands=(), regions=None, monthly=False,
                       error_map_vars=()) -> EvalReport:
    """Aggregate metrics over forecasts: mean of per-forecast values.

    regions maps name -> RegionBox; error maps are computed for the
    weeks34 window of the named variables.
    """
    cases = list(cases)
    if not cases:
        raise DegenerateInputError("no forecasts to evaluate")
    report = EvalReport()
    weights = latitude_weights(grid)
    n = len(cases)
    slices = [("global", None, None, weights)]
    for band in bands:
        mask = band_rows(grid, band)
        slices.append((f"band:{band}", mask, None, _sliced_weights(grid, mask, f"band {band!r}")))
    for name, box in (regions or {}).items():
        row_mask, cols = region_indices(grid, box)
        slices.append((f"region:{name}", row_mask, cols,
                       _sliced_weights(grid, row_mask, f"region {name!r}")))
        report.metadata[f"region.{name}"] = box.describe()
    for slice_name, row_mask, cols, w in slices:
        for vi, var in enumerate(var_names):
            rmses, accs = _per_case_metrics(cases, grid, vi, climatology, w, row_mask, cols)
            for window in ("weeks34", "weeks56"):
                report.add(window, var, slice_name,
                           float(np.mean(rmses[window])), float(np.mean(accs[window])), n)
    if monthly:
        monthly_report(cases, grid, var_names, climatology, into=report)
    for var in error_map_vars:
        vi = list(var_names).index(var)
        for window, pred_attr, truth_attr in (("weeks34", "pred34", "truth34"),
                                              ("weeks56", "pred56", "truth56")):
            report.error_maps[(window, var)] = error_map(
                [getattr(c, pred_attr)[..., vi] for c in cases],
                [getattr(c, truth_attr)[..., vi] for c in cases])
    return report


def monthly_report(cases, grid: Graticule, var_names, climatology,
                   into: EvalReport | None = None) -> EvalReport:
    """Group forecasts by initialization month and aggregate per month."""
    report = into if into is not None else EvalReport()
    weights = latitude_weights(grid)
    by_month: dict[int, list[ForecastCase]] = {}
    for case in cases:
        by_month.setdefault(case.init_date.month, []).append(case)
    present = sorted(by_month)
    missing = sorted(set(range(1, 13)) - set(present))
    if missing:
        report.metadata["months.missing"] = ",".join(f"{m:02d}" for m in missing)
    for month in present:
        group = by_month[month]
        for vi, var in enumerate(var_names):
            rmses, accs = _per_case_metrics(group, grid, vi, climatology, weights)
            for window in ("weeks34", "weeks56"):
                report.add(window, var, f"month:{month:02d}",
                           float(np.mean(rmses[window])), float(np.mean(accs[window])),
                           len(group))
    return report
