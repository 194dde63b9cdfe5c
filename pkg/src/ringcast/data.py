"""Dataset plumbing: the on-disk tensor format, the manifest, target
construction for the two forecast windows, normalization statistics, and
a synthetic zonal-wave generator for desk-scale experiments.

Tensor files ("rctf"): magic RCTF, uint32 version, uint32 H, W, K, all
little-endian, followed by the row-major float32 payload.  One file per
day.  The manifest is a line-oriented "key = value" text file.
"""

from __future__ import annotations

import datetime
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptFileError,
    DataAvailabilityError,
    DataError,
    NonFiniteDataError,
    ShapeMismatchError,
    StructuralError,
)
from .geometry import Graticule, WeatherState, make_graticule

MAGIC = b"RCTF"
VERSION = 1
HEADER = struct.Struct("<4sIIII")

# forecast windows, as day offsets from the initial day (day 1 = offset 0):
# weeks 3-4 cover days 15..28, weeks 5-6 cover days 29..42
WINDOW34 = (14, 28)
WINDOW56 = (28, 42)
HORIZON_DAYS = 42


def save_tensor(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 3:
        raise StructuralError(f"tensor files hold (H, W, K) arrays, got shape {values.shape}")
    h, w, k = values.shape
    payload = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, h, w, k))
        f.write(payload.tobytes())


def load_tensor(path, expect_shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Decode one tensor file, rejecting corrupt headers, wrong shapes,
    and non-finite payloads with distinct error kinds."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read tensor file {path}: {e}") from e
    if len(raw) < HEADER.size:
        raise CorruptFileError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, h, w, k = HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise CorruptFileError(f"{path}: bad magic/version {magic!r} v{version}")
    expected_bytes = HEADER.size + 4 * h * w * k
    if len(raw) != expected_bytes:
        raise CorruptFileError(
            f"{path}: payload is {len(raw) - HEADER.size} bytes, header implies {expected_bytes - HEADER.size}")
    if expect_shape is not None and (h, w, k) != tuple(expect_shape):
        raise ShapeMismatchError(
            f"{path}: file shape {(h, w, k)} does not match manifest shape {tuple(expect_shape)}")
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(h, w, k)
    if not np.isfinite(values).all():
        raise NonFiniteDataError(f"{path}: payload contains NaN or Inf")
    return values.copy()


def _parse_date(text: str) -> datetime.date:
    return datetime.date.fromisoformat(text.strip())


@dataclass
class DatasetManifest:
    """Index of per-day tensor files plus split, stats, and climatology."""

    lat_res_deg: float
    lon_res_deg: float
    var_names: list[str]
    samples: dict[datetime.date, str]          # date -> path relative to root
    splits: dict[str, tuple[datetime.date, datetime.date]]  # name -> inclusive range
    stats: dict[str, tuple[float, float]] = field(default_factory=dict)
    climatology_path: str | None = None
    root: Path = field(default_factory=Path)

    def grid(self) -> Graticule:
        return make_graticule(self.lat_res_deg, self.lon_res_deg)

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    def shape(self) -> tuple[int, int, int]:
        g = self.grid()
        return (g.num_lat, g.num_lon, self.num_vars)

    def dates(self) -> list[datetime.date]:
        return sorted(self.samples)

    def split_dates(self, split: str) -> list[datetime.date]:
        if split not in self.splits:
            raise ConfigurationError(f"manifest has no split named {split!r}")
        lo, hi = self.splits[split]
        return [d for d in self.dates() if lo <= d <= hi]

    def usable_init_dates(self, split: str) -> list[datetime.date]:
        """Init dates in the split whose full 42-day window exists."""
        have = set(self.samples)
        out = []
        for d in self.split_dates(split):
            if all(d + datetime.timedelta(days=off) in have for off in range(1, HORIZON_DAYS)):
                out.append(d)
        return out

    def validate(self) -> None:
        names = list(self.splits)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                lo_a, hi_a = self.splits[a]
                lo_b, hi_b = self.splits[b]
                if lo_a <= hi_b and lo_b <= hi_a:
                    raise ConfigurationError(f"splits {a!r} and {b!r} overlap")
        if self.stats and set(self.stats) != set(self.var_names):
            raise ConfigurationError("stats do not cover exactly the manifest variables")

    def load_day(self, date: datetime.date) -> np.ndarray:
        if date not in self.samples:
            raise DataAvailabilityError(f"no sample for {date.isoformat()}")
        return load_tensor(self.root / self.samples[date], expect_shape=self.shape())

    def load_state(self, date: datetime.date) -> WeatherState:
        return WeatherState(grid=self.grid(), values=self.load_day(date),
                            var_names=list(self.var_names), valid_time=date)

    def load_climatology(self) -> np.ndarray:
        if not self.climatology_path:
            raise ConfigurationError("manifest carries no climatology")
        return load_tensor(self.root / self.climatology_path, expect_shape=self.shape())

    def write(self, path) -> None:
        path = Path(path)
        lines = [
            "format = ringcast-manifest-v1",
            f"grid.lat_res_deg = {self.lat_res_deg!r}",
            f"grid.lon_res_deg = {self.lon_res_deg!r}",
            "layout = rctf-v1 float32 {} {} {}".format(*self.shape()),
            "vars = " + ",".join(self.var_names),
        ]
        for name, (lo, hi) in self.splits.items():
            lines.append(f"split.{name} = {lo.isoformat()}..{hi.isoformat()}")
        for var in self.var_names:
            if var in self.stats:
                mean, std = self.stats[var]
                lines.append(f"stats.{var}.mean = {mean!r}")
                lines.append(f"stats.{var}.std = {std!r}")
        if self.climatology_path:
            lines.append(f"climatology = {self.climatology_path}")
        for date in self.dates():
            lines.append(f"sample.{date.isoformat()} = {self.samples[date]}")
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        kv: list[tuple[str, str]] = []
        for ln in path.read_text().splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if "=" not in ln:
                raise CorruptFileError(f"{path}: manifest line without '=': {ln!r}")
            key, value = ln.split("=", 1)
            kv.append((key.strip(), value.strip()))
        d = dict(kv)
        if d.get("format") != "ringcast-manifest-v1":
            raise CorruptFileError(f"{path}: unknown manifest format {d.get('format')!r}")
        var_names = [v for v in d["vars"].split(",") if v]
        samples, splits, stats = {}, {}, {}
        for key, value in kv:
            if key.startswith("sample."):
                samples[_parse_date(key[len("sample."):])] = value
            elif key.startswith("split."):
                lo, hi = value.split("..")
                splits[key[len("split."):]] = (_parse_date(lo), _parse_date(hi))
            elif key.startswith("stats."):
                _, var, which = key.split(".")
                mean, std = stats.get(var, (0.0, 0.0))
                if which == "mean":
                    stats[var] = (float(value), std)
                else:
                    stats[var] = (mean, float(value))
        m = cls(
            lat_res_deg=float(d["grid.lat_res_deg"]),
            lon_res_deg=float(d["grid.lon_res_deg"]),
            var_names=var_names,
            samples=samples,
            splits=splits,
            stats=stats,
            climatology_path=d.get("climatology"),
            root=path.parent,
        )
        m.validate()
        return m


@dataclass
class Sample:
    """One training/evaluation case: the initial day plus both targets."""

    input: WeatherState
    target34: np.ndarray
    target56: np.ndarray


def build_targets(daily, t1_index: int = 0) -> Sample:
    """Bi-weekly mean targets from consecutive daily states.

    target34 averages days 15..28 (offsets 14..27 from the initial day),
    target56 averages days 29..42.
    """
    states = list(daily)
    t1 = states[t1_index]
    last_needed = t1_index + HORIZON_DAYS - 1
    if last_needed >= len(states):
        missing = [
            (t1.valid_time + datetime.timedelta(days=off)).isoformat()
            for off in range(len(states) - t1_index, HORIZON_DAYS)
        ]
        raise DataAvailabilityError(
            f"forecast window for {t1.valid_time.isoformat()} is missing days: " + ", ".join(missing))
    window = states[t1_index: last_needed + 1]
    for i, st in enumerate(window):
        expected = t1.valid_time + datetime.timedelta(days=i)
        if st.valid_time != expected:
            raise DataError(
                f"daily sequence is not uniformly spaced: expected {expected}, got {st.valid_time}")
    stack = np.stack([st.values for st in window])
    return Sample(
        input=t1,
        target34=stack[WINDOW34[0]: WINDOW34[1]].mean(axis=0),
        target56=stack[WINDOW56[0]: WINDOW56[1]].mean(axis=0),
    )


def normalize(state: WeatherState, stats) -> WeatherState:
    return WeatherState(grid=state.grid, values=normalize_values(state.values, state.var_names, stats),
                        var_names=state.var_names, valid_time=state.valid_time)


def denormalize(state: WeatherState, stats) -> WeatherState:
    return WeatherState(grid=state.grid, values=denormalize_values(state.values, state.var_names, stats),
                        var_names=state.var_names, valid_time=state.valid_time)


def _stats_arrays(var_names, stats):
    missing = [v for v in var_names if v not in stats]
    if missing:
        raise ConfigurationError(f"normalization stats missing for variables: {missing}")
    mean = np.array([stats[v][0] for v in var_names])
    std = np.array([stats[v][1] for v in var_names])
    for v, s in zip(var_names, std):
        if s <= 0:
            raise ConfigurationError(f"variable {v!r} has non-positive std {s!r}")
    return mean, std


def normalize_values(values, var_names, stats) -> np.ndarray:
    mean, std = _stats_arrays(var_names, stats)
    return (values - mean) / std


def denormalize_values(values, var_names, stats) -> np.ndarray:
    mean, std = _stats_arrays(var_names, stats)
    return values * std + mean


def compute_stats(states) -> tuple[dict[str, tuple[float, float]], np.ndarray]:
    """Per-variable mean/std and the per-grid-point climatology, from the
    training split only.  Deterministic two-pass computation."""
    states = list(states)
    if not states:
        raise ConfigurationError("cannot compute stats from an empty split")
    var_names = states[0].var_names
    stack = np.stack([st.values for st in states]).astype(np.float64)
    climatology = stack.mean(axis=0)
    stats = {}
    for i, var in enumerate(var_names):
        col = stack[..., i]
        stats[var] = (float(col.mean()), float(col.std()))
    return stats, climatology


# ---------------------------------------------------------------------------
# synthetic zonal-wave fields

@dataclass
class WaveRecipe:
    """Closed-form description of one variable's deterministic part.

    Each component is amp * cos(m*lon + rate*day + phase) * cos(lat)^power,
    optionally multiplied by sin(lat) for hemispheric asymmetry.  Integer
    zonal wavenumbers m make every field 2*pi-periodic in longitude.
    """

    amps: np.ndarray
    wavenumbers: np.ndarray
    rates: np.ndarray
    phases: np.ndarray
    powers: np.ndarray
    asym: np.ndarray
    offset: float


def make_wave_recipes(num_vars: int, seed: int, num_waves: int = 2) -> list[WaveRecipe]:
    # Distinct wavenumbers keep the snapshot -> future map identifiable;
    # rates stay well below 0.449 rad/day, where the 14-day window-mean
    # damping factor sin(7w)/(14 sin(w/2)) has its first root.
    rng = np.random.default_rng(seed)
    recipes = []
    for k in range(num_vars):
        scale = 50.0 if k == 0 else 1.0  # first variable gets geopotential-like magnitudes
        recipes.append(WaveRecipe(
            amps=rng.uniform(0.8, 1.2, size=num_waves) * scale,
            wavenumbers=rng.choice(np.arange(1, max(5, num_waves + 1)),
                                   size=num_waves, replace=False),
            rates=rng.uniform(0.06, 0.18, size=num_waves),
            phases=rng.uniform(0.0, 2.0 * np.pi, size=num_waves),
            powers=rng.integers(1, 3, size=num_waves),
            asym=rng.integers(0, 2, size=num_waves),
            offset=float(rng.normal(0.0, 0.2)) * scale,
        ))
    return recipes


def wave_field(recipe: WaveRecipe, grid: Graticule, day: float) -> np.ndarray:
    """Evaluate one variable's noiseless field at an integer or real day."""
    lon = np.deg2rad(grid.lon_deg)[None, :]
    lat = np.deg2rad(grid.lat_deg)[:, None]
    out = np.full((grid.num_lat, grid.num_lon), recipe.offset)
    for a, m, w, p, q, s in zip(recipe.amps, recipe.wavenumbers, recipe.rates,
                                recipe.phases, recipe.powers, recipe.asym):
        env = np.cos(lat) ** q * (np.sin(lat) if s else 1.0)
        out = out + a * np.cos(m * lon + w * day + p) * env
    return out


def synth_generate(grid: Graticule, num_vars: int, num_days: int, seed: int,
                   noise_amp: float = 0.02, num_waves: int = 2,
                   start_date: datetime.date = datetime.date(2000, 1, 1)) -> list[WeatherState]:
    """Deterministic synthetic daily sequence on a graticule.

    The noiseless part of each variable is a fixed sum of zonal waves, so
    future bi-weekly means are a deterministic function of the initial
    state up to the noise floor.  Noise is a per-day sum of random
    higher-wavenumber waves (spatially smooth), scaled by noise_amp
    relative to each variable's leading amplitude.
    """
    if num_vars < 1:
        raise ConfigurationError("num_vars must be >= 1")
    recipes = make_wave_recipes(num_vars, seed, num_waves=num_waves)
    noise_rng = np.random.default_rng(seed + 1)
    lon = np.deg2rad(grid.lon_deg)[None, :]
    lat = np.deg2rad(grid.lat_deg)[:, None]
    env = np.cos(lat)
    var_names = [f"f{k}" for k in range(num_vars)]
    states = []
    for day in range(num_days):
        values = np.empty((grid.num_lat, grid.num_lon, num_vars), dtype=np.float32)
        for k, recipe in enumerate(recipes):
            fld = wave_field(recipe, grid, day)
            if noise_amp > 0:
                scale = noise_amp * float(recipe.amps.max())
                for _ in range(2):
                    m = int(noise_rng.integers(5, 9))
                    ph = float(noise_rng.uniform(0.0, 2.0 * np.pi))
                    amp = float(noise_rng.uniform(0.5, 1.0)) * scale
                    fld = fld + amp * np.cos(m * lon + ph) * env
            values[..., k] = fld.astype(np.float32)
        states.append(WeatherState(
            grid=grid, values=values, var_names=list(var_names),
            valid_time=start_date + datetime.timedelta(days=day)))
    return states


def default_synthetic_splits(dates: list[datetime.date],
                             fractions=(0.7, 0.15, 0.15)) -> dict[str, tuple[datetime.date, datetime.date]]:
    """Carve a contiguous date list into train/val/test date ranges."""
    n = len(dates)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = max(1, min(n_train, n - 2))
    n_val = max(1, min(n_val, n - n_train - 1))
    return {
        "train": (dates[0], dates[n_train - 1]),
        "val": (dates[n_train], dates[n_train + n_val - 1]),
        "test": (dates[n_train + n_val], dates[-1]),
    }


ERA5_STYLE_SPLITS = {
    "train": (datetime.date(1979, 1, 1), datetime.date(2016, 12, 31)),
    "val": (datetime.date(2017, 1, 1), datetime.date(2017, 12, 31)),
    "test": (datetime.date(2018, 1, 1), datetime.date(2018, 12, 31)),
}


def import_directory(directory, var_names, lat_res_deg, lon_res_deg,
                     splits=None, manifest_name: str = "manifest.txt",
                     compute_statistics: bool = True) -> DatasetManifest:
    """Build a manifest from a directory of per-day tensor files.

    Files must be named YYYY-MM-DD.rct.  Splits default to the year-based
    ERA5 convention (train 1979-2016, val 2017, test 2018).
    """
    directory = Path(directory)
    samples = {}
    for p in sorted(directory.rglob("*.rct")):
        if p.name == "climatology.rct":
            continue
        try:
            date = _parse_date(p.stem)
        except ValueError:
            continue
        samples[date] = str(p.relative_to(directory))
    if not samples:
        raise DataError(f"no YYYY-MM-DD.rct tensor files under {directory}")
    manifest = DatasetManifest(
        lat_res_deg=lat_res_deg,
        lon_res_deg=lon_res_deg,
        var_names=list(var_names),
        samples=samples,
        splits=dict(splits) if splits is not None else dict(ERA5_STYLE_SPLITS),
        root=directory,
    )
    manifest.validate()
    for date in manifest.dates():
        manifest.load_day(date)  # proves shape/finiteness at build time
    if compute_statistics:
        train_dates = manifest.split_dates("train")
        if train_dates:
            stats, clim = compute_stats([manifest.load_state(d) for d in train_dates])
            manifest.stats = stats
            save_tensor(directory / "climatology.rct", clim)
            manifest.climatology_path = "climatology.rct"
    manifest.write(directory / manifest_name)
    return manifest


@dataclass
class DailySeries:
    """All manifest days loaded into memory for desk-scale training."""

    grid: Graticule
    var_names: list[str]
    dates: list[datetime.date]
    values: np.ndarray  # (T, H, W, K)

    def index_of(self, date: datetime.date) -> int:
        i = self._index.get(date)
        if i is None:
            raise DataAvailabilityError(f"no sample for {date.isoformat()}")
        return i

    def __post_init__(self):
        self._index = {d: i for i, d in enumerate(self.dates)}

    def sample_arrays(self, init_date: datetime.date) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(input, target34, target56) arrays for one init date."""
        i = self.index_of(init_date)
        for off in range(1, HORIZON_DAYS):
            if init_date + datetime.timedelta(days=off) not in self._index:
                raise DataAvailabilityError(
                    f"forecast window for {init_date} is missing "
                    f"{(init_date + datetime.timedelta(days=off)).isoformat()}")
        x = self.values[i]
        t34 = self.values[i + WINDOW34[0]: i + WINDOW34[1]].mean(axis=0)
        t56 = self.values[i + WINDOW56[0]: i + WINDOW56[1]].mean(axis=0)
        return x, t34, t56


def load_series(manifest: DatasetManifest) -> DailySeries:
    dates = manifest.dates()
    values = np.stack([manifest.load_day(d) for d in dates])
    return DailySeries(grid=manifest.grid(), var_names=list(manifest.var_names),
                       dates=dates, values=values)
