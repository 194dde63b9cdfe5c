"""Graticule geometry: latitude/longitude grids, area weights, and the
patching transforms that turn gridded fields into token sequences.

Two patching schemes exist.  Ring patching emits one token per latitude
row (every token is a full parallel, longitudinally periodic by
construction).  Grid patching emits conventional square planar patches
and exists for ablation comparisons.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, StructuralError

EARTH_RADIUS_KM = 6371.0


def cos_lat_deg(lat_deg):
    """Cosine of latitude given in degrees, exactly zero at the poles.

    float cos(pi/2) is ~6e-17; that residue would make pole rows carry
    nonzero area weight and nonzero ring length, so it is snapped to 0.
    """
    lat = np.asarray(lat_deg, dtype=float)
    c = np.cos(np.deg2rad(lat))
    return np.where(np.abs(lat) >= 90.0, 0.0, c)


@dataclass(frozen=True)
class Graticule:
    """Regular latitude/longitude grid with H rows and W columns."""

    lat_deg: np.ndarray
    lon_deg: np.ndarray
    earth_radius_km: float = EARTH_RADIUS_KM

    def __post_init__(self):
        object.__setattr__(self, "lat_deg", np.asarray(self.lat_deg, dtype=float))
        object.__setattr__(self, "lon_deg", np.asarray(self.lon_deg, dtype=float))
        lat, lon = self.lat_deg, self.lon_deg
        if lat.ndim != 1 or lon.ndim != 1 or lat.size == 0 or lon.size == 0:
            raise StructuralError("graticule needs 1-d, nonempty lat and lon vectors")
        dlat = np.diff(lat)
        if not (np.all(dlat > 0) or np.all(dlat < 0)):
            raise StructuralError("latitudes must be strictly monotone")
        if lat.min() < -90.0 or lat.max() > 90.0:
            raise StructuralError("latitudes must lie in [-90, 90]")
        if lon.min() < -180.0 or lon.max() >= 180.0:
            raise StructuralError("longitudes must lie in [-180, 180)")
        if lon.size > 1:
            dlon = np.diff(lon)
            if not np.allclose(dlon, dlon[0], rtol=0, atol=1e-9):
                raise StructuralError("longitude spacing must be uniform")
        if self.earth_radius_km <= 0:
            raise ConfigurationError("earth_radius_km must be positive")

    @property
    def num_lat(self) -> int:
        return self.lat_deg.size

    @property
    def num_lon(self) -> int:
        return self.lon_deg.size

    @property
    def lon_res_deg(self) -> float:
        return 360.0 / self.num_lon

    @property
    def lat_res_deg(self) -> float:
        return float(abs(self.lat_deg[1] - self.lat_deg[0])) if self.num_lat > 1 else 180.0

    def ring_length_km(self) -> np.ndarray:
        """Geometric circumference of each parallel: 2*pi*R*cos(lat)."""
        return 2.0 * np.pi * self.earth_radius_km * cos_lat_deg(self.lat_deg)

    def describe(self) -> str:
        return f"{self.num_lat}x{self.num_lon} grid ({self.lat_res_deg:g} deg lat, {self.lon_res_deg:g} deg lon)"


def make_graticule(lat_res_deg: float, lon_res_deg: float,
                   earth_radius_km: float = EARTH_RADIUS_KM) -> Graticule:
    """Build the regular grid for a given resolution.

    Latitudes run from -90 to +90 inclusive (H = 180/res + 1 rows);
    longitudes run from -180 up to but excluding +180 (W = 360/res).
    """
    if lat_res_deg <= 0 or lon_res_deg <= 0:
        raise ConfigurationError("grid resolutions must be positive")
    n_lat = 180.0 / lat_res_deg
    if abs(n_lat - round(n_lat)) > 1e-9:
        raise ConfigurationError(f"180 is not an integer multiple of lat_res_deg={lat_res_deg!r}")
    n_lon = 360.0 / lon_res_deg
    if abs(n_lon - round(n_lon)) > 1e-9:
        raise ConfigurationError(f"360 is not an integer multiple of lon_res_deg={lon_res_deg!r}")
    h = int(round(n_lat)) + 1
    w = int(round(n_lon))
    lat = np.linspace(-90.0, 90.0, h)
    lon = -180.0 + lon_res_deg * np.arange(w)
    return Graticule(lat_deg=lat, lon_deg=lon, earth_radius_km=earth_radius_km)


def latitude_weights(grid: Graticule) -> np.ndarray:
    """Area weights alpha(h) = cos(lat_h) / mean_h' cos(lat_h').

    Nonnegative, with arithmetic mean exactly 1 by construction.
    """
    c = cos_lat_deg(grid.lat_deg)
    m = c.mean()
    if m <= 0:
        raise ConfigurationError("grid has no rows with positive cos(latitude)")
    return c / m


@dataclass
class WeatherState:
    """One day's K-variable field on a graticule."""

    grid: Graticule
    values: np.ndarray
    var_names: list[str]
    valid_time: datetime.date

    def __post_init__(self):
        self.values = np.asarray(self.values)
        h, w = self.grid.num_lat, self.grid.num_lon
        if self.values.ndim != 3 or self.values.shape[:2] != (h, w):
            raise StructuralError(
                f"values shape {self.values.shape} does not match grid ({h}, {w}, K)")
        if self.values.shape[2] != len(self.var_names):
            raise StructuralError(
                f"K={self.values.shape[2]} does not match {len(self.var_names)} variable names")

    @property
    def num_vars(self) -> int:
        return len(self.var_names)


@dataclass
class CircularPatchSet:
    """H latitude-ring tokens plus their geometric metadata.

    flat[h] is the row-major (longitude outer, variable inner) flattening
    of the (W, K) slice at latitude h.  neighbor_spacing_km is the true
    arc distance between adjacent samples on each parallel,
    R * dphi_rad * cos(lat); nominal_spacing_km is the cos-free constant
    R * dphi_rad.  The constant is metadata only and feeds no computation.
    """

    flat: np.ndarray
    patch_length_km: np.ndarray
    neighbor_spacing_km: np.ndarray
    nominal_spacing_km: float
    layout: tuple[int, int, int]

    @property
    def num_patches(self) -> int:
        return self.layout[0]


def circular_patch(state: WeatherState) -> CircularPatchSet:
    """Tokenize a field as one flattened patch per latitude ring."""
    h, w = state.grid.num_lat, state.grid.num_lon
    k = state.num_vars
    flat = state.values.reshape(h, w * k)
    dphi_rad = np.deg2rad(state.grid.lon_res_deg)
    r = state.grid.earth_radius_km
    cos_lat = cos_lat_deg(state.grid.lat_deg)
    return CircularPatchSet(
        flat=flat,
        patch_length_km=state.grid.ring_length_km(),
        neighbor_spacing_km=r * dphi_rad * cos_lat,
        nominal_spacing_km=r * dphi_rad,
        layout=(h, w, k),
    )


def circular_unpatch(patches: CircularPatchSet) -> np.ndarray:
    """Exact inverse of circular_patch on the values tensor."""
    h, w, k = patches.layout
    if patches.flat.shape != (h, w * k):
        raise StructuralError(
            f"flat shape {patches.flat.shape} inconsistent with layout {(h, w, k)}")
    return patches.flat.reshape(h, w, k)


@dataclass
class GridPatchSet:
    """Square planar patches in row-major order, each flattened.

    pad_rows bottom rows were appended by replicating the last latitude
    row so the patch height divides H; they are dropped on unpatch.
    """

    flat: np.ndarray
    layout: tuple[int, int, int]  # original (H, W, K)
    patch_cells: tuple[int, int]  # (rows, cols) per patch
    pad_rows: int

    @property
    def num_patches(self) -> int:
        return self.flat.shape[0]


def grid_patch_cell_counts(grid: Graticule, patch_deg: float) -> tuple[int, int]:
    """(rows, cols) of grid cells covered by one square patch of patch_deg."""
    return _grid_patch_cells(grid, patch_deg)


def _grid_patch_cells(grid: Graticule, patch_deg: float) -> tuple[int, int]:
    if patch_deg <= 0:
        raise ConfigurationError("patch_deg must be positive")
    ph = patch_deg / grid.lat_res_deg
    pw = patch_deg / grid.lon_res_deg
    if abs(ph - round(ph)) > 1e-9 or round(ph) < 1:
        raise ConfigurationError(
            f"patch_deg={patch_deg!r} is not a multiple of the {grid.lat_res_deg:g} deg latitude resolution")
    if abs(pw - round(pw)) > 1e-9 or round(pw) < 1:
        raise ConfigurationError(
            f"patch_deg={patch_deg!r} is not a multiple of the {grid.lon_res_deg:g} deg longitude resolution")
    return int(round(ph)), int(round(pw))


def grid_patch(state: WeatherState, patch_deg: float) -> GridPatchSet:
    """Tokenize a field as non-overlapping square patches of patch_deg.

    The longitude count must divide exactly; the latitude count is padded
    up to the next multiple by replicating the last row (H = 180/res + 1
    is odd, so e.g. 121 rows pad to 122 for 2-cell patches).
    """
    ph, pw = _grid_patch_cells(state.grid, patch_deg)
    return grid_patch_cells(state, ph, pw)


def grid_patch_cells(state: WeatherState, ph: int, pw: int) -> GridPatchSet:
    """grid_patch with the patch size given directly in grid cells."""
    h, w = state.grid.num_lat, state.grid.num_lon
    k = state.num_vars
    if ph < 1 or pw < 1:
        raise ConfigurationError("patch cell counts must be positive")
    if w % pw != 0:
        raise ConfigurationError(
            f"patch width {pw} cells does not divide W={w}")
    pad_rows = (-h) % ph
    values = state.values
    if pad_rows:
        values = np.concatenate([values, np.repeat(values[-1:], pad_rows, axis=0)], axis=0)
    hp = h + pad_rows
    # (bands, ph, blocks, pw, K) -> (bands, blocks, ph, pw, K), row-major token order
    tiles = values.reshape(hp // ph, ph, w // pw, pw, k).transpose(0, 2, 1, 3, 4)
    flat = tiles.reshape((hp // ph) * (w // pw), ph * pw * k)
    return GridPatchSet(flat=flat, layout=(h, w, k), patch_cells=(ph, pw), pad_rows=pad_rows)


def grid_unpatch(patches: GridPatchSet) -> np.ndarray:
    """Exact inverse of grid_patch, dropping any replicated pad rows."""
    h, w, k = patches.layout
    ph, pw = patches.patch_cells
    hp = h + patches.pad_rows
    n = (hp // ph) * (w // pw)
    if patches.flat.shape != (n, ph * pw * k):
        raise StructuralError(
            f"flat shape {patches.flat.shape} inconsistent with layout {(h, w, k)} "
            f"and patch cells {(ph, pw)}")
    tiles = patches.flat.reshape(hp // ph, w // pw, ph, pw, k).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(hp, w, k)[:h]
