import datetime

import numpy as np
import pytest

from ringcast.data import default_synthetic_splits, import_directory, save_tensor, synth_generate
from ringcast.geometry import Graticule, WeatherState, make_graticule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_synthetic_dataset(root, grid, num_vars=2, num_days=60, seed=7, noise_amp=0.05):
    states = synth_generate(grid, num_vars, num_days, seed=seed, noise_amp=noise_amp)
    days_dir = root / "days"
    days_dir.mkdir(exist_ok=True, parents=True)
    for st in states:
        save_tensor(days_dir / f"{st.valid_time.isoformat()}.rct", st.values)
    splits = default_synthetic_splits([st.valid_time for st in states])
    return import_directory(
        root, [f"f{i}" for i in range(num_vars)],
        grid.lat_res_deg, grid.lon_res_deg, splits=splits)


@pytest.fixture
def coarse_grid():
    # 30 deg x 30 deg: H=7, W=12
    return make_graticule(30.0, 30.0)


@pytest.fixture
def fine_grid():
    # 1.5 deg: H=121, W=240
    return make_graticule(1.5, 1.5)


def make_state(grid: Graticule, values: np.ndarray, day: int = 0) -> WeatherState:
    k = values.shape[2]
    return WeatherState(
        grid=grid,
        values=values,
        var_names=[f"f{i}" for i in range(k)],
        valid_time=datetime.date(2000, 1, 1) + datetime.timedelta(days=day),
    )


@pytest.fixture
def state_factory():
    return make_state
