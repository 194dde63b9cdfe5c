import datetime
import math

import numpy as np
import pytest

from ringcast.errors import DegenerateInputError, StructuralError
from ringcast.geometry import latitude_weights, make_graticule
from ringcast.metrics import (
    BAND_EDGES,
    EvalReport,
    ForecastCase,
    RegionBox,
    band_rows,
    band_slice,
    error_map,
    evaluate_forecasts,
    lat_acc,
    lat_rmse,
    monthly_report,
    region_slice,
)


def oracle_rmse(pred, truth, weights):
    h, w = pred.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += weights[i] * (pred[i, j] - truth[i, j]) ** 2
    return math.sqrt(total / (h * w))


def oracle_acc(pred, truth, clim, weights):
    num = d1 = d2 = 0.0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            pa = pred[i, j] - clim[i, j]
            ta = truth[i, j] - clim[i, j]
            num += weights[i] * pa * ta
            d1 += weights[i] * pa * pa
            d2 += weights[i] * ta * ta
    return num / math.sqrt(d1 * d2)


@pytest.fixture
def small():
    grid = make_graticule(30.0, 45.0)  # 7 x 8
    return grid, latitude_weights(grid)


class TestLatRmse:
    def test_perfect_prediction(self, small, rng):
        grid, w = small
        x = rng.normal(size=(7, 8))
        assert lat_rmse(x, x, w) == 0.0

    def test_constant_offset_identity(self, small, rng):
        grid, w = small
        truth = rng.normal(size=(7, 8))
        for c in (0.5, -3.0, 2.25):
            assert lat_rmse(truth + c, truth, w) == pytest.approx(abs(c), abs=1e-9)

    def test_matches_triple_loop_oracle(self, small, rng):
        grid, w = small
        for _ in range(25):
            pred = rng.normal(size=(7, 8))
            truth = rng.normal(size=(7, 8))
            assert lat_rmse(pred, truth, w) == pytest.approx(
                oracle_rmse(pred, truth, w), abs=1e-9)

    def test_linear_scaling(self, small, rng):
        grid, w = small
        truth = rng.normal(size=(7, 8))
        err = rng.normal(size=(7, 8))
        base = lat_rmse(truth + err, truth, w)
        assert lat_rmse(truth + 3.5 * err, truth, w) == pytest.approx(3.5 * base, rel=1e-12)

    def test_shape_mismatch(self, small):
        grid, w = small
        with pytest.raises(StructuralError):
            lat_rmse(np.zeros((7, 8)), np.zeros((7, 9)), w)
        with pytest.raises(StructuralError):
            lat_rmse(np.zeros((7, 8)), np.zeros((7, 8)), w[:-1])


class TestLatAcc:
    def test_identical_anomalies(self, small, rng):
        grid, w = small
        clim = rng.normal(size=(7, 8))
        x = clim + rng.normal(size=(7, 8))
        assert lat_acc(x, x, clim, w) == pytest.approx(1.0, abs=1e-12)

    def test_opposite_anomalies(self, small, rng):
        grid, w = small
        clim = rng.normal(size=(7, 8))
        anom = rng.normal(size=(7, 8))
        assert lat_acc(clim + anom, clim - anom, clim, w) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_triple_loop_oracle(self, small, rng):
        grid, w = small
        for _ in range(25):
            pred = rng.normal(size=(7, 8))
            truth = rng.normal(size=(7, 8))
            clim = rng.normal(size=(7, 8))
            assert lat_acc(pred, truth, clim, w) == pytest.approx(
                oracle_acc(pred, truth, clim, w), abs=1e-9)

    def test_zero_norm_anomaly_raises(self, small):
        grid, w = small
        clim = np.ones((7, 8))
        with pytest.raises(DegenerateInputError):
            lat_acc(clim.copy(), clim + 1.0, clim, w)

    def test_invariances(self, small, rng):
        grid, w = small
        clim = rng.normal(size=(7, 8))
        pred = clim + rng.normal(size=(7, 8))
        truth = clim + rng.normal(size=(7, 8))
        base = lat_acc(pred, truth, clim, w)
        # positive rescaling of either anomaly
        assert lat_acc(clim + 4.0 * (pred - clim), truth, clim, w) == pytest.approx(base, rel=1e-12)
        # anomalies are all that matter
        zero = np.zeros_like(clim)
        assert lat_acc(pred - clim, truth - clim, zero, w) == pytest.approx(base, rel=1e-12)


class TestBandSlice:
    def test_default_grid_band_row_counts(self):
        grid = make_graticule(1.5, 1.5)
        assert band_rows(grid, "low").sum() == 39
        assert band_rows(grid, "mid").sum() == 40
        assert band_rows(grid, "high").sum() == 42

    def test_high_band_contains_poles(self):
        grid = make_graticule(1.5, 1.5)
        mask = band_rows(grid, "high")
        assert mask[0] and mask[-1]

    def test_bands_partition_rows(self):
        grid = make_graticule(1.5, 1.5)
        total = np.zeros(grid.num_lat, dtype=int)
        for band in BAND_EDGES:
            total += band_rows(grid, band).astype(int)
        assert np.all(total == 1)

    def test_edge_ownership(self):
        grid = make_graticule(30.0, 30.0)  # lats -90,-60,-30,0,30,60,90
        assert not band_rows(grid, "low")[grid.lat_deg == 30.0].any()
        assert band_rows(grid, "mid")[grid.lat_deg == 30.0].all()
        assert band_rows(grid, "high")[np.abs(grid.lat_deg) == 60.0].all()

    def test_weights_renormalized(self, rng):
        grid = make_graticule(1.5, 1.5)
        fld = rng.normal(size=(121, 240))
        sub, w = band_slice(fld, grid, "mid")
        assert sub.shape == (40, 240)
        assert w.mean() == pytest.approx(1.0, abs=1e-12)

    def test_band_combination_consistency(self, rng):
        # global squared RMSE equals the alpha-mass weighted combination
        # of per-band squared RMSEs
        grid = make_graticule(10.0, 20.0)
        weights = latitude_weights(grid)
        pred = rng.normal(size=(grid.num_lat, grid.num_lon))
        truth = rng.normal(size=pred.shape)
        total = lat_rmse(pred, truth, weights) ** 2
        combined = 0.0
        for band in BAND_EDGES:
            mask = band_rows(grid, band)
            sub_p, w_b = band_slice(pred, grid, band)
            sub_t, _ = band_slice(truth, grid, band)
            coeff = weights[mask].sum() / grid.num_lat
            combined += coeff * lat_rmse(sub_p, sub_t, w_b) ** 2
        assert combined == pytest.approx(total, abs=1e-9)


class TestRegionSlice:
    def test_full_domain_equals_global(self, rng):
        grid = make_graticule(30.0, 30.0)
        fld_p = rng.normal(size=(7, 12))
        fld_t = rng.normal(size=(7, 12))
        box = RegionBox(-90.0, 90.0, -180.0, 180.0)
        sub_p, w = region_slice(fld_p, grid, box)
        sub_t, _ = region_slice(fld_t, grid, box)
        assert sub_p.shape == fld_p.shape
        assert lat_rmse(sub_p, sub_t, w) == pytest.approx(
            lat_rmse(fld_p, fld_t, latitude_weights(grid)), abs=1e-12)

    def test_single_row_box(self, rng):
        grid = make_graticule(30.0, 30.0)
        fld = rng.normal(size=(7, 12))
        sub, w = region_slice(fld, grid, RegionBox(0.0, 0.0, -180.0, 180.0))
        assert sub.shape == (1, 12)
        np.testing.assert_allclose(w, [1.0])

    def test_random_crop_vs_direct_oracle(self, rng):
        grid = make_graticule(10.0, 10.0)
        pred = rng.normal(size=(19, 36))
        truth = rng.normal(size=(19, 36))
        box = RegionBox(-40.0, 30.0, -60.0, 50.0)
        sub_p, w = region_slice(pred, grid, box)
        sub_t, _ = region_slice(truth, grid, box)
        rows = np.where((grid.lat_deg >= -40) & (grid.lat_deg <= 30))[0]
        cols = np.where((grid.lon_deg >= -60) & (grid.lon_deg <= 50))[0]
        crop_p = pred[np.ix_(rows, cols)]
        crop_t = truth[np.ix_(rows, cols)]
        w_direct = latitude_weights(grid)[rows]
        w_direct = w_direct / w_direct.mean()
        assert lat_rmse(sub_p, sub_t, w) == pytest.approx(
            oracle_rmse(crop_p, crop_t, w_direct), abs=1e-9)

    def test_dateline_wrap(self, rng):
        grid = make_graticule(30.0, 30.0)
        fld = rng.normal(size=(7, 12))
        sub, _ = region_slice(fld, grid, RegionBox(-90, 90, 150.0, -150.0))
        assert sub.shape[1] == 3  # lons 150, -180, -150

    def test_empty_crop_raises(self):
        grid = make_graticule(30.0, 30.0)
        with pytest.raises(DegenerateInputError):
            region_slice(np.zeros((7, 12)), grid, RegionBox(10.0, 20.0, 0.0, 20.0))


class TestErrorMap:
    def test_perfect_predictions(self, rng):
        x = [rng.normal(size=(5, 6)) for _ in range(4)]
        np.testing.assert_array_equal(error_map(x, [f.copy() for f in x]), np.zeros((5, 6)))

    def test_constant_bias(self, rng):
        truths = [rng.normal(size=(5, 6)) for _ in range(3)]
        preds = [t + 1.75 for t in truths]
        np.testing.assert_allclose(error_map(preds, truths), 1.75, atol=1e-12)

    def test_matches_per_point_loop(self, rng):
        preds = [rng.normal(size=(4, 5)) for _ in range(3)]
        truths = [rng.normal(size=(4, 5)) for _ in range(3)]
        got = error_map(preds, truths)
        for i in range(4):
            for j in range(5):
                acc = sum((p[i, j] - t[i, j]) ** 2 for p, t in zip(preds, truths))
                assert got[i, j] == pytest.approx(math.sqrt(acc / 3), abs=1e-12)

    def test_empty_sequence_raises(self):
        with pytest.raises(DegenerateInputError):
            error_map([], [])


def make_cases(grid, rng, months, k=1, err_scale=1.0):
    cases = []
    h, w = grid.num_lat, grid.num_lon
    clim = rng.normal(size=(h, w, k))
    for i, month in enumerate(months):
        truth34 = clim + rng.normal(size=(h, w, k))
        truth56 = clim + rng.normal(size=(h, w, k))
        cases.append(ForecastCase(
            init_date=datetime.date(2018, month, min(5 + i, 28)),
            pred34=truth34 + err_scale * rng.normal(size=(h, w, k)),
            pred56=truth56 + err_scale * rng.normal(size=(h, w, k)),
            truth34=truth34,
            truth56=truth56,
        ))
    return cases, clim


class TestMonthlyReport:
    def test_single_month(self, coarse_grid, rng):
        cases, clim = make_cases(coarse_grid, rng, [3, 3, 3])
        report = monthly_report(cases, coarse_grid, ["f0"], clim)
        recs = [r for r in report.records if r.window == "weeks34"]
        assert len(recs) == 1
        assert recs[0].slice_name == "month:03"
        w = latitude_weights(coarse_grid)
        expected = np.mean([lat_rmse(c.pred34[..., 0], c.truth34[..., 0], w) for c in cases])
        assert recs[0].rmse == pytest.approx(expected, abs=1e-12)
        assert recs[0].n_samples == 3

    def test_missing_months_flagged(self, coarse_grid, rng):
        cases, clim = make_cases(coarse_grid, rng, [1, 6])
        report = monthly_report(cases, coarse_grid, ["f0"], clim)
        missing = report.metadata["months.missing"].split(",")
        assert "02" in missing and "06" not in missing
        assert len(missing) == 10

    def test_twelve_month_fixture_vs_hand_grouping(self, coarse_grid, rng):
        months = [1 + (i % 12) for i in range(24)]
        cases, clim = make_cases(coarse_grid, rng, months)
        report = monthly_report(cases, coarse_grid, ["f0"], clim)
        w = latitude_weights(coarse_grid)
        for month in range(1, 13):
            group = [c for c in cases if c.init_date.month == month]
            expected = np.mean([lat_rmse(c.pred56[..., 0], c.truth56[..., 0], w) for c in group])
            rec = report.lookup("weeks56", "f0", f"month:{month:02d}")
            assert rec.rmse == pytest.approx(expected, abs=1e-12)
            assert rec.n_samples == 2
        assert "months.missing" not in report.metadata


class TestEvaluateForecasts:
    def test_global_and_slices(self, coarse_grid, rng):
        cases, clim = make_cases(coarse_grid, rng, [1, 2, 3], k=2)
        report = evaluate_forecasts(
            cases, coarse_grid, ["f0", "f1"], clim,
            bands=("low", "mid", "high"),
            regions={"europe": RegionBox(35.0, 75.0, -15.0, 45.0)},
            monthly=True, error_map_vars=("f0",))
        slice_names = {r.slice_name for r in report.records}
        assert {"global", "band:low", "band:mid", "band:high",
                "region:europe", "month:01"} <= slice_names
        assert ("weeks34", "f0") in report.error_maps
        assert report.error_maps[("weeks34", "f0")].shape == (7, 12)
        assert report.metadata["region.europe"].startswith("lat [35")
        for r in report.records:
            assert r.rmse >= 0
            assert -1.0 <= r.acc <= 1.0

    def test_report_round_trips_through_table(self, coarse_grid, rng):
        cases, clim = make_cases(coarse_grid, rng, [4, 5])
        report = evaluate_forecasts(cases, coarse_grid, ["f0"], clim)
        again = EvalReport.from_table_text(report.to_table_text())
        assert len(again.records) == len(report.records)
        a, b = again.records[0], report.records[0]
        assert a.rmse == b.rmse and a.acc == b.acc and a.n_samples == b.n_samples

    def test_keyvalue_serialization(self, coarse_grid, rng):
        cases, clim = make_cases(coarse_grid, rng, [4])
        report = evaluate_forecasts(cases, coarse_grid, ["f0"], clim)
        text = report.to_keyvalue_text()
        assert "weeks34.f0.global.rmse = " in text
        assert "weeks56.f0.global.acc = " in text

    def test_empty_cases_raise(self, coarse_grid):
        with pytest.raises(DegenerateInputError):
            evaluate_forecasts([], coarse_grid, ["f0"], np.zeros((7, 12, 1)))
