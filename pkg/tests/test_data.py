import numpy as np
import pytest

from fedmeter import data as dp
from fedmeter.data import (AnomalyConfig, DataError, HourlySeries, LabeledDataset,
                           LoadProfile, UsageWindows)


def hourly_stamps(n, start="2021-01-04T00"):
    return np.datetime64(start, "h") + np.arange(n).astype("timedelta64[h]")


def write_csv(path, rows, header="household_id,timestamp,kwh"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


class TestIngest:
    def test_two_households_row_conservation(self, tmp_path):
        rows = []
        for hid in ("a", "b"):
            for i, ts in enumerate(hourly_stamps(48)):
                rows.append(f"{hid},{ts},{0.5 + 0.01 * i}")
        f = tmp_path / "meters.csv"
        write_csv(f, rows)
        series = dp.ingest_csv(f)
        assert set(series) == {"a", "b"}
        assert all(len(s) == 48 for s in series.values())

    def test_rows_sorted_by_timestamp(self, tmp_path):
        ts = hourly_stamps(4)
        rows = [f"a,{ts[i]},{i}" for i in (2, 0, 3, 1)]
        f = tmp_path / "m.csv"
        write_csv(f, rows)
        out = dp.ingest_csv(f)["a"]
        np.testing.assert_array_equal(out.kwh, [0, 1, 2, 3])

    def test_negative_kwh_cites_row(self, tmp_path):
        ts = hourly_stamps(10)
        rows = [f"a,{ts[i]},{1.0 if i != 6 else -0.2}" for i in range(10)]
        f = tmp_path / "m.csv"
        write_csv(f, rows)
        with pytest.raises(DataError, match="row 7"):
            dp.ingest_csv(f)

    def test_missing_column(self, tmp_path):
        f = tmp_path / "m.csv"
        f.write_text("household_id,when,kwh\na,2021-01-01T00,1\n")
        with pytest.raises(DataError, match="timestamp"):
            dp.ingest_csv(f)

    def test_unparseable_timestamp_cites_row(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["a,2021-01-04T00,1.0", "a,yesterday,1.0"])
        with pytest.raises(DataError, match="row 2"):
            dp.ingest_csv(f)

    def test_duplicate_household_timestamp(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["a,2021-01-04T00,1.0", "a,2021-01-04T00,2.0"])
        with pytest.raises(DataError, match="duplicate"):
            dp.ingest_csv(f)

    def test_gap_rejected(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["a,2021-01-04T00,1.0", "a,2021-01-04T02,1.0"])
        with pytest.raises(DataError, match="gap"):
            dp.ingest_csv(f)

    def test_nineteen_households_three_years(self, tmp_path):
        # 25,560 hourly readings per household segment into 1,065 days
        stamps = [str(t) for t in hourly_stamps(25560)]
        lines = []
        for h in range(19):
            lines.extend(f"h{h},{t},1.0" for t in stamps)
        f = tmp_path / "big.csv"
        write_csv(f, lines)
        series = dp.ingest_csv(f)
        assert len(series) == 19
        for s in series.values():
            assert len(dp.segment_daily(s)) == 1065


class TestSynthesize:
    def test_deterministic(self):
        a = dp.synthesize_household(30, seed=5)
        b = dp.synthesize_household(30, seed=5)
        assert np.array_equal(a.kwh, b.kwh)
        assert not np.array_equal(a.kwh, dp.synthesize_household(30, seed=6).kwh)

    def test_reading_count(self):
        assert len(dp.synthesize_household(30, seed=0)) == 30 * 24

    def test_days_validation(self):
        with pytest.raises(DataError):
            dp.synthesize_household(0, seed=0)

    def test_high_window_mean_exceeds_low(self):
        series = dp.synthesize_household(365, seed=9)
        by_hour = series.kwh.reshape(-1, 24)
        high = by_hour[:, [18, 19, 20, 21, 22, 23, 0]].mean()
        low = by_hour[:, [4, 5, 6, 7, 8, 9]].mean()
        assert high > low


class TestSegment:
    def test_exact_days(self):
        s = HourlySeries("a", hourly_stamps(72), np.arange(72.0))
        profiles = dp.segment_daily(s)
        assert len(profiles) == 3
        np.testing.assert_array_equal(profiles[1].values, np.arange(24.0, 48.0))

    def test_partial_day_dropped(self):
        s = HourlySeries("a", hourly_stamps(70), np.ones(70))
        assert len(dp.segment_daily(s)) == 2

    def test_empty(self):
        s = HourlySeries("a", hourly_stamps(0), np.array([]))
        assert dp.segment_daily(s) == []


class TestUsageWindows:
    def test_known_trough_and_peak(self):
        base = np.full(24, 1.0)
        base[4:10] = 0.2          # trough 4..9
        base[18:24] = 2.0         # peak 18..23
        base[0] = 1.8             # peak wraps midnight
        profiles = [LoadProfile(base * (1 + 0.001 * i), i) for i in range(10)]
        w = dp.detect_usage_windows(profiles)
        assert w.low_hours == (4, 5, 6, 7, 8, 9)
        assert w.high_hours == (0, 18, 19, 20, 21, 22, 23)

    def test_synthesized_data_matches_default_windows(self):
        profiles = dp.segment_daily(dp.synthesize_household(365, seed=3))
        w = dp.detect_usage_windows(profiles)
        assert w.low_hours == (4, 5, 6, 7, 8, 9)
        assert w.high_hours == (0, 18, 19, 20, 21, 22, 23)

    def test_constant_profiles_degenerate(self):
        profiles = [LoadProfile(np.ones(24), i) for i in range(5)]
        with pytest.raises(DataError, match="degenerate"):
            dp.detect_usage_windows(profiles)

    def test_disjointness_enforced(self):
        with pytest.raises(DataError, match="disjoint"):
            UsageWindows(low_hours=(1, 2), high_hours=(2, 3))


class TestInjection:
    def test_drop_two_steps(self):
        p = LoadProfile(np.ones(24), 0)
        out = dp.inject_drop(p, 18, 2)
        assert out.values[18] == 0.0 and out.values[19] == 0.0
        assert np.sum(out.values != p.values) == 2

    def test_drop_single_step(self):
        p = LoadProfile(np.ones(24), 0)
        out = dp.inject_drop(p, 20, 1)
        assert np.sum(out.values == 0.0) == 1

    def test_drop_bad_length(self):
        with pytest.raises(DataError):
            dp.inject_drop(LoadProfile(np.ones(24), 0), 18, 3)

    def test_positive_spike_formula(self):
        p = LoadProfile(np.full(24, 2.0), 0)
        out = dp.inject_spike(p, 5, 1, r=1.0, direction="positive")
        assert out.values[5] == 4.0

    def test_negative_spike_formula(self):
        p = LoadProfile(np.full(24, 2.0), 0)
        out = dp.inject_spike(p, 19, 1, r=0.5, direction="negative")
        assert out.values[19] == 1.0

    def test_segment_spike_locality(self):
        p = LoadProfile(np.full(24, 3.0), 0)
        out = dp.inject_spike(p, 10, 2, r=0.7, direction="positive")
        assert np.sum(out.values != p.values) == 2

    def test_midnight_wrap(self):
        p = LoadProfile(np.ones(24), 0)
        out = dp.inject_drop(p, 23, 2)
        assert out.values[23] == 0.0 and out.values[0] == 0.0

    def test_negative_values_kept_unless_clamped(self):
        p = LoadProfile(np.full(24, 2.0), 0)
        out = dp.inject_spike(p, 18, 1, r=1.5, direction="negative")
        assert out.values[18] == pytest.approx(-1.0)
        clamped = dp.inject_spike(p, 18, 1, r=1.5, direction="negative",
                                  clamp_negative=True)
        assert clamped.values[18] == 0.0

    def test_r_out_of_range(self):
        with pytest.raises(DataError, match="outside"):
            dp.inject_spike(LoadProfile(np.ones(24), 0), 5, 1, r=2.0,
                            direction="positive")


WINDOWS = UsageWindows(low_hours=(4, 5, 6, 7, 8, 9),
                       high_hours=(0, 18, 19, 20, 21, 22, 23))


def toy_profiles(n, seed=0):
    rng = np.random.default_rng(seed)
    return [LoadProfile(rng.uniform(0.2, 2.0, size=24), i) for i in range(n)]


class TestBuildDataset:
    def test_size_arithmetic(self):
        ds = dp.build_dataset(toy_profiles(1000), WINDOWS,
                              AnomalyConfig(anomaly_fraction=0.1, seed=1))
        assert len(ds) == 1100
        assert int(ds.labels.sum()) == 100

    def test_degenerate_weights(self):
        cfg = AnomalyConfig(anomaly_fraction=0.2, kind_weights={"drop": 1.0}, seed=2)
        ds = dp.build_dataset(toy_profiles(50), WINDOWS, cfg)
        assert set(k for k in ds.kinds if k != "none") == {"drop"}

    def test_deterministic(self):
        cfg = AnomalyConfig(anomaly_fraction=0.1, seed=3)
        a = dp.build_dataset(toy_profiles(100), WINDOWS, cfg)
        b = dp.build_dataset(toy_profiles(100), WINDOWS, cfg)
        assert np.array_equal(a.profiles, b.profiles) and a.kinds == b.kinds

    def test_injection_fidelity(self):
        """Every anomalous row differs from its source in exactly the injected
        window, with values matching the drop/spike formulas and legal starts."""
        profiles = toy_profiles(400, seed=7)
        cfg = AnomalyConfig(anomaly_fraction=0.25, seed=7)
        ds = dp.build_dataset(profiles, WINDOWS, cfg)
        n = len(profiles)
        for row in range(n, len(ds)):
            src = profiles[ds.day_indices[row]].values
            out = ds.profiles[row]
            kind = ds.kinds[row]
            diff = np.flatnonzero(out != src)
            assert 1 <= len(diff) <= 2
            if kind == "drop":
                assert np.all(out[diff] == 0.0)
                legal = WINDOWS.high_hours
            elif kind in ("pos_spike", "seg_pos_spike"):
                ratios = out[diff] / src[diff] - 1.0
                assert np.allclose(ratios, ratios[0])
                assert 0.5 <= ratios[0] <= 1.5
                legal = WINDOWS.low_hours
            else:
                ratios = 1.0 - out[diff] / src[diff]
                assert np.allclose(ratios, ratios[0])
                assert 0.5 <= ratios[0] <= 1.5
                legal = WINDOWS.high_hours
            # start hour of the (possibly wrapping) window is in the legal set
            if len(diff) == 1:
                assert diff[0] in legal
            else:
                a, b = diff
                start = a if (a + 1) % 24 == b % 24 else b
                assert start in legal
            if kind.startswith("seg_"):
                assert len(diff) == 2


class TestNormalize:
    def make(self, values):
        arr = np.tile(np.asarray(values, float), (24 // len(values) + 1,))[:24]
        return LabeledDataset(arr[None, :], np.array([0]), ["none"], np.array([0]))

    def test_minmax(self):
        arr = np.zeros((1, 24))
        arr[0, :3] = [0.0, 5.0, 10.0]
        ds = LabeledDataset(arr, np.array([0]), ["none"], np.array([0]))
        out, rec = dp.normalize(ds)
        assert out.profiles[0, 1] == 0.5 and out.profiles[0, 2] == 1.0
        assert (rec.vmin, rec.vmax) == (0.0, 10.0)

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        ds = LabeledDataset(rng.uniform(0, 3, (10, 24)), np.zeros(10, int),
                            ["none"] * 10, np.arange(10))
        out, rec = dp.normalize(ds)
        np.testing.assert_allclose(rec.invert(out.profiles), ds.profiles, atol=1e-12)

    def test_spikes_may_exceed_unit_range(self):
        clean = np.full((1, 24), 1.0)
        clean[0, 0] = 0.0  # range [0, 1] raw
        spiked = clean.copy()
        spiked[0, 18] = 2.5
        ds = LabeledDataset(np.vstack([clean, spiked]), np.array([0, 1]),
                            ["none", "pos_spike"], np.array([0, 0]))
        out, _ = dp.normalize(ds)
        assert out.profiles[1, 18] == 2.5

    def test_constant_series(self):
        ds = LabeledDataset(np.ones((2, 24)), np.zeros(2, int), ["none"] * 2,
                            np.arange(2))
        with pytest.raises(DataError, match="constant"):
            dp.normalize(ds)


class TestSplit:
    def build(self, n_clean=1000, n_anom=100, seed=0):
        profiles = toy_profiles(n_clean, seed)
        cfg = AnomalyConfig(anomaly_fraction=n_anom / n_clean, seed=seed)
        return dp.build_dataset(profiles, WINDOWS, cfg)

    def test_split_sizes(self):
        train, test = dp.split(self.build(), 0.8, seed=0)
        assert len(train) == 880 and len(test) == 220

    def test_stratification(self):
        ds = self.build()
        train, test = dp.split(ds, 0.8, seed=1)
        overall = ds.labels.mean()
        assert abs(train.labels.mean() - overall) < 0.01
        assert abs(test.labels.mean() - overall) < 0.01

    def test_deterministic(self):
        ds = self.build()
        a = dp.split(ds, 0.8, seed=2)
        b = dp.split(ds, 0.8, seed=2)
        assert np.array_equal(a[0].profiles, b[0].profiles)

    def test_disjoint_union(self):
        ds = self.build(n_clean=97, n_anom=13)
        train, test = dp.split(ds, 0.7, seed=3)
        assert len(train) + len(test) == len(ds)
        combined = np.vstack([train.profiles, test.profiles])
        assert np.array_equal(np.sort(combined, axis=None),
                              np.sort(ds.profiles, axis=None))

    def test_tiny_class_rejected(self):
        ds = LabeledDataset(np.random.default_rng(0).uniform(size=(3, 24)),
                            np.array([0, 0, 1]), ["none", "none", "drop"],
                            np.arange(3))
        with pytest.raises(DataError, match="class 1"):
            dp.split(ds, 0.5, seed=0)


class TestExport:
    def test_schema_and_precision(self, tmp_path):
        arr = np.zeros((1, 24))
        arr[0, 0] = 1.0 / 3.0
        ds = LabeledDataset(arr, np.array([1]), ["drop"], np.array([0]))
        out = tmp_path / "client.csv"
        dp.export_dataset_csv(ds, out)
        lines = out.read_text().splitlines()
        assert lines[0].split(",")[:2] == ["v0", "v1"]
        assert lines[0].split(",")[-2:] == ["label", "kind"]
        fields = lines[1].split(",")
        assert fields[0] == "0.333333333333"  # 12 significant digits
        assert fields[-2:] == ["1", "drop"]

    def test_byte_identical_rewrite(self, tmp_path):
        rng = np.random.default_rng(5)
        ds = LabeledDataset(rng.uniform(size=(20, 24)), np.zeros(20, int),
                            ["none"] * 20, np.arange(20))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        dp.export_dataset_csv(ds, a)
        dp.export_dataset_csv(ds, b)
        assert a.read_bytes() == b.read_bytes()


class TestAnomalyConfig:
    def test_fraction_bounds(self):
        with pytest.raises(DataError):
            AnomalyConfig(anomaly_fraction=0.0)
        with pytest.raises(DataError):
            AnomalyConfig(anomaly_fraction=1.0)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(DataError, match="sum"):
            AnomalyConfig(kind_weights={"drop": 0.5})

    def test_unknown_kind(self):
        with pytest.raises(DataError, match="unknown"):
            AnomalyConfig(kind_weights={"surge": 1.0})
