import numpy as np
import pytest

from fedslice.data import (
    CSV_COLUMNS,
    MinMaxScaler,
    NonIidProfile,
    OTT_COLUMNS,
    SLICES,
    SliceSpec,
    aggregate_table,
    default_profiles,
    generate_client,
    generate_client_table,
    ingest_csv,
    make_dataset,
    read_table_csv,
    slice_by_name,
    write_client_csv,
)
from fedslice.errors import ConfigError, DataParseError, DataSchemaError, GenerationError

EMBB = slice_by_name("eMBB")


def ks_statistic(a, b):
    """Two-sample Kolmogorov-Smirnov statistic, computed from scratch."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.shape[0]
    fb = np.searchsorted(b, grid, side="right") / b.shape[0]
    return float(np.max(np.abs(fa - fb)))


def profile(**overrides):
    base = dict(
        client_id=0,
        traffic_scale=2.0,
        diurnal_phase=3.0,
        cqi_mean=8.0,
        noise_level=2.0,
        mix_weights=(10.0, 2.0, 0.4),
    )
    base.update(overrides)
    return NonIidProfile(**base)


class TestSlices:
    def test_three_slices_partition_the_ott_apps(self):
        all_apps = [app for s in SLICES for app in s.ott_apps]
        assert sorted(all_apps) == sorted(OTT_COLUMNS)
        assert [s.name for s in SLICES] == ["eMBB", "SocialMedia", "Browsing"]

    def test_embb_apps(self):
        assert set(EMBB.ott_apps) == {"Netflix", "Youtube", "Facebook Video"}

    def test_unknown_app_rejected(self):
        with pytest.raises(ConfigError):
            SliceSpec("custom", ("Netflix", "MySpace"))

    def test_unknown_slice_name(self):
        with pytest.raises(ConfigError):
            slice_by_name("URLLC")


class TestGenerator:
    def test_same_seed_is_identical(self):
        a = generate_client(profile(), EMBB, 100, seed=5)
        b = generate_client(profile(), EMBB, 100, seed=5)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.targets, b.targets)
        assert np.array_equal(a.attribution_indices, b.attribution_indices)

    def test_constant_traffic_maps_straight_to_cpu(self):
        # No diurnal swing, no noise, CPU driven only by traffic.
        p = profile(traffic_scale=42.0, noise_level=0.0,
                    mix_weights=(1.0, 0.0, 0.0), diurnal_amplitude=0.0)
        ds = generate_client(p, EMBB, 50, seed=1)
        assert np.array_equal(ds.targets, np.full(50, 42.0))
        assert np.array_equal(ds.features[:, 0], np.full(50, 42.0))

    def test_scale_difference_separates_traffic_marginals(self):
        a = generate_client(profile(traffic_scale=1.0), EMBB, 1000, seed=3)
        b = generate_client(profile(client_id=1, traffic_scale=4.0), EMBB, 1000, seed=4)
        assert ks_statistic(a.features[:, 0], b.features[:, 0]) > 0.5

    def test_zero_scale_profile_rejected(self):
        with pytest.raises(GenerationError):
            generate_client(profile(traffic_scale=0.0), EMBB, 50, seed=1)

    def test_negative_noise_rejected(self):
        with pytest.raises(GenerationError):
            generate_client(profile(noise_level=-1.0), EMBB, 50, seed=1)

    def test_too_few_samples_rejected(self):
        with pytest.raises(GenerationError):
            generate_client(profile(), EMBB, 1, seed=1)

    def test_physical_ranges(self):
        ds = generate_client(profile(), EMBB, 500, seed=9)
        assert np.all(ds.features[:, 0] >= 0.0)
        assert np.all((ds.features[:, 1] >= 0.0) & (ds.features[:, 1] <= 15.0))
        assert np.all((ds.features[:, 2] >= 0.0) & (ds.features[:, 2] <= 100.0))
        assert np.all((ds.targets >= 0.0) & (ds.targets <= 100.0))


class TestDefaultProfiles:
    def test_profiles_are_pairwise_distinct(self):
        profiles = default_profiles(10, seed=42)
        seen = {(p.traffic_scale, p.diurnal_phase) for p in profiles}
        assert len(seen) == 10

    def test_default_federation_is_measurably_non_iid(self):
        profiles = default_profiles(10, seed=42)
        datasets = [generate_client(p, EMBB, 1000, seed=100 + k)
                    for k, p in enumerate(profiles)]
        stats = [
            ks_statistic(datasets[i].features[:, 0], datasets[j].features[:, 0])
            for i in range(10) for j in range(i + 1, 10)
        ]
        assert max(stats) > 0.3

    def test_zero_clients_rejected(self):
        with pytest.raises(ConfigError):
            default_profiles(0, seed=42)


class TestScaler:
    def test_min_max_definition(self):
        features = np.array([[0.0], [5.0], [10.0]])
        scaler = MinMaxScaler.fit(features, np.array([0.0, 1.0, 2.0]))
        assert np.array_equal(scaler.transform_features(features)[:, 0], [0.0, 0.5, 1.0])

    def test_constant_column_maps_to_zero(self):
        features = np.array([[7.0], [7.0], [7.0]])
        scaler = MinMaxScaler.fit(features, np.array([1.0, 2.0, 3.0]))
        assert np.array_equal(scaler.transform_features(features)[:, 0], [0.0, 0.0, 0.0])
        assert np.array_equal(scaler.inverse_features(np.zeros((3, 1)))[:, 0], [7.0, 7.0, 7.0])

    def test_roundtrip_identity(self, rng):
        features = rng.uniform(-10, 30, (40, 3))
        targets = rng.uniform(0, 100, 40)
        scaler = MinMaxScaler.fit(features, targets)
        back = scaler.inverse_features(scaler.transform_features(features))
        assert np.allclose(back, features, rtol=0, atol=1e-12)
        back_t = scaler.inverse_target(scaler.transform_target(targets))
        assert np.allclose(back_t, targets, rtol=0, atol=1e-12)

    def test_fit_ignores_test_rows(self, rng):
        features = rng.uniform(0, 1, (50, 3))
        targets = rng.uniform(0, 100, 50)
        ds_plain = make_dataset(0, "eMBB", features, targets, np.random.default_rng(1))
        poisoned = features.copy()
        poisoned[-1] = [1e9, -1e9, 1e9]  # last row is in the test split
        ds_poisoned = make_dataset(0, "eMBB", poisoned, targets, np.random.default_rng(1))
        assert np.array_equal(ds_plain.scaler.feature_min, ds_poisoned.scaler.feature_min)
        assert np.array_equal(ds_plain.scaler.feature_span, ds_poisoned.scaler.feature_span)


class TestSplit:
    def test_chronological_disjoint_cover(self, rng):
        ds = make_dataset(0, "eMBB", rng.uniform(0, 1, (100, 3)),
                          rng.uniform(0, 100, 100), np.random.default_rng(0))
        assert np.array_equal(ds.train_indices, np.arange(80))
        assert np.array_equal(ds.test_indices, np.arange(80, 100))
        assert set(ds.train_indices) & set(ds.test_indices) == set()

    def test_train_split_scales_into_unit_interval(self):
        ds = generate_client(profile(), EMBB, 400, seed=11)
        train_feats = ds.train_features
        train_targets = ds.train_targets
        assert np.all((train_feats >= 0.0) & (train_feats <= 1.0))
        assert np.all((train_targets >= 0.0) & (train_targets <= 1.0))

    def test_attribution_pool_is_a_train_permutation(self):
        ds = generate_client(profile(), EMBB, 100, seed=12)
        assert sorted(ds.attribution_indices) == sorted(ds.train_indices)


class TestCsv:
    def test_handcrafted_rows_aggregate_exactly(self, tmp_path):
        header = ",".join(CSV_COLUMNS)
        # Columns: Apple,Facebook,Facebook Messages,Facebook Video,HTTPS,
        #          Instagram,Netflix,QUIC,Whatsapp,Youtube,CQI,MIMO_FI,CPU_Load
        rows = [
            "1,2,3,4,5,6,7,8,9,10,11,12,13",
            "0,0,0,1.5,0,0,2.5,0,0,3.0,9.0,55.0,40.0",
            "1,1,1,1,1,1,1,1,1,1,7.0,50.0,30.0",
        ]
        path = tmp_path / "client.csv"
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        ds = ingest_csv(path, EMBB, client_id=0)
        # eMBB traffic = Netflix + Youtube + Facebook Video.
        expected = np.array([
            [7.0 + 10.0 + 4.0, 11.0, 12.0],
            [2.5 + 3.0 + 1.5, 9.0, 55.0],
            [3.0, 7.0, 50.0],
        ])
        assert np.array_equal(ds.features, expected)
        assert np.array_equal(ds.targets, [13.0, 40.0, 30.0])

    def test_zero_ott_columns_give_zero_traffic(self, tmp_path):
        header = ",".join(CSV_COLUMNS)
        rows = ["0,0,0,0,0,0,0,0,0,0,8.0,50.0,20.0"] * 3
        path = tmp_path / "client.csv"
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        ds = ingest_csv(path, EMBB, client_id=0)
        assert np.array_equal(ds.features[:, 0], np.zeros(3))

    def test_missing_column_names_the_column(self, tmp_path):
        cols = [c for c in CSV_COLUMNS if c != "CQI"]
        path = tmp_path / "client.csv"
        path.write_text(",".join(cols) + "\n" + ",".join("1" * len(cols)) + "\n")
        with pytest.raises(DataSchemaError, match="CQI"):
            ingest_csv(path, EMBB)

    def test_bad_cell_reports_row_number(self, tmp_path):
        header = ",".join(CSV_COLUMNS)
        good = ",".join(["1"] * 13)
        bad = ",".join(["1"] * 10 + ["oops", "1", "1"])
        path = tmp_path / "client.csv"
        path.write_text(header + "\n" + good + "\n" + bad + "\n")
        with pytest.raises(DataParseError, match="row 3"):
            ingest_csv(path, EMBB)

    def test_empty_file_is_schema_error(self, tmp_path):
        path = tmp_path / "client.csv"
        path.write_text("")
        with pytest.raises(DataSchemaError):
            ingest_csv(path, EMBB)

    def test_export_then_ingest_roundtrip(self, tmp_path):
        p = profile(client_id=3)
        table = generate_client_table(p, EMBB, 120, seed=21)
        path = tmp_path / "client03_eMBB.csv"
        write_client_csv(table, path)

        direct = generate_client(p, EMBB, 120, seed=21)
        ingested = ingest_csv(path, EMBB, client_id=3, seed=21)
        assert np.array_equal(direct.features, ingested.features)
        assert np.array_equal(direct.targets, ingested.targets)
        assert np.array_equal(direct.attribution_indices, ingested.attribution_indices)

        re_read = read_table_csv(path)
        for col in CSV_COLUMNS:
            assert np.array_equal(re_read[col], table[col])

    def test_client_id_parsed_from_filename(self, tmp_path):
        table = generate_client_table(profile(), EMBB, 10, seed=2)
        path = tmp_path / "client07_eMBB.csv"
        write_client_csv(table, path)
        assert ingest_csv(path, EMBB).client_id == 7

    def test_aggregate_matches_row_sum_oracle(self, rng):
        table = generate_client_table(profile(), EMBB, 60, seed=14)
        features, _ = aggregate_table(table, EMBB)
        for i in range(60):
            expected = sum(float(table[app][i]) for app in EMBB.ott_apps)
            assert features[i, 0] == pytest.approx(expected, abs=1e-12)
