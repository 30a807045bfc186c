"""Per-slice client datasets: synthetic generation, CSV ingestion, scaling.

Each client in a slice federation owns an hourly time series with three model
inputs (aggregated slice traffic, channel quality, MIMO full-rank usage) and
one output (CPU load percentage). Synthetic clients follow a 24-hour diurnal
traffic cycle shaped by a per-client profile so that the federation is
measurably non-IID. Real data arrives as CSV with one column per OTT
application; the slice traffic feature is the sum of the slice's columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataParseError, DataSchemaError, GenerationError

OTT_COLUMNS = (
    "Apple",
    "Facebook",
    "Facebook Messages",
    "Facebook Video",
    "HTTPS",
    "Instagram",
    "Netflix",
    "QUIC",
    "Whatsapp",
    "Youtube",
)
CQI_COLUMN = "CQI"
MIMO_COLUMN = "MIMO_FI"
TARGET_COLUMN = "CPU_Load"
CSV_COLUMNS = OTT_COLUMNS + (CQI_COLUMN, MIMO_COLUMN, TARGET_COLUMN)

FEATURE_NAMES = ("slice_traffic", CQI_COLUMN, MIMO_COLUMN)
N_FEATURES = len(FEATURE_NAMES)

CQI_MAX = 15.0
CPU_MAX = 100.0


@dataclass(frozen=True)
class SliceSpec:
    """A logical network slice and the OTT applications aggregated into it."""

    name: str
    ott_apps: tuple[str, ...]

    def __post_init__(self) -> None:
        unknown = [a for a in self.ott_apps if a not in OTT_COLUMNS]
        if unknown:
            raise ConfigError(f"unknown OTT applications {unknown} in slice {self.name!r}")
        object.__setattr__(self, "ott_apps", tuple(self.ott_apps))


SLICES = (
    SliceSpec("eMBB", ("Netflix", "Youtube", "Facebook Video")),
    SliceSpec("SocialMedia", ("Facebook", "Facebook Messages", "Whatsapp", "Instagram")),
    SliceSpec("Browsing", ("Apple", "HTTPS", "QUIC")),
)
SLICE_BY_NAME = {s.name: s for s in SLICES}


def slice_by_name(name: str) -> SliceSpec:
    try:
        return SLICE_BY_NAME[name]
    except KeyError:
        raise ConfigError(f"unknown slice {name!r}, expected one of {sorted(SLICE_BY_NAME)}") from None


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-feature and target min-max parameters fitted on a train split.

    Constant columns (span 0) map to 0 on transform and back to their minimum
    on inverse transform.
    """

    feature_min: np.ndarray
    feature_span: np.ndarray
    target_min: float
    target_span: float

    @classmethod
    def fit(cls, features: np.ndarray, targets: np.ndarray) -> "MinMaxScaler":
        fmin = features.min(axis=0)
        fspan = features.max(axis=0) - fmin
        tmin = float(targets.min())
        tspan = float(targets.max()) - tmin
        return cls(fmin, fspan, tmin, tspan)

    def transform_features(self, features: np.ndarray) -> np.ndarray:
        span = np.where(self.feature_span > 0.0, self.feature_span, 1.0)
        scaled = (features - self.feature_min) / span
        return np.where(self.feature_span > 0.0, scaled, 0.0)

    def inverse_features(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * self.feature_span + self.feature_min

    def transform_target(self, targets: np.ndarray) -> np.ndarray:
        if self.target_span > 0.0:
            return (targets - self.target_min) / self.target_span
        return np.zeros_like(np.asarray(targets, dtype=np.float64))

    def inverse_target(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * self.target_span + self.target_min


@dataclass(frozen=True)
class ClientDataset:
    """One client's local samples for one slice, with split, scaler and pools.

    `features`/`targets` hold raw units; `scaled_*` hold the min-max view used
    for training and attribution. The split is chronological and the
    attribution pool is a seeded permutation of the train rows, fixed for the
    dataset's lifetime.
    """

    client_id: int
    slice_name: str
    features: np.ndarray
    targets: np.ndarray
    train_indices: np.ndarray
    test_indices: np.ndarray
    attribution_indices: np.ndarray
    scaler: MinMaxScaler
    scaled_features: np.ndarray
    scaled_targets: np.ndarray

    def __post_init__(self) -> None:
        for name in ("features", "targets", "train_indices", "test_indices",
                     "attribution_indices", "scaled_features", "scaled_targets"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def train_features(self) -> np.ndarray:
        return self.scaled_features[self.train_indices]

    @property
    def train_targets(self) -> np.ndarray:
        return self.scaled_targets[self.train_indices]

    @property
    def test_features(self) -> np.ndarray:
        return self.scaled_features[self.test_indices]

    @property
    def test_targets(self) -> np.ndarray:
        return self.scaled_targets[self.test_indices]

    @property
    def attribution_features(self) -> np.ndarray:
        return self.scaled_features[self.attribution_indices]


def make_dataset(
    client_id: int,
    slice_name: str,
    features: np.ndarray,
    targets: np.ndarray,
    shuffle_rng: np.random.Generator,
    train_fraction: float = 0.8,
) -> ClientDataset:
    """Chronological train/test split, train-only scaler fit, seeded pool order."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1)
    if features.ndim != 2 or features.shape[0] != targets.shape[0]:
        raise ConfigError("features and targets must have matching row counts")
    n = features.shape[0]
    if n < 2:
        raise ConfigError("a dataset needs at least 2 rows to split")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")

    n_train = min(max(int(round(n * train_fraction)), 1), n - 1)
    train_idx = np.arange(n_train)
    test_idx = np.arange(n_train, n)
    scaler = MinMaxScaler.fit(features[train_idx], targets[train_idx])
    return ClientDataset(
        client_id=client_id,
        slice_name=slice_name,
        features=features,
        targets=targets,
        train_indices=train_idx,
        test_indices=test_idx,
        attribution_indices=shuffle_rng.permutation(train_idx),
        scaler=scaler,
        scaled_features=scaler.transform_features(features),
        scaled_targets=scaler.transform_target(targets),
    )


@dataclass(frozen=True)
class NonIidProfile:
    """Generative knobs that make one synthetic client's data distinct."""

    client_id: int
    traffic_scale: float
    diurnal_phase: float
    cqi_mean: float
    noise_level: float
    mix_weights: tuple[float, float, float]
    diurnal_amplitude: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "mix_weights", tuple(float(w) for w in self.mix_weights))


def default_profiles(n_clients: int, seed: int) -> list[NonIidProfile]:
    """Deterministic zone profiles: 4x traffic-scale spread, staggered phases.

    Traffic scales and diurnal phases vary strongly across clients, so raw
    traffic marginals are far apart (covariate non-IIDness), while the
    CPU-load mix keeps each feature's contribution budget comparable across
    zones; that keeps a size-weighted federation learnable by a tiny shared
    model at desk scale.
    """
    if n_clients < 1:
        raise ConfigError("need at least one client profile")
    rng = np.random.default_rng(seed)
    profiles = []
    cqi_mean = 8.0
    mean_mimo = 25.0 + 60.0 * cqi_mean / CQI_MAX
    budget = 70.0
    for k in range(n_clients):
        u = k / max(n_clients - 1, 1)
        traffic_scale = 4.0 ** u
        phase = 24.0 * k / n_clients + float(rng.uniform(-1.0, 1.0))
        shares = rng.dirichlet((400.0, 400.0, 400.0))
        mix = (
            budget * shares[0] / traffic_scale,
            budget * shares[1] / cqi_mean,
            budget * shares[2] / mean_mimo,
        )
        profiles.append(NonIidProfile(k, traffic_scale, phase, cqi_mean, 3.1, mix))
    return profiles


def _split_seed(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    signal_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(signal_ss), np.random.default_rng(shuffle_ss)


def generate_client_table(
    profile: NonIidProfile,
    slice_spec: SliceSpec,
    n_samples: int,
    seed: int,
) -> dict[str, np.ndarray]:
    """Full canonical-schema columns for one synthetic client of one slice.

    The slice's aggregate traffic follows a diurnal sinusoid scaled by the
    profile and is split across the slice's OTT applications with fixed
    per-client proportions; applications outside the slice carry no traffic.
    CPU load is the profile's mix of the three features plus heteroscedastic
    noise, clipped to [0, 100].
    """
    if n_samples < 2:
        raise GenerationError("need at least 2 samples per client")
    if profile.traffic_scale <= 0.0:
        raise GenerationError(f"client {profile.client_id}: traffic_scale must be positive")
    if profile.noise_level < 0.0:
        raise GenerationError(f"client {profile.client_id}: noise_level cannot be negative")

    rng, _ = _split_seed(seed)
    hours = np.arange(n_samples)
    base = 1.0 + profile.diurnal_amplitude * np.sin(
        2.0 * np.pi * (hours + profile.diurnal_phase) / 24.0
    )
    traffic = profile.traffic_scale * base
    traffic = traffic + profile.traffic_scale * 0.05 * profile.noise_level * rng.standard_normal(n_samples)
    traffic = np.maximum(traffic, 0.0)

    cqi = np.clip(profile.cqi_mean + 1.5 * rng.standard_normal(n_samples), 0.0, CQI_MAX)
    mimo = np.clip(
        100.0 * (0.25 + 0.6 * cqi / CQI_MAX) + 8.0 * rng.standard_normal(n_samples),
        0.0,
        100.0,
    )

    w_traffic, w_cqi, w_mimo = profile.mix_weights
    signal = w_traffic * traffic + w_cqi * cqi + w_mimo * mimo
    # Noise spread rises and falls with the traffic cycle (heteroscedastic).
    noise_sd = profile.noise_level * (0.5 + traffic / (2.0 * profile.traffic_scale))
    cpu = np.clip(signal + noise_sd * rng.standard_normal(n_samples), 0.0, CPU_MAX)

    app_shares = rng.dirichlet(np.full(len(slice_spec.ott_apps), 2.0))
    table: dict[str, np.ndarray] = {}
    for col in OTT_COLUMNS:
        table[col] = np.zeros(n_samples)
    for app, share in zip(slice_spec.ott_apps, app_shares):
        table[app] = traffic * share
    table[CQI_COLUMN] = cqi
    table[MIMO_COLUMN] = mimo
    table[TARGET_COLUMN] = cpu
    return table


def aggregate_table(table: dict[str, np.ndarray], slice_spec: SliceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Reduce a full column table to the (slice_traffic, CQI, MIMO) matrix + target."""
    n = len(table[TARGET_COLUMN])
    slice_traffic = np.zeros(n)
    for app in slice_spec.ott_apps:
        slice_traffic = slice_traffic + table[app]
    features = np.column_stack([slice_traffic, table[CQI_COLUMN], table[MIMO_COLUMN]])
    return features, np.asarray(table[TARGET_COLUMN], dtype=np.float64)


def generate_client(
    profile: NonIidProfile,
    slice_spec: SliceSpec,
    n_samples: int,
    seed: int,
    train_fraction: float = 0.8,
) -> ClientDataset:
    """Synthetic ClientDataset equal to exporting the table and re-ingesting it."""
    table = generate_client_table(profile, slice_spec, n_samples, seed)
    features, targets = aggregate_table(table, slice_spec)
    _, shuffle_rng = _split_seed(seed)
    return make_dataset(
        profile.client_id, slice_spec.name, features, targets, shuffle_rng, train_fraction
    )


def write_client_csv(table: dict[str, np.ndarray], path: str | Path) -> None:
    """Write a full column table in the canonical CSV schema (17 digit floats)."""
    path = Path(path)
    n = len(table[TARGET_COLUMN])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(n):
            writer.writerow([f"{float(table[col][i]):.17g}" for col in CSV_COLUMNS])


def read_table_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a canonical CSV into a column table, validating schema and cells."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataSchemaError(f"{path}: file is empty") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataSchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        col_pos = {c: header.index(c) for c in CSV_COLUMNS}
        columns: dict[str, list[float]] = {c: [] for c in CSV_COLUMNS}
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            for col, pos in col_pos.items():
                cell = row[pos] if pos < len(row) else ""
                try:
                    columns[col].append(float(cell))
                except ValueError:
                    raise DataParseError(
                        f"{path}: row {row_number}, column {col!r}: cannot parse {cell!r}"
                    ) from None
    return {c: np.asarray(v, dtype=np.float64) for c, v in columns.items()}


def ingest_csv(
    path: str | Path,
    slice_spec: SliceSpec,
    client_id: int | None = None,
    seed: int = 0,
    train_fraction: float = 0.8,
) -> ClientDataset:
    """Load a canonical CSV and aggregate it into one slice's ClientDataset."""
    path = Path(path)
    table = read_table_csv(path)
    features, targets = aggregate_table(table, slice_spec)
    if client_id is None:
        digits = "".join(ch for ch in path.stem if ch.isdigit())
        client_id = int(digits) if digits else 0
    _, shuffle_rng = _split_seed(seed)
    return make_dataset(client_id, slice_spec.name, features, targets, shuffle_rng, train_fraction)
