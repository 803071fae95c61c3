"""Smart-meter data pipeline: ingestion, synthesis, daily segmentation,
usage-window detection, anomaly injection, and per-client dataset assembly.

A load profile is one day of hourly consumption (24 values).  Synthetic
anomalies come in five kinds: a drop to zero, single-step positive/negative
spikes, and two-step segment spikes.  Drops and negative spikes start inside
the high-usage window, positive spikes inside the low-usage window; hour
indices are circular, so a two-step anomaly starting at hour 23 touches
hours 23 and 0 of the same profile.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_for

HOURS_PER_DAY = 24

ANOMALY_KINDS = ("drop", "pos_spike", "neg_spike", "seg_pos_spike", "seg_neg_spike")

# Average diurnal shape (kWh) used by the synthesizer: trough over hours
# 4..9, evening peak spanning midnight (18..23 plus 0).
BASE_DIURNAL_SHAPE = np.array([
    1.30, 0.90, 0.70, 0.55,
    0.35, 0.30, 0.28, 0.30, 0.35, 0.40,
    0.55, 0.65, 0.75, 0.70, 0.65, 0.70, 0.85, 1.10,
    1.50, 1.80, 1.90, 1.85, 1.70, 1.50,
])


class DataError(ValueError):
    """Ingestion or dataset-construction contract violation."""


@dataclass
class HourlySeries:
    """Hourly consumption readings for one household."""

    household_id: str
    timestamps: np.ndarray  # datetime64[h], strictly increasing, 1h spacing
    kwh: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        self.kwh = np.asarray(self.kwh, dtype=np.float64)
        if len(self.timestamps) != len(self.kwh):
            raise DataError(f"household {self.household_id}: timestamps/kwh length mismatch")
        if np.any(self.kwh < 0):
            raise DataError(f"household {self.household_id}: negative kwh reading")
        if len(self.timestamps) > 1:
            deltas = np.diff(self.timestamps).astype("timedelta64[h]").astype(int)
            if np.any(deltas != 1):
                bad = int(np.argmax(deltas != 1))
                raise DataError(
                    f"household {self.household_id}: readings must be hourly with no "
                    f"gaps (offending step after {self.timestamps[bad]})")

    def __len__(self) -> int:
        return len(self.kwh)


@dataclass
class LoadProfile:
    """One day of hourly consumption."""

    values: np.ndarray
    day_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (HOURS_PER_DAY,):
            raise DataError(f"load profile must have exactly {HOURS_PER_DAY} values, "
                            f"got shape {self.values.shape}")


@dataclass
class UsageWindows:
    """Hour indices of the low- and high-consumption periods."""

    low_hours: tuple[int, ...]
    high_hours: tuple[int, ...]

    def __post_init__(self):
        self.low_hours = tuple(sorted(int(h) for h in self.low_hours))
        self.high_hours = tuple(sorted(int(h) for h in self.high_hours))
        if not self.low_hours or not self.high_hours:
            raise DataError("usage windows must both be non-empty")
        if set(self.low_hours) & set(self.high_hours):
            raise DataError("low and high usage windows must be disjoint")


@dataclass
class AnomalyConfig:
    """Controls for synthetic anomaly injection."""

    anomaly_fraction: float = 0.10
    kind_weights: dict[str, float] = field(
        default_factory=lambda: {k: 1.0 / len(ANOMALY_KINDS) for k in ANOMALY_KINDS})
    r_range: tuple[float, float] = (0.5, 1.5)
    seed: int = 0
    clamp_negative: bool = False  # clamp (1-r)x at zero when r > 1

    def __post_init__(self):
        if not (0.0 < self.anomaly_fraction < 1.0):
            raise DataError(f"anomaly_fraction must be in (0,1), got {self.anomaly_fraction}")
        if not (0.0 < self.r_range[0] <= self.r_range[1]):
            raise DataError(f"r_range must be a positive interval, got {self.r_range}")
        unknown = set(self.kind_weights) - set(ANOMALY_KINDS)
        if unknown:
            raise DataError(f"unknown anomaly kinds: {sorted(unknown)}")
        total = sum(self.kind_weights.values())
        if not np.isclose(total, 1.0):
            raise DataError(f"kind_weights must sum to 1, got {total}")


@dataclass
class LabeledDataset:
    """Parallel arrays of profiles, binary labels, and anomaly kinds."""

    profiles: np.ndarray   # [n, 24]
    labels: np.ndarray     # [n] in {0, 1}
    kinds: list[str]       # "none" or one of ANOMALY_KINDS
    day_indices: np.ndarray

    def __post_init__(self):
        self.profiles = np.asarray(self.profiles, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.day_indices = np.asarray(self.day_indices, dtype=np.int64)
        n = len(self.profiles)
        if not (len(self.labels) == len(self.kinds) == len(self.day_indices) == n):
            raise DataError("dataset arrays must have equal length")
        for lbl, kind in zip(self.labels, self.kinds):
            if (lbl == 1) != (kind != "none"):
                raise DataError("label 1 must coincide with a non-none anomaly kind")

    def __len__(self) -> int:
        return len(self.profiles)

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.profiles[idx], self.labels[idx],
                              [self.kinds[i] for i in idx], self.day_indices[idx])


@dataclass
class ScalingRecord:
    """Min-max scaling constants of one household's clean data."""

    vmin: float
    vmax: float

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.vmin) / (self.vmax - self.vmin)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * (self.vmax - self.vmin) + self.vmin


# ---------------------------------------------------------------------------
# ingestion and synthesis

def ingest_csv(path) -> dict[str, HourlySeries]:
    """Parse an hourly-readings CSV into one series per household.

    Expected header: household_id, timestamp (ISO-8601, hour precision), kwh.
    Row numbers in error messages count data rows from 1.
    """
    rows: dict[str, list[tuple[np.datetime64, float]]] = {}
    seen: set[tuple[str, np.datetime64]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"household_id", "timestamp", "kwh"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            missing = sorted(required - set(reader.fieldnames or []))
            raise DataError(f"{path}: missing required column(s) {missing}")
        for rownum, row in enumerate(reader, start=1):
            hid = row["household_id"]
            try:
                ts = np.datetime64(row["timestamp"], "h")
            except ValueError:
                raise DataError(f"{path}: unparseable timestamp at row {rownum}: "
                                f"{row['timestamp']!r}") from None
            try:
                kwh = float(row["kwh"])
            except ValueError:
                raise DataError(f"{path}: unparseable kwh at row {rownum}") from None
            if kwh < 0:
                raise DataError(f"{path}: negative kwh at row {rownum}")
            key = (hid, ts)
            if key in seen:
                raise DataError(f"{path}: duplicate (household, timestamp) at row {rownum}")
            seen.add(key)
            rows.setdefault(hid, []).append((ts, kwh))

    out = {}
    for hid, pairs in rows.items():
        pairs.sort(key=lambda p: p[0])
        ts = np.array([p[0] for p in pairs], dtype="datetime64[h]")
        kwh = np.array([p[1] for p in pairs])
        out[hid] = HourlySeries(hid, ts, kwh)
    return out


def synthesize_household(days: int, seed: int, household_id: str = "h0",
                         base_shape: np.ndarray | None = None,
                         start: str = "2021-01-04T00") -> HourlySeries:
    """Generate a plausible household series: diurnal shape with a morning
    trough and evening peak, weekend uplift, and multiplicative noise.
    """
    if days < 1:
        raise DataError(f"days must be >= 1, got {days}")
    shape = BASE_DIURNAL_SHAPE if base_shape is None else np.asarray(base_shape, float)
    if shape.shape != (HOURS_PER_DAY,):
        raise DataError("base_shape must have 24 entries")
    rng = rng_for(seed, "synth", household_id)

    scale = rng.uniform(0.7, 1.4)
    hour_jitter = rng.uniform(0.95, 1.05, size=HOURS_PER_DAY)
    daily = shape * scale * hour_jitter

    day_idx = np.arange(days)
    weekly = np.where(day_idx % 7 >= 5, 1.15, 1.0)  # start date is a Monday
    values = np.repeat(weekly, HOURS_PER_DAY) * np.tile(daily, days)
    noise = rng.lognormal(mean=0.0, sigma=0.12, size=values.size)
    values = values * noise

    t0 = np.datetime64(start, "h")
    timestamps = t0 + np.arange(values.size).astype("timedelta64[h]")
    return HourlySeries(household_id, timestamps, values)


def segment_daily(series: HourlySeries) -> list[LoadProfile]:
    """Split into 24-step daily profiles; a trailing partial day is dropped."""
    n_days = len(series) // HOURS_PER_DAY
    return [LoadProfile(series.kwh[i * HOURS_PER_DAY:(i + 1) * HOURS_PER_DAY], i)
            for i in range(n_days)]


# ---------------------------------------------------------------------------
# usage windows

def _stack(profiles: list[LoadProfile]) -> np.ndarray:
    return np.stack([p.values for p in profiles])


def _best_circular_window(hour_means: np.ndarray, extremum: int, k: int,
                          maximize: bool) -> tuple[int, ...]:
    """The length-k circular window containing the extremum hour whose mean
    is most extreme; ties resolved toward the lower start hour."""
    best_start, best_mean = None, None
    for offset in range(k):
        start = (extremum - offset) % HOURS_PER_DAY
        hours = (start + np.arange(k)) % HOURS_PER_DAY
        m = hour_means[hours].mean()
        better = (best_mean is None
                  or (m > best_mean if maximize else m < best_mean)
                  or (m == best_mean and start < best_start))
        if better:
            best_start, best_mean = start, m
    return tuple(sorted(int(h) for h in (best_start + np.arange(k)) % HOURS_PER_DAY))


def detect_usage_windows(profiles: list[LoadProfile], k_low: int = 6,
                         k_high: int = 7) -> UsageWindows:
    """Low/high usage windows as contiguous circular hour ranges around the
    extreme-mean hours."""
    if not profiles:
        raise DataError("cannot detect usage windows from an empty profile set")
    hour_means = _stack(profiles).mean(axis=0)
    if hour_means.max() == hour_means.min():
        raise DataError("degenerate: no distinct windows (constant hourly means)")
    low = _best_circular_window(hour_means, int(np.argmin(hour_means)), k_low, maximize=False)
    high = _best_circular_window(hour_means, int(np.argmax(hour_means)), k_high, maximize=True)
    if set(low) & set(high):
        raise DataError("degenerate: low and high windows overlap")
    return UsageWindows(low_hours=low, high_hours=high)


# ---------------------------------------------------------------------------
# anomaly injection

def _window_positions(start: int, length: int) -> np.ndarray:
    return (start + np.arange(length)) % HOURS_PER_DAY


def inject_drop(profile: LoadProfile, start: int, length: int) -> LoadProfile:
    """Zero out ``length`` consecutive hours starting at ``start`` (circular)."""
    if length not in (1, 2):
        raise DataError(f"drop length must be 1 or 2, got {length}")
    values = profile.values.copy()
    values[_window_positions(start, length)] = 0.0
    return LoadProfile(values, profile.day_index)


def inject_spike(profile: LoadProfile, start: int, length: int, r: float,
                 direction: str, r_range: tuple[float, float] = (0.5, 1.5),
                 clamp_negative: bool = False) -> LoadProfile:
    """Scale ``length`` consecutive hours by (1+r) or (1-r).

    A negative spike with r > 1 yields negative consumption; it is kept
    unless ``clamp_negative`` is set.
    """
    if length not in (1, 2):
        raise DataError(f"spike length must be 1 or 2, got {length}")
    if not (r_range[0] <= r <= r_range[1]):
        raise DataError(f"spike amplitude r={r} outside allowed range {r_range}")
    if direction not in ("positive", "negative"):
        raise DataError(f"spike direction must be positive or negative, got {direction!r}")
    values = profile.values.copy()
    pos = _window_positions(start, length)
    factor = (1.0 + r) if direction == "positive" else (1.0 - r)
    values[pos] = values[pos] * factor
    if clamp_negative and direction == "negative":
        values[pos] = np.maximum(values[pos], 0.0)
    return LoadProfile(values, profile.day_index)


def _inject_kind(profile: LoadProfile, kind: str, windows: UsageWindows,
                 cfg: AnomalyConfig, rng: np.random.Generator) -> LoadProfile:
    if kind == "drop":
        start = int(rng.choice(windows.high_hours))
        length = int(rng.integers(1, 3))
        return inject_drop(profile, start, length)
    length = 2 if kind.startswith("seg_") else 1
    direction = "positive" if "pos" in kind else "negative"
    pool = windows.low_hours if direction == "positive" else windows.high_hours
    start = int(rng.choice(pool))
    r = float(rng.uniform(*cfg.r_range))
    return inject_spike(profile, start, length, r, direction,
                        r_range=cfg.r_range, clamp_negative=cfg.clamp_negative)


def build_dataset(profiles: list[LoadProfile], windows: UsageWindows,
                  cfg: AnomalyConfig) -> LabeledDataset:
    """Originals labeled 0 plus anomalous copies of a seeded random subset."""
    if not profiles:
        raise DataError("cannot build a dataset from zero profiles")
    rng = rng_for(cfg.seed, "inject")
    n = len(profiles)
    n_anom = int(round(cfg.anomaly_fraction * n))
    source_idx = np.sort(rng.choice(n, size=n_anom, replace=False))
    kinds_pool = list(cfg.kind_weights.keys())
    weights = np.array([cfg.kind_weights[k] for k in kinds_pool])

    rows = [p.values for p in profiles]
    labels = [0] * n
    kinds = ["none"] * n
    day_indices = [p.day_index for p in profiles]
    for i in source_idx:
        kind = str(rng.choice(kinds_pool, p=weights))
        injected = _inject_kind(profiles[i], kind, windows, cfg, rng)
        rows.append(injected.values)
        labels.append(1)
        kinds.append(kind)
        day_indices.append(profiles[i].day_index)
    return LabeledDataset(np.stack(rows), np.array(labels), kinds, np.array(day_indices))


# ---------------------------------------------------------------------------
# scaling and splitting

def normalize(dataset: LabeledDataset) -> tuple[LabeledDataset, ScalingRecord]:
    """Min-max scale by the clean rows' range; spikes may exceed [0, 1]."""
    clean = dataset.profiles[dataset.labels == 0]
    vmin, vmax = float(clean.min()), float(clean.max())
    if vmax == vmin:
        raise DataError("constant series: min equals max, cannot scale")
    record = ScalingRecord(vmin, vmax)
    return LabeledDataset(record.apply(dataset.profiles), dataset.labels,
                          list(dataset.kinds), dataset.day_indices), record


def split(dataset: LabeledDataset, train_fraction: float,
          seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/test split; disjoint, union equals the input."""
    if not (0.0 < train_fraction < 1.0):
        raise DataError(f"train_fraction must be in (0,1), got {train_fraction}")
    rng = rng_for(seed, "split")
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for label in (0, 1):
        idx = np.flatnonzero(dataset.labels == label)
        if len(idx) < 2:
            raise DataError(f"class {label} has {len(idx)} sample(s); need at least 2 to split")
        perm = rng.permutation(idx)
        n_train = int(round(train_fraction * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 1)  # keep both sides non-empty
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return dataset.subset(tr), dataset.subset(te)


# ---------------------------------------------------------------------------
# export

def export_dataset_csv(dataset: LabeledDataset, path) -> None:
    """Write v0..v23,label,kind rows with 12-significant-digit decimals."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"v{i}" for i in range(HOURS_PER_DAY)] + ["label", "kind"])
        for row, label, kind in zip(dataset.profiles, dataset.labels, dataset.kinds):
            writer.writerow([f"{v:.12g}" for v in row] + [int(label), kind])
