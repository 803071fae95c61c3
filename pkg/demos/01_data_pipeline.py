"""Walk through the data pipeline: synthesize a household, segment it into
daily load profiles, detect the usage windows, and inject each anomaly kind.

Run:  python3 demos/01_data_pipeline.py
"""

import numpy as np

from fedmeter import data as dp

# one synthetic household, one year of hourly readings
series = dp.synthesize_household(days=365, seed=7, household_id="demo")
print(f"synthesized {len(series)} hourly readings "
      f"(mean {series.kwh.mean():.3f} kWh, max {series.kwh.max():.3f} kWh)")

profiles = dp.segment_daily(series)
print(f"segmented into {len(profiles)} daily load profiles of 24 steps")

# the synthesizer's diurnal shape has a morning trough and an evening peak
windows = dp.detect_usage_windows(profiles)
print(f"low-usage hours:  {windows.low_hours}")
print(f"high-usage hours: {windows.high_hours}")

hour_means = np.stack([p.values for p in profiles]).mean(axis=0)
bar = lambda v: "#" * int(round(v / hour_means.max() * 40))
print("\nmean consumption by hour:")
for hour, value in enumerate(hour_means):
    marker = " <- low" if hour in windows.low_hours else (
        " <- high" if hour in windows.high_hours else "")
    print(f"  {hour:02d}h {value:6.3f} {bar(value)}{marker}")

# inject one of each anomaly kind into the same day for comparison
day = profiles[100]
print(f"\nday 100 original:            {np.round(day.values, 2)}")
drop = dp.inject_drop(day, start=19, length=2)
print(f"drop at 19h-20h:             {np.round(drop.values, 2)}")
spike = dp.inject_spike(day, start=6, length=1, r=1.2, direction="positive")
print(f"positive spike at 6h r=1.2:  {np.round(spike.values, 2)}")
dip = dp.inject_spike(day, start=20, length=2, r=1.4, direction="negative")
print(f"negative segment spike 20h:  {np.round(dip.values, 2)}  (negative kept)")

# assemble the labeled dataset the classifiers train on
cfg = dp.AnomalyConfig(anomaly_fraction=0.10, seed=7)
dataset = dp.build_dataset(profiles, windows, cfg)
normalized, scaling = dp.normalize(dataset)
train, test = dp.split(normalized, train_fraction=0.8, seed=7)
print(f"\ndataset: {len(dataset)} samples ({int(dataset.labels.sum())} anomalous), "
      f"scaled by [{scaling.vmin:.3f}, {scaling.vmax:.3f}] kWh")
print(f"split: {len(train)} train / {len(test)} test, "
      f"anomaly share {train.labels.mean():.3f} / {test.labels.mean():.3f}")
